#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sasatr/config.hpp"
#include "sasatr/io.hpp"
#include "sasatr/latent.hpp"
#include "sasatr/nn/serialize.hpp"
#include "sasatr/plot.hpp"
#include "sasatr/stats.hpp"
#include "sasatr/synth.hpp"
#include "sasatr/trainer.hpp"

// The experiment grid: data generation, pilots, training, evaluation,
// paired comparison and latent analysis, all rooted in one run directory.
namespace sasatr::lab {

namespace fs = std::filesystem;
using config::ExperimentConfig;
using Logger = train::Logger;

struct Layout {
  fs::path root;

  fs::path resolved() const { return root / "resolved.ini"; }
  fs::path data() const { return root / "data"; }
  fs::path manifest() const { return data() / "manifest.tsv"; }
  fs::path fingerprint() const { return data() / "synth.ini"; }
  fs::path model_dir(const ReprSet& r) const { return root / "models" / r.name(); }
  fs::path model_file(const ReprSet& r) const { return model_dir(r) / "model.cnet"; }
  fs::path eval_dir() const { return root / "eval"; }
  fs::path compare_dir() const { return root / "compare"; }
  fs::path analysis_dir() const { return root / "analysis"; }
  fs::path summary() const { return root / "summary.tsv"; }
};

/// Runs one named step; failures keep their type and gain the step name.
template <class F>
auto step(const std::string& name, const Logger& log, F&& f) -> decltype(f()) {
  if (log) log("== " + name);
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(name + ": " + e.where(), e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(name + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(name + ": " + e.what());
  } catch (const Error& e) {
    throw Error(name + ": " + e.what());
  }
}

inline void write_resolved(const ExperimentConfig& c) {
  io::write_file_atomic(Layout{c.out}.resolved(), config::encode(c));
}

// ---- data -----------------------------------------------------------------------

inline std::string synth_fingerprint(const ExperimentConfig& c) {
  const auto text = config::encode(c);
  const auto b = text.find("\n[synth]");
  const auto e = text.find("\n[train]");
  return "seed = " + std::to_string(c.seed) + "\n" + text.substr(b, e - b) + "\n";
}

/// Generates the dataset unless the run directory already holds one made
/// from the same synth settings.
inline std::vector<ChipRecord> cmd_synth(const ExperimentConfig& c, const Logger& log = {}) {
  const Layout L{c.out};
  const auto fp = synth_fingerprint(c);
  std::error_code ec;
  if (fs::exists(L.manifest(), ec) && fs::exists(L.fingerprint(), ec) && io::read_file(L.fingerprint()) == fp) {
    if (log) log("dataset in " + L.data().string() + " is up to date");
    return read_manifest(L.manifest());
  }
  auto records = gen_dataset(c.synth, L.data(), c.jobs);
  io::write_file_atomic(L.fingerprint(), fp);
  if (log) {
    std::size_t counts[3][2] = {};
    for (const auto& r : records) ++counts[static_cast<int>(r.split)][r.label];
    for (auto s : {Split::train, Split::validation, Split::test})
      log(std::string(to_string(s)) + ": " + std::to_string(counts[static_cast<int>(s)][0]) + " clutter, " +
          std::to_string(counts[static_cast<int>(s)][1]) + " targets");
  }
  return records;
}

struct Dataset {
  train::LabeledChips train, validation, test;

  const train::LabeledChips& split(Split s) const {
    return s == Split::test ? test : (s == Split::validation ? validation : train);
  }
};

inline Dataset load_dataset(const ExperimentConfig& c, const std::vector<ChipRecord>& records) {
  const auto dir = Layout{c.out}.data();
  return {train::load_split(dir, records, Split::train), train::load_split(dir, records, Split::validation),
          train::load_split(dir, records, Split::test)};
}

inline const train::LabeledChips& monitored_chips(const Dataset& d, const train::TrainConfig& t) {
  const auto& m = d.split(t.early_stop_split);
  if (m.size() == 0)
    throw ConfigError("the " + std::string(to_string(t.early_stop_split)) +
                      " split is empty for this trial count; set early_stop_on = test");
  return m;
}

inline train::PreparedSet prepare(const train::LabeledChips& chips, const train::TrainConfig& t) {
  return train::prepare_eval_set(chips, t.reprs.members(), t.input_side, t.crop_fraction, t.repr_options);
}

// ---- training ---------------------------------------------------------------------

inline Logger prefixed(const Logger& log, const std::string& prefix) {
  if (!log) return {};
  return [log, prefix](const std::string& m) { log("[" + prefix + "] " + m); };
}

/// Trains one configuration and writes its model, history and run manifest.
inline train::TrainResult train_one(const ExperimentConfig& c, const ReprSet& reprs, const Dataset& data,
                                    const Logger& log = {}) {
  const auto t = config::resolve_train(c, reprs);
  const auto monitored = prepare(monitored_chips(data, t), t);
  auto result = train::train(t, data.train, monitored, prefixed(log, reprs.name()));
  const Layout L{c.out};
  nn::save_model(L.model_file(reprs), result.model);
  io::write_file_atomic(L.model_dir(reprs) / "history.tsv", train::encode_history(result.history));
  io::write_file_atomic(L.model_dir(reprs) / "run.txt", train::encode_run_manifest(t, &result));
  if (log)
    log("[" + reprs.name() + "] best epoch " + std::to_string(result.best_epoch) + ", monitored AUC " +
        io::fmt(result.best_auc, 4));
  return result;
}

/// Trains configurations on up to `c.jobs` threads. Results follow `which`.
inline std::vector<train::TrainResult> train_many(const ExperimentConfig& c, const std::vector<ReprSet>& which,
                                                  const Dataset& data, const Logger& log = {}) {
  std::mutex log_mutex;
  Logger safe;
  if (log)
    safe = [&](const std::string& m) {
      std::lock_guard lock(log_mutex);
      log(m);
    };
  std::vector<std::optional<train::TrainResult>> out(which.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    try {
      for (std::size_t i = next++; i < which.size() && !failed; i = next++) out[i] = train_one(c, which[i], data, safe);
    } catch (...) {
      if (!failed.exchange(true)) failure = std::current_exception();
    }
  };
  const unsigned jobs = std::clamp<unsigned>(c.jobs, 1, static_cast<unsigned>(std::max<std::size_t>(1, which.size())));
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  std::vector<train::TrainResult> results;
  for (auto& r : out) results.push_back(std::move(*r));
  return results;
}

inline train::TrainResult cmd_train(const ExperimentConfig& c, const ReprSet& reprs, const Logger& log = {}) {
  write_resolved(c);
  const auto data = load_dataset(c, cmd_synth(c, log));
  return train_one(c, reprs, data, log);
}

// ---- pilots ---------------------------------------------------------------------

/// Runs the configured pilots for every configuration and records the chosen
/// values as per-configuration overrides in the returned (and written) config.
inline ExperimentConfig cmd_pilot(ExperimentConfig c, config::Pilot kind, const Logger& log = {}) {
  using config::Pilot;
  if (kind == Pilot::none) return c;
  const auto data = load_dataset(c, cmd_synth(c, log));
  auto rng = Rng::derive(c.seed, "pilot");
  const auto idx = train::stratified_subset(data.train.labels, train::kPilotFraction, rng);
  const auto subset = data.train.subset(idx);
  std::string report = "configuration\tpilot\tcandidate\tmonotonic\tauc\tchosen\n";
  for (const auto& r : c.configurations) {
    auto t = config::resolve_train(c, r);
    const auto lg = prefixed(log, r.name());
    auto record = [&](const char* what, const train::PilotResult& p) {
      for (const auto& cv : p.curves)
        report += io::join({r.name(), what, config::format_number(cv.value),
                            train::strictly_decreasing(cv.losses) ? "yes" : "no", io::fmt(cv.auc, 6),
                            cv.value == p.chosen ? "yes" : "no"}) +
                  "\n";
    };
    if (kind == Pilot::lr || kind == Pilot::both) {
      const auto p = train::lr_pilot(t, subset, train::kPilotLearningRates, 10, lg);
      record("learning_rate", p);
      t.learning_rate = p.chosen;
      c.overrides[r.name()]["learning_rate"] = config::format_number(p.chosen);
    }
    if (kind == Pilot::dropout || kind == Pilot::both) {
      const auto monitored = prepare(monitored_chips(data, t), t);
      const auto p = train::dropout_pilot(t, subset, monitored, train::kPilotDropoutRates, 20, lg);
      record("dropout", p);
      c.overrides[r.name()]["dropout"] = config::format_number(p.chosen);
    }
  }
  io::write_file_atomic(c.out / "pilots.tsv", report);
  write_resolved(c);
  return c;
}

// ---- evaluation -------------------------------------------------------------------

struct Evaluation {
  ReprSet reprs;
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::string> ids, trials;
  stats::RocCurve roc;
  std::vector<stats::TrialAuc> by_trial;
};

inline nn::Model<float> load_trained(const ExperimentConfig& c, const ReprSet& r) {
  const auto path = Layout{c.out}.model_file(r);
  std::error_code ec;
  if (!fs::exists(path, ec)) throw IoError("no trained model for " + r.name() + " at " + path.string());
  auto m = nn::load_model(path);
  if (!(m.reprs() == r)) throw IoError(path.string() + " holds a " + m.reprs().name() + " model");
  return m;
}

inline std::string encode_scores(const Evaluation& e) {
  std::string s = "chip_id\tlabel\ttrial_name\tscore\n";
  for (std::size_t i = 0; i < e.scores.size(); ++i)
    s += io::join({e.ids[i], std::to_string(e.labels[i]), e.trials[i], io::fmt(e.scores[i], 8)}) + "\n";
  return s;
}

inline std::vector<Evaluation> evaluate(const ExperimentConfig& c, const std::vector<ReprSet>& which,
                                        const train::LabeledChips& test, const Logger& log = {}) {
  const Layout L{c.out};
  std::vector<Evaluation> out;
  std::vector<std::pair<std::string, stats::RocCurve>> curves;
  for (const auto& r : which) {
    const auto t = config::resolve_train(c, r);
    const auto model = load_trained(c, r);
    const auto set = prepare(test, t);
    Evaluation e{r, train::predict(model, set), set.labels, set.ids, set.trials, {}, {}};
    e.roc = stats::roc_auc(e.scores, e.labels);
    e.by_trial = stats::per_trial_auc(e.scores, e.labels, e.trials);
    const auto dir = L.eval_dir() / r.name();
    io::write_file_atomic(dir / "scores.tsv", encode_scores(e));
    io::write_file_atomic(dir / "roc.tsv", stats::encode_roc(e.roc));
    io::write_file_atomic(dir / "per_trial.tsv", stats::encode_trial_table(e.by_trial));
    if (log) log(r.name() + " test AUC " + io::fmt(e.roc.auc, 4));
    curves.emplace_back(r.name(), e.roc);
    out.push_back(std::move(e));
  }
  io::write_file_atomic(L.eval_dir() / "roc.svg", plot::roc_svg(curves));
  return out;
}

inline std::vector<Evaluation> cmd_eval(const ExperimentConfig& c, const std::vector<ReprSet>& which,
                                        const Logger& log = {}) {
  const auto records = cmd_synth(c, log);
  return evaluate(c, which, train::load_split(Layout{c.out}.data(), records, Split::test), log);
}

// ---- comparison -------------------------------------------------------------------

struct Comparison {
  std::vector<stats::AucEnsemble> ensembles;
  std::vector<stats::ComparisonResult> results;
};

/// Paired bootstrap ensembles for every evaluation and WSR tests of each
/// challenger against the reference configuration.
inline Comparison cmd_compare(const ExperimentConfig& c, const std::vector<Evaluation>& evals, const Logger& log = {}) {
  const Layout L{c.out};
  const auto seed = config::stage_seed(c.seed, "bootstrap");
  Comparison out;
  const stats::AucEnsemble* reference = nullptr;
  for (const auto& e : evals)
    out.ensembles.push_back(stats::bootstrap_auc(e.scores, e.labels, c.eval.bootstrap, seed, e.reprs.name()));
  std::vector<stats::AucEnsemble> challengers;
  for (std::size_t i = 0; i < evals.size(); ++i) {
    if (evals[i].reprs == c.eval.reference) reference = &out.ensembles[i];
    else challengers.push_back(out.ensembles[i]);
  }
  if (!reference) throw ConfigError("reference configuration " + c.eval.reference.name() + " was not evaluated");
  if (!challengers.empty()) {
    const std::size_t m = c.eval.comparisons ? c.eval.comparisons : challengers.size();
    out.results = stats::compare_configs(*reference, challengers, c.eval.alpha, m);
  }

  std::string wide = "replicate";
  for (const auto& e : out.ensembles) wide += "\t" + e.name;
  wide += "\n";
  for (std::size_t b = 0; b < c.eval.bootstrap; ++b) {
    wide += std::to_string(b);
    for (const auto& e : out.ensembles) wide += "\t" + io::fmt(e.aucs[b], 8);
    wide += "\n";
  }
  io::write_file_atomic(L.compare_dir() / "ensembles.tsv", wide);
  io::write_file_atomic(L.compare_dir() / "comparisons.tsv", stats::encode_comparisons(out.results));
  io::write_file_atomic(L.compare_dir() / "auc_box.svg", plot::box_svg(out.ensembles));
  if (log)
    for (const auto& r : out.results)
      log(r.challenger + " vs " + r.reference + ": p " + io::fmt_sci(r.p_value, 3) +
          (r.significant ? " significant" : " not significant"));
  return out;
}

// ---- analysis ---------------------------------------------------------------------

enum class Analysis { mi, embed, weights };

inline Analysis parse_analysis(const std::string& s) {
  if (s == "mi") return Analysis::mi;
  if (s == "embed") return Analysis::embed;
  if (s == "weights") return Analysis::weights;
  throw ConfigError("unknown analysis '" + s + "' (expected mi, embed or weights)");
}

struct SilhouetteRow {
  std::string configuration;
  std::uint64_t seed = 0;
  double kl = 0.0;
  double by_trial = 0.0;
  double by_label = 0.0;
};

inline std::string encode_silhouettes(const std::vector<SilhouetteRow>& rows) {
  std::string s = "configuration\tseed\tkl\tsilhouette_trial\tsilhouette_label\n";
  for (const auto& r : rows)
    s += io::join({r.configuration, std::to_string(r.seed), io::fmt(r.kl, 6), io::fmt(r.by_trial, 6),
                   io::fmt(r.by_label, 6)}) +
         "\n";
  return s;
}

/// Grids side by side with a one-pixel gap filled with the global minimum.
inline Grid<double> tile(const std::vector<Grid<double>>& grids) {
  if (grids.empty()) return {};
  const std::size_t h = grids[0].rows, w = grids[0].cols;
  double lo = grids[0].data[0];
  for (const auto& g : grids) lo = std::min(lo, *std::min_element(g.data.begin(), g.data.end()));
  Grid<double> out(h, grids.size() * (w + 1) - 1, lo);
  for (std::size_t k = 0; k < grids.size(); ++k)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col) out(r, k * (w + 1) + col) = grids[k](r, col);
  return out;
}

inline void write_grid(const fs::path& stem, const Grid<double>& g) {
  RealChip chip;
  chip.values = g;
  chip.kind = RealKind::generic;
  write_rep(fs::path(stem).replace_extension(".rep"), chip);
  io::write_pgm(fs::path(stem).replace_extension(".pgm"), g);
}

struct AnalysisResult {
  std::vector<latent::MiRow> mi;
  std::vector<SilhouetteRow> silhouettes;
};

/// Test-set probe shared by every analysis, prepared with the [train] defaults.
inline train::PreparedSet analysis_probe(const ExperimentConfig& c, const train::LabeledChips& test) {
  auto t = c.train;
  t.reprs = ReprSet{Representation::magnitude, Representation::phase, Representation::psd};
  const auto idx = latent::stratified_probe(test.labels, c.analysis.probe_size, config::stage_seed(c.seed, "probe"));
  return prepare(test.subset(idx), t);
}

inline std::vector<latent::MiRow> analyze_mi(const ExperimentConfig& c, const train::PreparedSet& probe,
                                             const Logger& log = {}) {
  std::vector<nn::Model<float>> models;
  std::vector<std::string> names;
  for (const auto& r : c.configurations) {
    auto m = load_trained(c, r);
    if (m.input_side() != probe.side) {
      if (log) log("mi: skipping " + r.name() + " (input side differs from the [train] default)");
      continue;
    }
    models.push_back(std::move(m));
    names.push_back(r.name());
  }
  std::vector<latent::NamedModel> named;
  for (std::size_t i = 0; i < models.size(); ++i) named.push_back({names[i], &models[i]});
  const auto rows =
      latent::mi_report(named, probe, {c.analysis.k, c.analysis.pca_dims, config::stage_seed(c.seed, "ksg")});
  io::write_file_atomic(Layout{c.out}.analysis_dir() / "mi.tsv", latent::encode_mi_report(rows, probe.size()));
  if (log)
    for (const auto& r : rows) log("mi " + r.source + " " + r.pair + ": " + io::fmt(r.nats, 3) + " nats");
  return rows;
}

/// t-SNE of the concatenated last-conv features, one embedding per seed.
inline std::vector<SilhouetteRow> analyze_embed(const ExperimentConfig& c, const train::PreparedSet& probe,
                                                const Logger& log = {}) {
  const Layout L{c.out};
  if (static_cast<double>(probe.size()) < 3.0 * c.analysis.perplexity)
    throw ConfigError("probe of " + std::to_string(probe.size()) + " chips is too small for perplexity " +
                      config::format_number(c.analysis.perplexity));
  std::vector<SilhouetteRow> rows;
  for (const auto& r : c.analysis.embed) {
    const auto model = load_trained(c, r);
    const auto cloud = latent::extract_joint_features(model, probe);
    for (std::uint64_t s = 1; s <= c.analysis.tsne_seeds; ++s) {
      latent::TsneOptions opt;
      opt.perplexity = c.analysis.perplexity;
      opt.iterations = c.analysis.tsne_iterations;
      opt.seed = s;
      const auto e = latent::tsne(cloud, opt);
      std::vector<std::string> by_label;
      for (int y : cloud.labels) by_label.push_back(y ? "target" : "clutter");
      rows.push_back({r.name(), s, e.kl, latent::silhouette(e, cloud.trials), latent::silhouette(e, by_label)});
      const auto stem = L.analysis_dir() / "embed" / (r.name() + "_seed" + std::to_string(s));
      io::write_file_atomic(fs::path(stem).replace_extension(".tsv"), latent::encode_embedding(e, cloud));
      io::write_file_atomic(fs::path(stem).replace_extension(".svg"),
                            plot::scatter_svg(e.coords, cloud.trials, r.name() + " by trial, seed " + std::to_string(s)));
      if (log)
        log("embed " + r.name() + " seed " + std::to_string(s) + ": silhouette by trial " +
            io::fmt(rows.back().by_trial, 3));
    }
  }
  io::write_file_atomic(L.analysis_dir() / "silhouette.tsv", encode_silhouettes(rows));
  return rows;
}

/// First-layer filter panels and un-flattened dense weights per path.
inline void analyze_weights(const ExperimentConfig& c, const Logger& log = {}) {
  const Layout L{c.out};
  for (const auto& r : c.configurations) {
    const auto model = load_trained(c, r);
    const auto maps = latent::unflatten_dense_weights(model);
    for (std::size_t p = 0; p < model.paths(); ++p) {
      const auto dir = L.analysis_dir() / "weights" / r.name();
      const std::string path = std::string(short_name(model.reprs()[p]));
      write_grid(dir / (path + "_filters"), tile(latent::first_layer_filters(model, p)));
      write_grid(dir / (path + "_dense_channels"), tile(maps[p].channels));
      write_grid(dir / (path + "_dense_sum"), maps[p].coherent_sum);
    }
    if (log) log("weights " + r.name() + " written");
  }
}

inline AnalysisResult cmd_analyze(const ExperimentConfig& c, const std::vector<Analysis>& which,
                                  const Logger& log = {}) {
  AnalysisResult out;
  const bool needs_probe = std::any_of(which.begin(), which.end(), [](Analysis a) { return a != Analysis::weights; });
  train::PreparedSet probe;
  if (needs_probe) {
    const auto records = cmd_synth(c, log);
    probe = analysis_probe(c, train::load_split(Layout{c.out}.data(), records, Split::test));
  }
  for (auto a : which) {
    if (a == Analysis::mi) out.mi = analyze_mi(c, probe, log);
    if (a == Analysis::embed) out.silhouettes = analyze_embed(c, probe, log);
    if (a == Analysis::weights) analyze_weights(c, log);
  }
  return out;
}

// ---- full grid --------------------------------------------------------------------

/// Trial rows plus "All", one AUC column per configuration.
inline std::string encode_summary(const std::vector<Evaluation>& evals) {
  if (evals.empty()) return {};
  std::string s = "trial\tproportion";
  for (const auto& e : evals) s += "\t" + e.reprs.name();
  s += "\n";
  for (std::size_t row = 0; row < evals[0].by_trial.size(); ++row) {
    const auto& t = evals[0].by_trial[row];
    s += t.trial + "\t" + io::fmt(100.0 * t.proportion, 2) + "%";
    for (const auto& e : evals) s += "\t" + (e.by_trial[row].auc ? io::fmt(*e.by_trial[row].auc, 4) : "undefined");
    s += "\n";
  }
  return s;
}

struct RunResult {
  ExperimentConfig resolved;
  std::vector<Evaluation> evaluations;
  Comparison comparison;
  AnalysisResult analysis;
};

inline RunResult cmd_all(ExperimentConfig c, const Logger& log = {}) {
  config::validate(c);
  write_resolved(c);
  RunResult out;
  const auto records = step("synth", log, [&] { return cmd_synth(c, log); });
  if (c.pilot != config::Pilot::none) c = step("pilot", log, [&] { return cmd_pilot(c, c.pilot, log); });
  const auto data = load_dataset(c, records);
  step("train", log, [&] { return train_many(c, c.configurations, data, log); });
  out.evaluations = step("eval", log, [&] { return evaluate(c, c.configurations, data.test, log); });
  out.comparison = step("compare", log, [&] { return cmd_compare(c, out.evaluations, log); });
  out.analysis = step("analyze", log, [&] {
    const auto probe = analysis_probe(c, data.test);
    AnalysisResult a;
    a.mi = analyze_mi(c, probe, log);
    a.silhouettes = analyze_embed(c, probe, log);
    analyze_weights(c, log);
    return a;
  });
  io::write_file_atomic(Layout{c.out}.summary(), encode_summary(out.evaluations));
  write_resolved(c);
  out.resolved = std::move(c);
  return out;
}

}  // namespace sasatr::lab
