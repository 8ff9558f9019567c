#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sasatr/error.hpp"
#include "sasatr/io.hpp"
#include "sasatr/representations.hpp"
#include "sasatr/rng.hpp"
#include "sasatr/synth.hpp"
#include "sasatr/trainer.hpp"

namespace sasatr::config {

struct EvalConfig {
  std::size_t bootstrap = 100;
  double alpha = 1e-3;
  std::size_t comparisons = 0;  // Bonferroni m; 0 means one per challenger
  ReprSet reference{Representation::magnitude};
};

struct AnalysisConfig {
  std::size_t k = 3;
  std::size_t pca_dims = 10;
  double perplexity = 30.0;
  std::size_t tsne_iterations = 1000;
  std::size_t tsne_seeds = 5;
  std::size_t probe_size = 1000;
  std::vector<ReprSet> embed{ReprSet{Representation::magnitude}, ReprSet{Representation::magnitude, Representation::psd}};
};

enum class Pilot { none, lr, dropout, both };

inline std::string_view to_string(Pilot p) {
  switch (p) {
    case Pilot::none: return "none";
    case Pilot::lr: return "lr";
    case Pilot::dropout: return "dropout";
    case Pilot::both: return "both";
  }
  return "?";
}

using Overrides = std::map<std::string, std::string>;

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "run";
  unsigned jobs = 1;
  SynthConfig synth{1, default_trials()};
  train::TrainConfig train;
  Pilot pilot = Pilot::none;
  std::vector<ReprSet> configurations = standard_configurations();
  std::map<std::string, Overrides> overrides;  // keyed by configuration name
  EvalConfig eval;
  AnalysisConfig analysis;
};

// ---- scalar parsing -------------------------------------------------------------

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  return std::string(s.substr(b, s.find_last_not_of(" \t\r") - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  const auto v = trim(text);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty())
    throw ConfigError("bad value '" + v + "' for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  const auto v = trim(text);
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ConfigError("bad value '" + v + "' for " + key + " (expected true or false)");
}

inline Split parse_monitor(const std::string& text) {
  const auto v = trim(text);
  if (v == "val" || v == "validation") return Split::validation;
  if (v == "test") return Split::test;
  throw ConfigError("early_stop_on must be val or test, got '" + v + "'");
}

inline Pilot parse_pilot(const std::string& text) {
  const auto v = trim(text);
  for (auto p : {Pilot::none, Pilot::lr, Pilot::dropout, Pilot::both})
    if (v == to_string(p)) return p;
  throw ConfigError("pilot must be none, lr, dropout or both, got '" + v + "'");
}

/// Semicolon-separated list of representation sets, e.g. "mag; mag+psd".
inline std::vector<ReprSet> parse_repr_list(const std::string& text) {
  std::vector<ReprSet> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    item = trim(item);
    if (item.empty()) continue;
    auto r = ReprSet::parse(item);
    for (const auto& o : out)
      if (o == r) throw ConfigError("configuration " + r.name() + " listed twice");
    out.push_back(std::move(r));
  }
  if (out.empty()) throw ConfigError("empty configuration list");
  return out;
}

inline std::string format_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string format_repr_list(const std::vector<ReprSet>& list) {
  std::string s;
  for (const auto& r : list) s += (s.empty() ? "" : "; ") + r.name();
  return s;
}

// ---- keyed setters --------------------------------------------------------------

/// Applies one [train] key. Per-configuration sections accept the same keys.
inline void set_train_key(train::TrainConfig& t, const std::string& key, const std::string& value) {
  const auto k = "train." + key;
  if (key == "learning_rate") t.learning_rate = parse_number<double>(k, value);
  else if (key == "dropout") t.dropout_rate = parse_number<double>(k, value);
  else if (key == "batch_size") t.batch_size = parse_number<std::size_t>(k, value);
  else if (key == "max_epochs") t.max_epochs = parse_number<std::size_t>(k, value);
  else if (key == "patience") t.patience = parse_number<std::size_t>(k, value);
  else if (key == "early_stop_on") t.early_stop_split = parse_monitor(value);
  else if (key == "steps_per_epoch") t.steps_per_epoch = trim(value) == "auto" ? 0 : parse_number<std::size_t>(k, value);
  else if (key == "input_side") t.input_side = parse_number<std::size_t>(k, value);
  else if (key == "crop_fraction") t.crop_fraction = parse_number<double>(k, value);
  else if (key == "dynamic_range_db") t.repr_options.dynamic_range_db = parse_number<double>(k, value);
  else if (key == "psd_linear") t.repr_options.psd_linear = parse_bool(k, value);
  else throw ConfigError("unknown key '" + key + "' in [train]");
}

inline void set_trial_key(TrialProfile& p, const std::string& key, const std::string& value) {
  const auto k = "trial." + p.name + "." + key;
  if (key == "speckle_sigma") p.speckle_sigma = parse_number<double>(k, value);
  else if (key == "gain_db") p.gain_db = parse_number<double>(k, value);
  else if (key == "corr_range") p.corr_range = parse_number<double>(k, value);
  else if (key == "corr_cross") p.corr_cross = parse_number<double>(k, value);
  else if (key == "texture_depth") p.texture_depth = parse_number<double>(k, value);
  else if (key == "band_range") p.band_range = parse_number<double>(k, value);
  else if (key == "band_cross") p.band_cross = parse_number<double>(k, value);
  else throw ConfigError("unknown key '" + key + "' in [trial." + p.name + "]");
}

inline std::vector<TrialProfile> trials_named(const std::string& list) {
  const auto defaults = default_trials();
  std::vector<TrialProfile> out;
  std::stringstream ss(list);
  std::string name;
  while (std::getline(ss, name, ',')) {
    name = trim(name);
    if (name.empty()) continue;
    TrialProfile p{name};
    for (const auto& d : defaults)
      if (d.name == name) p = d;
    out.push_back(p);
  }
  return out;
}

// ---- validation ------------------------------------------------------------------

inline void validate(const ExperimentConfig& c) {
  try {
    validate(c.synth);
    validate(c.train);
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what());
  }
  if (c.jobs < 1) throw ConfigError("jobs must be >= 1");
  if (c.out.empty()) throw ConfigError("out must name a directory");
  std::error_code ec;
  if (std::filesystem::exists(c.out, ec) && !std::filesystem::is_directory(c.out, ec))
    throw ConfigError("out path " + c.out.string() + " exists and is not a directory");
  if (c.eval.bootstrap < 1) throw ConfigError("eval.bootstrap must be >= 1");
  if (!(c.eval.alpha > 0.0 && c.eval.alpha < 1.0)) throw ConfigError("eval.alpha must lie in (0,1)");
  if (c.analysis.k < 1) throw ConfigError("analysis.k must be >= 1");
  if (c.analysis.pca_dims < 1) throw ConfigError("analysis.pca_dims must be >= 1");
  if (!(c.analysis.perplexity > 0.0)) throw ConfigError("analysis.perplexity must be positive");
  if (c.analysis.tsne_seeds < 1 || c.analysis.tsne_iterations < 1)
    throw ConfigError("analysis.tsne_seeds and analysis.tsne_iterations must be >= 1");
  if (c.analysis.probe_size < 2) throw ConfigError("analysis.probe_size must be >= 2");
  for (const auto& [name, ov] : c.overrides) {
    train::TrainConfig probe = c.train;
    for (const auto& [k, v] : ov) set_train_key(probe, k, v);
    try {
      train::validate(probe);
    } catch (const InvalidParameter& e) {
      throw ConfigError("[train." + name + "]: " + e.what());
    }
  }
}

// ---- reading ---------------------------------------------------------------------

namespace detail {

inline void read_global(ExperimentConfig& c, const std::string& key, const std::string& value) {
  if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "out") c.out = trim(value);
  else if (key == "jobs") c.jobs = parse_number<unsigned>(key, value);
  else throw ConfigError("unknown top-level key '" + key + "'");
}

inline void read_synth(ExperimentConfig& c, const std::string& key, const std::string& value) {
  const auto k = "synth." + key;
  if (key == "chips_per_trial") c.synth.chips_per_trial = parse_number<std::size_t>(k, value);
  else if (key == "clutter_to_target_ratio") c.synth.clutter_to_target_ratio = parse_number<double>(k, value);
  else if (key == "chip_height") c.synth.chip_height = parse_number<std::size_t>(k, value);
  else if (key == "chip_width") c.synth.chip_width = parse_number<std::size_t>(k, value);
  else if (key == "extent_m") c.synth.extent_m = parse_number<double>(k, value);
  else if (key == "trials") c.synth.trials = trials_named(value);
  else throw ConfigError("unknown key '" + key + "' in [synth]");
}

inline void read_eval(ExperimentConfig& c, const std::string& key, const std::string& value) {
  const auto k = "eval." + key;
  if (key == "bootstrap") c.eval.bootstrap = parse_number<std::size_t>(k, value);
  else if (key == "alpha") c.eval.alpha = parse_number<double>(k, value);
  else if (key == "comparisons") c.eval.comparisons = parse_number<std::size_t>(k, value);
  else if (key == "reference") c.eval.reference = ReprSet::parse(trim(value));
  else throw ConfigError("unknown key '" + key + "' in [eval]");
}

inline void read_analysis(ExperimentConfig& c, const std::string& key, const std::string& value) {
  const auto k = "analysis." + key;
  auto& a = c.analysis;
  if (key == "k") a.k = parse_number<std::size_t>(k, value);
  else if (key == "pca_dims") a.pca_dims = parse_number<std::size_t>(k, value);
  else if (key == "perplexity") a.perplexity = parse_number<double>(k, value);
  else if (key == "tsne_iterations") a.tsne_iterations = parse_number<std::size_t>(k, value);
  else if (key == "tsne_seeds") a.tsne_seeds = parse_number<std::size_t>(k, value);
  else if (key == "probe_size") a.probe_size = parse_number<std::size_t>(k, value);
  else if (key == "embed") a.embed = parse_repr_list(value);
  else throw ConfigError("unknown key '" + key + "' in [analysis]");
}

}  // namespace detail

/// Parses the INI text. Sections are read in a fixed order so that
/// [trial.NAME] always refines the list given by [synth] trials.
inline ExperimentConfig parse(const std::string& text, const std::string& source = "config") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }

  ExperimentConfig c;
  std::vector<std::pair<std::string, const pt::ptree*>> trial_sections;
  std::vector<std::pair<std::string, const pt::ptree*>> train_sections;
  const pt::ptree* sections[4] = {nullptr, nullptr, nullptr, nullptr};
  for (const auto& [name, node] : tree) {
    const bool section_name = name == "synth" || name == "train" || name == "eval" || name == "analysis" ||
                              name.find('.') != std::string::npos;
    if (node.empty() && !(section_name && node.data().empty())) {
      detail::read_global(c, name, node.data());
      continue;
    }
    if (name == "synth") sections[0] = &node;
    else if (name == "train") sections[1] = &node;
    else if (name == "eval") sections[2] = &node;
    else if (name == "analysis") sections[3] = &node;
    else if (name.rfind("trial.", 0) == 0) trial_sections.emplace_back(name.substr(6), &node);
    else if (name.rfind("train.", 0) == 0) train_sections.emplace_back(name.substr(6), &node);
    else throw ConfigError("unknown section [" + name + "]");
  }

  if (sections[0])
    for (const auto& [k, v] : *sections[0]) detail::read_synth(c, k, v.data());
  for (const auto& [name, node] : trial_sections) {
    auto it = std::find_if(c.synth.trials.begin(), c.synth.trials.end(), [&](const auto& t) { return t.name == name; });
    if (it == c.synth.trials.end()) throw ConfigError("[trial." + name + "] does not name a trial in synth.trials");
    for (const auto& [k, v] : *node) set_trial_key(*it, k, v.data());
  }
  if (sections[1])
    for (const auto& [k, v] : *sections[1]) {
      if (k == "configurations") c.configurations = parse_repr_list(v.data());
      else if (k == "pilot") c.pilot = parse_pilot(v.data());
      else set_train_key(c.train, k, v.data());
    }
  for (const auto& [name, node] : train_sections) {
    auto& ov = c.overrides[ReprSet::parse(name).name()];
    for (const auto& [k, v] : *node) {
      train::TrainConfig probe;
      set_train_key(probe, k, v.data());
      ov[k] = trim(v.data());
    }
  }
  if (sections[2])
    for (const auto& [k, v] : *sections[2]) detail::read_eval(c, k, v.data());
  if (sections[3])
    for (const auto& [k, v] : *sections[3]) detail::read_analysis(c, k, v.data());

  c.synth.seed = c.seed;
  validate(c);
  return c;
}

inline ExperimentConfig load(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) throw ConfigError("config file not found: " + path.string());
  return parse(io::read_file(path), path.string());
}

// ---- writing ---------------------------------------------------------------------

/// Canonical text with every default expanded; parse(encode(c)) reproduces c.
inline std::string encode(const ExperimentConfig& c) {
  std::string s;
  auto kv = [&](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
  auto section = [&](const std::string& name) { s += "\n[" + name + "]\n"; };
  const auto& t = c.train;

  kv("seed", std::to_string(c.seed));
  kv("out", c.out.string());
  kv("jobs", std::to_string(c.jobs));

  section("synth");
  kv("chips_per_trial", std::to_string(c.synth.chips_per_trial));
  kv("clutter_to_target_ratio", format_number(c.synth.clutter_to_target_ratio));
  kv("chip_height", std::to_string(c.synth.chip_height));
  kv("chip_width", std::to_string(c.synth.chip_width));
  kv("extent_m", format_number(c.synth.extent_m));
  std::string names;
  for (const auto& p : c.synth.trials) names += (names.empty() ? "" : ",") + p.name;
  kv("trials", names);
  for (const auto& p : c.synth.trials) {
    section("trial." + p.name);
    kv("speckle_sigma", format_number(p.speckle_sigma));
    kv("gain_db", format_number(p.gain_db));
    kv("corr_range", format_number(p.corr_range));
    kv("corr_cross", format_number(p.corr_cross));
    kv("texture_depth", format_number(p.texture_depth));
    kv("band_range", format_number(p.band_range));
    kv("band_cross", format_number(p.band_cross));
  }

  section("train");
  kv("configurations", format_repr_list(c.configurations));
  kv("pilot", std::string(to_string(c.pilot)));
  kv("learning_rate", format_number(t.learning_rate));
  kv("dropout", format_number(t.dropout_rate));
  kv("batch_size", std::to_string(t.batch_size));
  kv("max_epochs", std::to_string(t.max_epochs));
  kv("patience", std::to_string(t.patience));
  kv("early_stop_on", t.early_stop_split == Split::test ? "test" : "val");
  kv("steps_per_epoch", t.steps_per_epoch ? std::to_string(t.steps_per_epoch) : "auto");
  kv("input_side", std::to_string(t.input_side));
  kv("crop_fraction", format_number(t.crop_fraction));
  kv("dynamic_range_db", format_number(t.repr_options.dynamic_range_db));
  kv("psd_linear", t.repr_options.psd_linear ? "true" : "false");
  for (const auto& [name, ov] : c.overrides) {
    if (ov.empty()) continue;
    section("train." + name);
    for (const auto& [k, v] : ov) kv(k, v);
  }

  section("eval");
  kv("bootstrap", std::to_string(c.eval.bootstrap));
  kv("alpha", format_number(c.eval.alpha));
  kv("comparisons", std::to_string(c.eval.comparisons));
  kv("reference", c.eval.reference.name());

  section("analysis");
  kv("k", std::to_string(c.analysis.k));
  kv("pca_dims", std::to_string(c.analysis.pca_dims));
  kv("perplexity", format_number(c.analysis.perplexity));
  kv("tsne_iterations", std::to_string(c.analysis.tsne_iterations));
  kv("tsne_seeds", std::to_string(c.analysis.tsne_seeds));
  kv("probe_size", std::to_string(c.analysis.probe_size));
  kv("embed", format_repr_list(c.analysis.embed));
  return s;
}

// ---- resolution ------------------------------------------------------------------

/// Seed of one named stage, derived from the global seed.
inline std::uint64_t stage_seed(std::uint64_t seed, const std::string& label) { return Rng::derive(seed, label)(); }

/// Training configuration of one input set: [train] defaults, then its
/// override section, with a seed derived from the global seed.
inline train::TrainConfig resolve_train(const ExperimentConfig& c, const ReprSet& reprs) {
  auto t = c.train;
  t.reprs = reprs;
  t.seed = stage_seed(c.seed, "train/" + reprs.name());
  if (auto it = c.overrides.find(reprs.name()); it != c.overrides.end())
    for (const auto& [k, v] : it->second) set_train_key(t, k, v);
  return t;
}

/// Sets a [train] key for every configuration, dropping conflicting overrides.
inline void override_train(ExperimentConfig& c, const std::string& key, const std::string& value) {
  set_train_key(c.train, key, value);
  for (auto& [name, ov] : c.overrides) ov.erase(key);
}

}  // namespace sasatr::config
