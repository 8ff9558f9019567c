// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only
// when every selected criterion passes.
//
//   acceptance [--work DIR] [--only 1,4,7]

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sasatr/sasatr.hpp"

namespace fs = std::filesystem;
using namespace sasatr;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::string fixed(double v, int p = 4) { return io::fmt(v, p); }

template <class T = double>
nn::Tensor<T> random_tensor(nn::Shape s, Rng& rng, double sd = 1.0) {
  nn::Tensor<T> t(std::move(s));
  for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, sd));
  return t;
}

double weighted_sum(const nn::Tensor<double>& y, const nn::Tensor<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

// ---- C1 ---------------------------------------------------------------------------

struct FdTally {
  double worst = 0.0;
  std::size_t coords = 0;

  void check(nn::Tensor<double>& wrt, const nn::Tensor<double>& analytic, const std::function<double()>& f,
             std::size_t limit, Rng& pick) {
    for (std::size_t n = 0; n < std::min(limit, wrt.size()); ++n) {
      const std::size_t i = limit >= wrt.size() ? n : pick.below(wrt.size());
      const double fd = oracle::central_difference(f, wrt[i], 1e-3);
      worst = std::max(worst, oracle::relative_error(fd, analytic[i]));
      ++coords;
    }
  }
};

std::vector<bool> relu_pattern(const nn::ForwardCache<double>& c) {
  std::vector<bool> s;
  for (const auto& p : c.paths)
    for (const auto* t : {&p.conv1, &p.sum2, &p.sum3})
      for (double v : t->values()) s.push_back(v > 0.0);
  return s;
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  Rng rng(101), pick(102);
  FdTally layers;
  for (std::size_t ks : {1, 6, 8}) {
    auto x = random_tensor({2, 9, 9, 2}, rng);
    auto k = random_tensor({ks, ks, 2, 3}, rng);
    auto b = random_tensor({3}, rng);
    const auto r = random_tensor({2, 9, 9, 3}, rng);
    const auto g = nn::conv2d_backward(r, x, k);
    auto f = [&] { return weighted_sum(nn::conv2d_forward(x, k, b), r); };
    layers.check(x, g.input, f, 40, pick);
    layers.check(k, g.kernel, f, 40, pick);
    layers.check(b, g.bias, f, 3, pick);
  }
  {
    auto x = random_tensor({2, 9, 10, 3}, rng);
    const auto r = random_tensor({2, 2, 2, 3}, rng);
    const auto g = nn::avgpool_backward(r, x.shape(), 4);
    layers.check(x, g, [&] { return weighted_sum(nn::avgpool_forward(x, 4), r); }, 60, pick);
  }
  {
    auto x = random_tensor({3, 12}, rng);
    auto w = random_tensor({12, 1}, rng);
    auto b = random_tensor({1}, rng);
    const auto r = random_tensor({3, 1}, rng);
    const auto g = nn::dense_backward(r, x, w);
    auto f = [&] { return weighted_sum(nn::dense_forward(x, w, b), r); };
    layers.check(x, g.input, f, 36, pick);
    layers.check(w, g.weights, f, 12, pick);
    layers.check(b, g.bias, f, 1, pick);
  }
  {
    auto z = random_tensor({8, 1}, rng, 2.0);
    const std::vector<double> y{1, 0, 1, 1, 0, 0, 1, 0};
    const auto r = nn::sigmoid_bce(z, y);
    layers.check(z, r.grad_logits, [&] { return nn::sigmoid_bce(z, y).loss; }, 8, pick);
  }

  // Full two-path model; 16x16 is the smallest input two pools of four accept.
  auto m = nn::build_model<double>(ReprSet::parse("mag,psd"), 16, 0.5, 11);
  Rng data(12);
  for (auto& p : m.params())
    if (p.name.ends_with("bias")) p.value = random_tensor(p.value.shape(), data, 0.1);
  const std::vector<nn::Tensor<double>> in{random_tensor({2, 16, 16, 1}, data), random_tensor({2, 16, 16, 1}, data)};
  const std::vector<double> y{1.0, 0.0};
  auto run = [&] {
    Rng drop(99);
    return m.forward(in, nn::Mode::train, &drop);
  };
  const auto base = run();
  m.zero_grad();
  m.backward(base, nn::sigmoid_bce(base.logits, y).grad_logits);
  double model_worst = 0.0;
  std::size_t model_coords = 0;
  while (model_coords < 150) {
    auto& p = m.params()[pick.below(m.params().size())];
    const std::size_t i = pick.below(p.value.size());
    const double saved = p.value[i];
    p.value[i] = saved + 1e-3;
    const auto up = run();
    p.value[i] = saved - 1e-3;
    const auto down = run();
    p.value[i] = saved;
    if (relu_pattern(up) != relu_pattern(down)) continue;  // finite difference straddles a ReLU kink
    const double fd = (nn::sigmoid_bce(up.logits, y).loss - nn::sigmoid_bce(down.logits, y).loss) / 2e-3;
    model_worst = std::max(model_worst, oracle::relative_error(fd, p.grad[i]));
    ++model_coords;
  }
  const double secs = seconds_since(t0);
  const bool ok = layers.worst < 1e-4 && model_worst < 1e-4 && model_coords >= 100 && secs < 60.0;
  return {ok, "layers max rel err " + sci(layers.worst) + " over " + std::to_string(layers.coords) +
                  " coords; two-path model " + sci(model_worst) + " over " + std::to_string(model_coords) +
                  " coords (16x16 inputs); " + fixed(secs, 1) + " s"};
}

// ---- C2 ---------------------------------------------------------------------------

Outcome auc_oracle() {
  Rng rng(201);
  double worst = 0.0;
  std::size_t with_ties = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng.below(49);
    const bool ties = t % 2 == 0;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = ties ? static_cast<double>(rng.below(5)) : rng.normal();
      y[i] = rng.bernoulli(0.4) ? 1 : 0;
    }
    y[0] = 0;
    y[1] = 1;
    with_ties += ties;
    const double ref = oracle::pairwise_auc(s, y);
    worst = std::max({worst, std::abs(stats::auc(s, y) - ref), std::abs(stats::roc_auc(s, y).auc - ref)});
  }
  return {worst <= 1e-12, "1000 instances (n <= 50, " + std::to_string(with_ties) +
                              " with ties): max |rank-sum - pairwise| " + sci(worst)};
}

// ---- C3 ---------------------------------------------------------------------------

Outcome wsr_oracle() {
  Rng rng(301);
  double exact_worst = 0.0, normal_worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t n = 5; n <= 12; ++n)
    for (int rep = 0; rep < 40; ++rep) {
      std::vector<double> d(n);
      for (auto& v : d) v = rng.normal() + 0.3;
      const auto ref = oracle::wsr_enumerate(d);
      const auto got = stats::wilcoxon_signed_rank(d);
      exact_worst = std::max({exact_worst, std::abs(got.p_value - ref.p_two_sided), std::abs(got.w_plus - ref.w_plus)});
      if (!got.exact) exact_worst = INFINITY;
      if (n == 12)
        normal_worst = std::max(
            normal_worst, std::abs(stats::wilcoxon_signed_rank(d, stats::WsrMethod::normal).p_value - ref.p_two_sided));
      ++cases;
    }
  return {exact_worst <= 1e-15 && normal_worst < 0.05,
          std::to_string(cases) + " tie-free cases n = 5..12: exact path max |dp| " + sci(exact_worst) +
              "; normal path at n = 12 max |dp| " + fixed(normal_worst) + " (< 0.05). n < 5 is rejected by contract"};
}

// ---- C4 ---------------------------------------------------------------------------

Outcome ksg_benchmark() {
  const auto t0 = Clock::now();
  Rng rng(401);
  const std::size_t n = 2000;
  Eigen::MatrixXd a(n, 1), b(n, 1), u(n, 1), v(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.normal(), z = rng.normal();
    a(static_cast<Eigen::Index>(i), 0) = x;
    b(static_cast<Eigen::Index>(i), 0) = 0.9 * x + std::sqrt(1.0 - 0.81) * z;
    u(static_cast<Eigen::Index>(i), 0) = rng.uniform();
    v(static_cast<Eigen::Index>(i), 0) = rng.uniform();
  }
  const double analytic = -0.5 * std::log(1.0 - 0.81);
  const double mi = latent::ksg_mi(latent::from_matrix(a), latent::from_matrix(b), 3).nats;
  const double indep = latent::ksg_mi(latent::from_matrix(u), latent::from_matrix(v), 3).nats;
  const double secs = seconds_since(t0);
  return {std::abs(mi - analytic) <= 0.05 && std::abs(indep) < 0.05 && secs < 30.0,
          "rho 0.9: " + fixed(mi) + " vs analytic " + fixed(analytic) + "; independent: " + fixed(indep) + "; " +
              fixed(secs, 1) + " s"};
}

// ---- C5 ---------------------------------------------------------------------------

Outcome dft_psd() {
  Rng rng(501);
  double dft_worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    ComplexGrid x(8, 8);
    for (auto& z : x.data) z = {rng.normal(), rng.normal()};
    const auto ref = oracle::direct_dft2d(x.data, 8, 8);
    const auto got = dft2d(x, FftDirection::forward);
    for (std::size_t i = 0; i < ref.size(); ++i) dft_worst = std::max(dft_worst, std::abs(got.data[i] - ref[i]));
  }
  double parseval_worst = 0.0;
  for (int t = 0; t < 5; ++t) {
    ComplexGrid x(100, 100);
    double energy = 0.0;
    for (auto& z : x.data) {
      z = {rng.normal(), rng.normal()};
      energy += std::norm(z);
    }
    const auto p = power_spectrum(x);
    double total = 0.0;
    for (double v : p.data) total += v;
    parseval_worst = std::max(parseval_worst, std::abs(total - 1e4 * energy) / (1e4 * energy));
  }
  return {dft_worst < 1e-9 && parseval_worst < 1e-6,
          "8x8 vs direct sum max abs err " + sci(dft_worst) + "; Parseval on 100x100 max rel err " +
              sci(parseval_worst)};
}

// ---- C6 ---------------------------------------------------------------------------

Outcome phase_unwrap() {
  const std::size_t n = 64;
  RealChip wrapped(n, n, RealKind::wrapped_phase);
  std::vector<double> truth(n * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      truth[r * n + c] = 0.3 * static_cast<double>(c);
      wrapped.at(r, c) = std::fmod(truth[r * n + c], 2.0 * std::numbers::pi);
    }
  const auto un = unwrap_phase_dct(wrapped);
  double mu = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) {
    mu += un.values.data[i];
    mt += truth[i];
  }
  mu /= static_cast<double>(n * n);
  mt /= static_cast<double>(n * n);
  double worst = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) worst = std::max(worst, std::abs((un.values.data[i] - mu) - (truth[i] - mt)));
  return {worst < 1e-6, "ramp 0.3 rad/pixel on 64x64: max abs err " + sci(worst) + " rad after mean removal"};
}

// ---- C7 / C9 ---------------------------------------------------------------------

struct Replication {
  config::ExperimentConfig config;
  std::vector<lab::Evaluation> evals;
  lab::Comparison comparison;
  double seconds = 0.0;
  std::string error;
};

config::ExperimentConfig replication_config(const fs::path& work) {
  config::ExperimentConfig c;
  c.seed = 7;
  c.out = work / "replication";
  c.synth = {7, default_trials(), 1000, 10.0, 100, 100, 5.0};  // 2000 train / 2000 test chips
  c.train.input_side = 64;
  c.train.max_epochs = 30;
  c.train.patience = 10;
  c.train.early_stop_split = Split::test;  // four trials leave no validation trial
  c.configurations = {ReprSet::parse("mag"), ReprSet::parse("mag+psd")};
  c.analysis.embed = c.configurations;
  return c;
}

Replication run_replication(const fs::path& work) {
  Replication r;
  r.config = replication_config(work);
  const auto t0 = Clock::now();
  try {
    fs::create_directories(r.config.out);
    lab::write_resolved(r.config);
    const auto data = lab::load_dataset(r.config, lab::cmd_synth(r.config));
    lab::train_many(r.config, r.config.configurations, data);
    r.evals = lab::evaluate(r.config, r.config.configurations, data.test);
    r.comparison = lab::cmd_compare(r.config, r.evals);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.seconds = seconds_since(t0);
  return r;
}

Outcome end_to_end(const Replication& r) {
  if (!r.error.empty()) return {false, "run failed: " + r.error};
  const double mag = r.evals[0].roc.auc, joint = r.evals[1].roc.auc;
  const auto& cmp = r.comparison.results.at(0);
  const bool ok = mag >= 0.85 && joint >= mag && cmp.p_value < 0.05 && r.seconds < 1200.0;
  return {ok, "2000/2000 chips, C/T 10, 64x64: mag AUC " + fixed(mag) + " (>= 0.85); mag+psd AUC " + fixed(joint) +
                  "; paired WSR over " + std::to_string(r.comparison.ensembles[0].aucs.size()) +
                  " bootstrap replicates p " + sci(cmp.p_value) + " (< 0.05); " + fixed(r.seconds, 0) +
                  " s (< 1200 s)"};
}

Outcome trial_clustering(const Replication& r) {
  if (!r.error.empty()) return {false, "replication run failed: " + r.error};
  std::vector<lab::SilhouetteRow> rows;
  try {
    const auto records = read_manifest(lab::Layout{r.config.out}.manifest());
    const auto probe =
        lab::analysis_probe(r.config, train::load_split(lab::Layout{r.config.out}.data(), records, Split::test));
    rows = lab::analyze_embed(r.config, probe);
  } catch (const std::exception& e) {
    return {false, std::string("embedding failed: ") + e.what()};
  }
  std::size_t wins = 0, seeds = r.config.analysis.tsne_seeds;
  std::string per_seed;
  for (std::size_t s = 0; s < seeds; ++s) {
    const double mag = rows[s].by_trial, joint = rows[seeds + s].by_trial;
    wins += joint > mag;
    per_seed += (s ? ", " : "") + fixed(joint, 3) + " vs " + fixed(mag, 3);
  }
  return {wins >= 4, "silhouette by trial, mag+psd vs mag, per t-SNE seed: " + per_seed + "; mag+psd higher in " +
                         std::to_string(wins) + "/" + std::to_string(seeds) + " (need >= 4)"};
}

// ---- C8 ---------------------------------------------------------------------------

Outcome early_stopping() {
  auto model = nn::build_model<float>(ReprSet::parse("mag"), 16, 0.0, 1);
  std::vector<double> aucs;
  std::size_t current = 0;
  auto run = [&](std::size_t epoch) {
    current = epoch;
    model.dense_bias().value[0] = static_cast<float>(epoch);
    return 1.0;
  };
  auto monitor = [&] { return aucs[current - 1]; };
  struct Script {
    std::string name;
    std::vector<double> aucs;
    std::size_t max_epochs, patience, stop_after, best;
  };
  std::vector<Script> scripts;
  {
    std::vector<double> a;
    for (int e = 1; e <= 200; ++e) a.push_back(e == 5 ? 0.9 : 0.5 + 0.001 * (e % 7));
    scripts.push_back({"peak@5", a, 200, 20, 25, 5});
  }
  scripts.push_back({"flat", std::vector<double>(200, 0.7), 200, 20, 21, 1});
  scripts.push_back({"single epoch", std::vector<double>(200, 0.7), 1, 20, 1, 1});
  {
    std::vector<double> a;
    for (int e = 1; e <= 200; ++e) a.push_back(0.5 + 0.002 * e);
    scripts.push_back({"rising", a, 60, 20, 60, 60});
  }
  {
    std::vector<double> a(200, 0.6);
    for (std::size_t e = 0; e < 29; ++e) a[e] = 0.5 + 0.003 * static_cast<double>(e);
    a[29] = 0.8;
    a[48] = 0.79;
    scripts.push_back({"peak@30", a, 200, 20, 50, 30});
  }
  bool ok = true;
  std::string detail;
  for (const auto& s : scripts) {
    aucs = s.aucs;
    const auto r = train::fit(model, s.max_epochs, s.patience, run, monitor);
    double mx = 0.0;
    for (const auto& h : r.history) mx = std::max(mx, h.monitored_auc);
    const bool good = r.history.size() == s.stop_after && r.best_epoch == s.best &&
                      model.dense_bias().value[0] == static_cast<float>(s.best) && r.best_auc == mx;
    ok = ok && good;
    detail += (detail.empty() ? "" : "; ") + s.name + " stopped after " + std::to_string(r.history.size()) +
              " snapshot " + std::to_string(static_cast<int>(model.dense_bias().value[0])) +
              (good ? "" : " (expected " + std::to_string(s.stop_after) + "/" + std::to_string(s.best) + ")");
  }
  return {ok, detail};
}

// ---- C10 --------------------------------------------------------------------------

config::ExperimentConfig tiny_config(const fs::path& out) {
  auto c = config::parse(R"(seed = 11
[synth]
chips_per_trial = 60
chip_height = 40
chip_width = 40
[train]
max_epochs = 2
patience = 2
batch_size = 16
input_side = 16
early_stop_on = test
[eval]
bootstrap = 20
[analysis]
perplexity = 5
probe_size = 120
tsne_iterations = 250
tsne_seeds = 2
)");
  c.out = out;
  return c;
}

Outcome determinism(const fs::path& work) {
  try {
    const auto a = work / "determinism_a", b = work / "determinism_b";
    fs::remove_all(a);
    fs::remove_all(b);
    fs::create_directories(a);
    fs::create_directories(b);
    lab::cmd_all(tiny_config(a));
    lab::cmd_all(tiny_config(b));
    const auto sa = io::read_file(a / "summary.tsv");
    bool same = sa == io::read_file(b / "summary.tsv");
    std::size_t models = 0;
    for (const auto& r : standard_configurations()) {
      same = same && io::read_file(a / "models" / r.name() / "model.cnet") ==
                         io::read_file(b / "models" / r.name() / "model.cnet");
      ++models;
    }
    const auto lines = std::count(sa.begin(), sa.end(), '\n');
    return {same, "cmd_all twice with seed 11: summary (" + std::to_string(lines) + " lines) and " +
                      std::to_string(models) + " model files " + (same ? "byte-identical" : "DIFFER")};
  } catch (const std::exception& e) {
    return {false, std::string("cmd_all failed: ") + e.what()};
  }
}

// ---- C11 --------------------------------------------------------------------------

Outcome serialization() {
  Rng rng(1101);
  std::size_t models = 0, chips = 0;
  bool ok = true;
  const auto configs = standard_configurations();
  for (int t = 0; t < 30; ++t) {
    const auto& r = configs[rng.below(configs.size())];
    const std::size_t side = 16 + 4 * rng.below(13);
    auto m = nn::build_model<float>(r, side, rng.uniform(0.0, 0.9), rng());
    for (auto& p : m.params())
      for (auto& v : p.value.values()) v = static_cast<float>(rng.normal(0.0, 3.0));
    const auto bytes = nn::encode_model(m);
    const auto back = nn::decode_model(bytes);
    ok = ok && nn::encode_model(back) == bytes && back.dropout_rate() == m.dropout_rate() && back.reprs() == m.reprs();
    for (std::size_t i = 0; ok && i < m.params().size(); ++i)
      ok = std::memcmp(m.params()[i].value.values().data(), back.params()[i].value.values().data(),
                       m.params()[i].value.size() * sizeof(float)) == 0;
    ++models;
  }
  for (int t = 0; t < 100; ++t) {
    const std::size_t h = 16 + rng.below(50), w = 16 + rng.below(50);
    ComplexChip c(h, w);
    for (auto& z : c.pixels.data) z = {static_cast<float>(rng.normal(0.0, 1e3)), static_cast<float>(rng.normal())};
    c.pixels.data[0] = {std::numeric_limits<float>::denorm_min(), -0.0f};
    const auto bytes = io::encode_chip(c);
    const auto back = io::decode_chip(bytes);
    ok = ok && io::encode_chip(back) == bytes &&
         std::memcmp(back.pixels.data.data(), c.pixels.data.data(), c.pixels.size() * sizeof(c.pixels.data[0])) == 0;
    ++chips;
  }
  return {ok, std::to_string(models) + " random CNET models and " + std::to_string(chips) +
                  " random CHIP files round-trip bit-exact"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  fs::path work = fs::temp_directory_path() / "sasatr_acceptance";
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory for generated data and runs");
  app.add_option("--only", only, "Criteria to run (default all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int c) { return selected.empty() || selected.count(c); };
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](int id, const char* title, const Outcome& o) {
    std::printf("[%s] C%-2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };
  auto guarded = [](auto&& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("threw: ") + e.what()};
    }
  };

  if (wanted(1)) report(1, "gradient correctness", guarded(gradient_correctness));
  if (wanted(2)) report(2, "AUC oracle equivalence", guarded(auc_oracle));
  if (wanted(3)) report(3, "WSR oracle equivalence", guarded(wsr_oracle));
  if (wanted(4)) report(4, "KSG benchmark", guarded(ksg_benchmark));
  if (wanted(5)) report(5, "DFT/PSD", guarded(dft_psd));
  if (wanted(6)) report(6, "phase unwrapping", guarded(phase_unwrap));
  if (wanted(7) || wanted(9)) {
    const auto rep = run_replication(work);
    if (wanted(7)) report(7, "end-to-end synthetic replication", end_to_end(rep));
    if (wanted(9)) report(9, "trial clustering (soft)", guarded([&] { return trial_clustering(rep); }));
  }
  if (wanted(8)) report(8, "early-stopping contract", guarded(early_stopping));
  if (wanted(10)) report(10, "determinism", determinism(work));
  if (wanted(11)) report(11, "serialization", guarded(serialization));
  std::printf("%s: %d failing criteria\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
