// sasatr: command-line front end of the synthetic sonar ATR lab.
//
//   sasatr all --config lab.ini
//   sasatr train --config lab.ini --inputs mag,psd --epochs 40
//   sasatr analyze embed --config lab.ini
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error,
// 3 numeric abort.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>

#include "sasatr/config.hpp"
#include "sasatr/lab.hpp"

namespace {

using namespace sasatr;

enum Exit { kOk = 0, kRuntime = 1, kUsage = 2, kNumeric = 3 };

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> inputs;
  std::optional<std::size_t> epochs;
  std::optional<double> dropout;
  std::optional<double> lr;
  std::optional<std::string> early_stop_on;
  bool psd_linear = false;
  std::optional<unsigned> jobs;
  bool quiet = false;
  std::string pilot_kind = "both";
  std::vector<std::string> analyses{"mi", "embed", "weights"};
};

config::ExperimentConfig resolve(const Flags& f) {
  auto c = f.config_path.empty() ? config::ExperimentConfig{} : config::load(f.config_path);
  if (f.seed) {
    c.seed = *f.seed;
    c.synth.seed = *f.seed;
  }
  if (f.out) c.out = *f.out;
  if (f.jobs) c.jobs = *f.jobs;
  if (f.epochs) config::override_train(c, "max_epochs", std::to_string(*f.epochs));
  if (f.dropout) config::override_train(c, "dropout", config::format_number(*f.dropout));
  if (f.lr) config::override_train(c, "learning_rate", config::format_number(*f.lr));
  if (f.early_stop_on) config::override_train(c, "early_stop_on", *f.early_stop_on);
  if (f.psd_linear) config::override_train(c, "psd_linear", "true");
  if (!f.inputs.empty()) {
    c.configurations.clear();
    for (const auto& s : f.inputs) {
      auto r = ReprSet::parse(s);
      if (std::find(c.configurations.begin(), c.configurations.end(), r) == c.configurations.end())
        c.configurations.push_back(r);
    }
  }
  config::validate(c);
  return c;
}

std::vector<ReprSet> with_reference(const config::ExperimentConfig& c) {
  auto which = c.configurations;
  if (std::find(which.begin(), which.end(), c.eval.reference) == which.end())
    which.insert(which.begin(), c.eval.reference);
  return which;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic sonar ATR lab: data, training, paired comparison and latent analysis"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config_path, "Experiment config (INI)");
  app.add_option("--seed", f.seed, "Global seed, overrides the config");
  app.add_option("--out", f.out, "Run directory");
  app.add_option("--inputs", f.inputs, "Input set such as mag,psd; repeatable");
  app.add_option("--epochs", f.epochs, "Maximum training epochs");
  app.add_option("--dropout", f.dropout, "Dropout rate");
  app.add_option("--lr", f.lr, "Learning rate");
  app.add_option("--early-stop-on", f.early_stop_on, "Monitored split")->check(CLI::IsMember({"val", "test"}));
  app.add_flag("--psd-linear", f.psd_linear, "Skip the log before PSD normalisation");
  app.add_option("--jobs", f.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", f.quiet, "No progress on stderr");

  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset");
  auto* pilot = app.add_subcommand("pilot", "Learning-rate and dropout pilots; writes the resolved config");
  pilot->add_option("kind", f.pilot_kind, "lr, dropout or both")->check(CLI::IsMember({"lr", "dropout", "both"}));
  auto* train = app.add_subcommand("train", "Train the configured input sets (or --inputs)");
  auto* eval = app.add_subcommand("eval", "ROC, AUC and per-trial tables on the test split");
  auto* compare = app.add_subcommand("compare", "Paired bootstrap ensembles and Wilcoxon tests");
  auto* analyze = app.add_subcommand("analyze", "Latent analyses: mi, embed, weights");
  analyze->add_option("which", f.analyses, "Analyses to run")->check(CLI::IsMember({"mi", "embed", "weights"}));
  auto* all = app.add_subcommand("all", "Full grid: data, training, evaluation, comparison, analysis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  const auto t0 = std::chrono::steady_clock::now();
  train::Logger log;
  if (!f.quiet)
    log = [t0](const std::string& m) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "[%8.1fs] %s\n", s, m.c_str());
    };

  config::ExperimentConfig c;
  try {
    c = resolve(f);
  } catch (const Error& e) {
    std::cerr << "sasatr: " << e.what() << "\n";
    return kUsage;
  }

  try {
    std::filesystem::create_directories(c.out);
    if (synth->parsed()) {
      lab::write_resolved(c);
      lab::cmd_synth(c, log);
    } else if (pilot->parsed()) {
      lab::write_resolved(c);
      const auto resolved = lab::cmd_pilot(c, config::parse_pilot(f.pilot_kind), log);
      std::cout << config::encode(resolved);
    } else if (train->parsed()) {
      lab::write_resolved(c);
      const auto data = lab::load_dataset(c, lab::cmd_synth(c, log));
      lab::train_many(c, c.configurations, data, log);
    } else if (eval->parsed()) {
      const auto evals = lab::cmd_eval(c, c.configurations, log);
      std::cout << lab::encode_summary(evals);
    } else if (compare->parsed()) {
      const auto evals = lab::cmd_eval(c, with_reference(c), log);
      std::cout << stats::encode_comparisons(lab::cmd_compare(c, evals, log).results);
    } else if (analyze->parsed()) {
      std::vector<lab::Analysis> which;
      for (const auto& a : f.analyses) which.push_back(lab::parse_analysis(a));
      lab::cmd_analyze(c, which, log);
    } else if (all->parsed()) {
      lab::cmd_all(c, log);
      std::cout << io::read_file(lab::Layout{c.out}.summary());
    }
  } catch (const NumericError& e) {
    std::cerr << "sasatr: numeric abort: " << e.what() << "\n";
    return kNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "sasatr: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "sasatr: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
