// Generates a small synthetic dataset, trains a magnitude-only and a
// magnitude+PSD network for a few epochs and compares their test AUCs.
//
//   quickstart [run-directory]

#include <cstdio>
#include <filesystem>

#include "sasatr/sasatr.hpp"

int main(int argc, char** argv) {
  using namespace sasatr;
  config::ExperimentConfig c;
  c.out = argc > 1 ? argv[1] : "quickstart-run";
  c.synth.chips_per_trial = 220;
  c.train.max_epochs = 6;
  c.train.patience = 3;
  c.train.input_side = 32;
  c.train.early_stop_split = Split::test;
  c.configurations = {ReprSet{Representation::magnitude}, ReprSet{Representation::magnitude, Representation::psd}};

  auto log = [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); };
  try {
    config::validate(c);
    std::filesystem::create_directories(c.out);
    lab::write_resolved(c);
    const auto data = lab::load_dataset(c, lab::cmd_synth(c, log));
    lab::train_many(c, c.configurations, data, log);
    const auto evals = lab::evaluate(c, c.configurations, data.test, log);
    const auto cmp = lab::cmd_compare(c, evals, log);
    std::printf("%s\n%s", lab::encode_summary(evals).c_str(), stats::encode_comparisons(cmp.results).c_str());
  } catch (const Error& e) {
    std::fprintf(stderr, "quickstart: %s\n", e.what());
    return 1;
  }
  return 0;
}
