#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "sasatr/config.hpp"
#include "sasatr/io.hpp"

namespace fs = std::filesystem;
using namespace sasatr;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("sasatr_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Run sasatr_cli(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(SASATR_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = io::read_file(out);
  r.err = io::read_file(err);
  return r;
}

const char* kTiny = R"(seed = 5

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
)";

fs::path write_config(const fs::path& dir, const std::string& text) {
  const auto p = dir / "lab.ini";
  std::ofstream(p) << text;
  return p;
}

std::vector<fs::path> files_under(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(Cli, MissingConfigIsAUsageErrorNamingThePath) {
  const auto dir = scratch("missing");
  const auto r = sasatr_cli("all --config /no/such/lab.ini --out " + (dir / "run").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("/no/such/lab.ini"), std::string::npos) << r.err;
}

TEST(Cli, UsageErrors) {
  const auto dir = scratch("usage");
  EXPECT_EQ(sasatr_cli("", dir).code, 2);
  EXPECT_EQ(sasatr_cli("all --bogus-flag", dir).code, 2);
  EXPECT_EQ(sasatr_cli("train --early-stop-on train", dir).code, 2);
  const auto ots = sasatr_cli("train --inputs mag-ots --out " + (dir / "run").string(), dir);
  EXPECT_EQ(ots.code, 2);
  EXPECT_NE(ots.err.find("off-the-shelf"), std::string::npos) << ots.err;
  const auto bad = write_config(dir, "[train]\nwarmup = 3\n");
  const auto r = sasatr_cli("all --config " + bad.string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("warmup"), std::string::npos);
  EXPECT_EQ(sasatr_cli("--help", dir).code, 0);
}

TEST(Cli, AllIsDeterministicAndReproducibleFromResolvedConfig) {
  const auto dir = scratch("all");
  const auto cfg = write_config(dir, kTiny);
  const auto a = dir / "a", b = dir / "b", c = dir / "c";
  const auto ra = sasatr_cli("all -q --config " + cfg.string() + " --out " + a.string(), dir);
  ASSERT_EQ(ra.code, 0) << ra.err;
  const auto rb = sasatr_cli("all -q --jobs 3 --config " + cfg.string() + " --out " + b.string(), dir);
  ASSERT_EQ(rb.code, 0) << rb.err;

  const auto summary = io::read_file(a / "summary.tsv");
  EXPECT_EQ(summary, io::read_file(b / "summary.tsv"));
  EXPECT_EQ(ra.out, summary);
  for (const auto& r : standard_configurations())
    EXPECT_EQ(io::read_file(a / "models" / r.name() / "model.cnet"), io::read_file(b / "models" / r.name() / "model.cnet"))
        << r.name();
  EXPECT_EQ(io::read_file(a / "compare" / "comparisons.tsv"), io::read_file(b / "compare" / "comparisons.tsv"));
  EXPECT_EQ(io::read_file(a / "analysis" / "silhouette.tsv"), io::read_file(b / "analysis" / "silhouette.tsv"));

  // Summary: header + test trials + All, six configuration columns.
  std::vector<std::string> lines;
  for (std::size_t s = 0, e; s < summary.size(); s = e + 1) {
    e = summary.find('\n', s);
    lines.push_back(summary.substr(s, e - s));
  }
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(io::split(lines[0], '\t').size(), 8u);
  EXPECT_EQ(lines[1].substr(0, 4), "T03\t");
  EXPECT_EQ(lines[2].substr(0, 4), "T04\t");
  EXPECT_EQ(lines[3].substr(0, 4), "All\t");

  // The resolved config alone reproduces the run.
  const auto rc = sasatr_cli("all -q --config " + (a / "resolved.ini").string() + " --out " + c.string(), dir);
  ASSERT_EQ(rc.code, 0) << rc.err;
  EXPECT_EQ(io::read_file(c / "summary.tsv"), summary);
  const auto resolved = config::load(a / "resolved.ini");
  EXPECT_EQ(resolved.seed, 5u);
  EXPECT_EQ(resolved.train.input_side, 16u);

  // Atomic writes leave no temporaries behind.
  for (const auto& f : files_under(a)) EXPECT_EQ(f.string().find(".tmp"), std::string::npos) << f;
  for (const char* f : {"eval/roc.svg", "compare/auc_box.svg", "compare/ensembles.tsv", "analysis/mi.tsv",
                        "analysis/embed/mag+psd_seed2.tsv", "analysis/weights/mag+psd/psd_dense_sum.pgm",
                        "models/mag/history.tsv", "models/mag/run.txt", "data/manifest.tsv"})
    EXPECT_TRUE(fs::exists(a / f)) << f;
}

TEST(Cli, SubcommandsShareOneRunDirectory) {
  const auto dir = scratch("steps");
  const auto cfg = write_config(dir, kTiny);
  const std::string common = " -q --config " + cfg.string() + " --out " + (dir / "run").string();
  ASSERT_EQ(sasatr_cli("synth" + common, dir).code, 0);
  EXPECT_TRUE(fs::exists(dir / "run" / "data" / "manifest.tsv"));
  const auto tr = sasatr_cli("train --inputs mag --inputs mag,psd --epochs 1" + common, dir);
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_TRUE(fs::exists(dir / "run" / "models" / "mag+psd" / "model.cnet"));
  EXPECT_FALSE(fs::exists(dir / "run" / "models" / "phase"));
  const auto ev = sasatr_cli("eval --inputs mag --inputs mag+psd" + common, dir);
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("All\t"), std::string::npos);
  const auto cmp = sasatr_cli("compare --inputs mag+psd" + common, dir);
  ASSERT_EQ(cmp.code, 0) << cmp.err;
  EXPECT_NE(cmp.out.find("mag\tmag+psd"), std::string::npos) << cmp.out;
  const auto an = sasatr_cli("analyze weights --inputs mag+psd" + common, dir);
  ASSERT_EQ(an.code, 0) << an.err;
  EXPECT_TRUE(fs::exists(dir / "run" / "analysis" / "weights" / "mag+psd" / "mag_filters.pgm"));
  const auto missing = sasatr_cli("eval --inputs psd" + common, dir);
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("no trained model for psd"), std::string::npos) << missing.err;
}

TEST(Cli, DivergentTrainingIsANumericAbort) {
  const auto dir = scratch("nan");
  const auto cfg = write_config(dir, kTiny);
  const auto r = sasatr_cli("train -q --inputs mag --lr 1e30 --config " + cfg.string() + " --out " +
                                (dir / "run").string(),
                            dir);
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("numeric abort"), std::string::npos);
}

TEST(Cli, PilotWritesChosenValuesIntoTheResolvedConfig) {
  const auto dir = scratch("pilot");
  const auto cfg = write_config(dir, std::string(kTiny) + "\n");
  // The pilot subset is 10% of training chips and must hold at least 200.
  std::string text = kTiny;
  text.replace(text.find("chips_per_trial = 60"), 20, "chips_per_trial = 1000");
  write_config(dir, text);
  const auto r = sasatr_cli("pilot both -q --inputs mag --config " + cfg.string() + " --out " + (dir / "run").string(),
                            dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto resolved = config::load(dir / "run" / "resolved.ini");
  ASSERT_EQ(resolved.overrides.count("mag"), 1u);
  const auto t = config::resolve_train(resolved, ReprSet::parse("mag"));
  EXPECT_NE(std::find(train::kPilotLearningRates.begin(), train::kPilotLearningRates.end(), t.learning_rate),
            train::kPilotLearningRates.end());
  EXPECT_NE(std::find(train::kPilotDropoutRates.begin(), train::kPilotDropoutRates.end(), t.dropout_rate),
            train::kPilotDropoutRates.end());
  const auto report = io::read_file(dir / "run" / "pilots.tsv");
  EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 1 + 6 + 5);
}
