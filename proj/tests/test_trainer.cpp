#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "sasatr/nn/serialize.hpp"
#include "sasatr/synth.hpp"
#include "sasatr/trainer.hpp"

using namespace sasatr;
using namespace sasatr::train;

namespace {

// Pixel (r, c) holds (r, c) so crops reveal their offsets.
ComplexChip coordinate_chip(std::size_t h, std::size_t w) {
  ComplexChip chip(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) chip.at(r, c) = {static_cast<float>(r), static_cast<float>(c)};
  return chip;
}

// Small synthetic set: targets carry a bright block, clutter does not.
LabeledChips tiny_set(std::size_t n, std::size_t side, std::uint64_t seed, std::size_t every = 4) {
  LabeledChips d;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    auto chip = gen_speckle(side, side, 1.0, rng);
    const int label = i % every == 0;
    if (label)
      for (std::size_t r = side / 2 - 2; r < side / 2 + 2; ++r)
        for (std::size_t c = side / 2 - 2; c < side / 2 + 2; ++c) chip.at(r, c) *= 8.0f;
    d.push_back(std::move(chip), label, "c" + std::to_string(i), i % 2 ? "T01" : "T02");
  }
  return d;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.input_side = 16;
  c.batch_size = 8;
  c.max_epochs = 2;
  c.seed = 5;
  c.early_stop_split = Split::test;
  return c;
}

}  // namespace

TEST(Augment, VflipIsAnInvolutionReversingRows) {
  Rng rng(1);
  const auto chip = gen_speckle(20, 17, 1.0, rng);
  const auto f = augment_vflip(chip);
  EXPECT_EQ(augment_vflip(f), chip);
  for (std::size_t c = 0; c < 17; ++c) EXPECT_EQ(f.at(0, c), chip.at(19, c));
  std::vector<float> a, b;
  for (auto z : chip.pixels.data) a.push_back(std::abs(z));
  for (auto z : f.pixels.data) b.push_back(std::abs(z));
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}

TEST(Augment, RandomCropWindowAndOffsets) {
  const auto chip = coordinate_chip(100, 100);
  Rng rng(2);
  std::set<std::size_t> rows, cols;
  for (int i = 0; i < 3000; ++i) {
    const auto c = augment_random_crop(chip, 0.8, rng);
    ASSERT_EQ(c.height(), 80u);
    ASSERT_EQ(c.width(), 80u);
    const auto r0 = static_cast<std::size_t>(c.at(0, 0).real());
    const auto c0 = static_cast<std::size_t>(c.at(0, 0).imag());
    ASSERT_LE(r0, 20u);
    ASSERT_LE(c0, 20u);
    rows.insert(r0);
    cols.insert(c0);
    if (i < 20) {
      for (std::size_t r = 0; r < 80; ++r)
        for (std::size_t k = 0; k < 80; ++k) ASSERT_EQ(c.at(r, k), chip.at(r0 + r, c0 + k));
    }
  }
  EXPECT_EQ(rows.size(), 21u);
  EXPECT_EQ(cols.size(), 21u);
  EXPECT_EQ(augment_random_crop(chip, 1.0, rng), chip);
  EXPECT_THROW(augment_random_crop(coordinate_chip(18, 18), 0.8, rng), ShapeError);
  const auto centre = center_crop(chip, 0.8);
  EXPECT_EQ(centre.at(0, 0), chip.at(10, 10));
}

TEST(BalancedSampler, HalfTargetsEveryBatch) {
  std::vector<int> labels(110, 0);
  for (std::size_t i = 0; i < labels.size(); i += 11) labels[i] = 1;
  BalancedSampler s(labels, 16);
  EXPECT_EQ(s.default_steps_per_epoch(), (2 * 100 + 15) / 16);
  Rng rng(3);
  for (int b = 0; b < 50; ++b) {
    const auto batch = s.next(rng);
    ASSERT_EQ(batch.size(), 16u);
    int pos = 0;
    for (const auto& d : batch) {
      EXPECT_EQ(d.label, labels[d.index]);
      pos += d.label;
      if (d.label == 0) {
        EXPECT_FALSE(d.flip);
      }
    }
    EXPECT_EQ(pos, 8);
  }
}

TEST(BalancedSampler, MajorityWithoutReplacementPerPass) {
  std::vector<int> labels(110, 0);
  for (std::size_t i = 0; i < labels.size(); i += 11) labels[i] = 1;
  BalancedSampler s(labels, 20);
  Rng rng(4);
  std::vector<std::size_t> seen;
  for (int b = 0; b < 20; ++b)
    for (const auto& d : s.next(rng))
      if (d.label == 0) seen.push_back(d.index);
  // 200 majority draws = two full passes over the 100 clutter chips.
  for (std::size_t pass = 0; pass < 2; ++pass) {
    std::set<std::size_t> unique(seen.begin() + static_cast<std::ptrdiff_t>(pass * 100),
                                 seen.begin() + static_cast<std::ptrdiff_t>(pass * 100 + 100));
    EXPECT_EQ(unique.size(), 100u);
  }
  BalancedSampler a(labels, 20), b(labels, 20);
  Rng ra(9), rb(9);
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next(ra), y = b.next(rb);
    for (std::size_t k = 0; k < x.size(); ++k) {
      EXPECT_EQ(x[k].index, y[k].index);
      EXPECT_EQ(x[k].flip, y[k].flip);
    }
  }
  EXPECT_THROW(BalancedSampler(std::vector<int>(10, 0), 4), ConfigError);
  EXPECT_THROW(BalancedSampler(labels, 7), InvalidParameter);
}

TEST(EarlyStopping, ScriptedSequencesStopAndSnapshot) {
  // Scripted AUC peaking at epoch 5; the dense bias records the epoch.
  auto model = nn::build_model<float>(ReprSet::parse("mag"), 16, 0.0, 1);
  std::vector<double> aucs;
  for (int e = 1; e <= 60; ++e) aucs.push_back(e == 5 ? 0.9 : 0.5 + 0.001 * (e % 7));
  std::size_t current = 0;
  auto run = [&](std::size_t epoch) {
    current = epoch;
    model.dense_bias().value[0] = static_cast<float>(epoch);
    return 1.0;
  };
  auto monitor = [&] { return aucs[current - 1]; };
  const auto r = fit(model, 200, 20, run, monitor);
  EXPECT_EQ(r.history.size(), 25u);
  EXPECT_EQ(r.best_epoch, 5u);
  EXPECT_EQ(model.dense_bias().value[0], 5.0f);
  double mx = 0.0;
  for (const auto& h : r.history) mx = std::max(mx, h.monitored_auc);
  EXPECT_EQ(r.best_auc, mx);

  // Ties keep the earlier epoch; max_epochs caps the run.
  aucs.assign(60, 0.7);
  const auto flat = fit(model, 200, 3, run, monitor);
  EXPECT_EQ(flat.history.size(), 4u);
  EXPECT_EQ(model.dense_bias().value[0], 1.0f);
  const auto one = fit(model, 1, 20, run, monitor);
  EXPECT_EQ(one.history.size(), 1u);
  EXPECT_EQ(one.best_epoch, 1u);

  // Steadily improving: never stops early.
  for (std::size_t i = 0; i < aucs.size(); ++i) aucs[i] = 0.5 + 0.005 * static_cast<double>(i);
  const auto rising = fit(model, 40, 20, run, monitor);
  EXPECT_EQ(rising.history.size(), 40u);
  EXPECT_EQ(model.dense_bias().value[0], 40.0f);
}

TEST(EarlyStopping, NonFiniteLossAborts) {
  auto model = nn::build_model<float>(ReprSet::parse("mag"), 16, 0.0, 1);
  EXPECT_THROW(fit(model, 5, 2, [](std::size_t) { return std::nan(""); }, [] { return 0.5; }), NumericError);
}

TEST(Pilots, LearningRateRule) {
  std::vector<PilotCurve> curves{{1e-4, {1.0, 0.9, 0.8}, 0},
                                 {1e-3, {1.0, 0.8, 0.7}, 0},
                                 {1e-2, {1.0, 0.5, 0.6}, 0},
                                 {1e-5, {1.0, 0.99, 0.98}, 0}};
  const auto r = select_learning_rate(curves);
  EXPECT_EQ(r.chosen, 1e-3);
  EXPECT_FALSE(r.fallback);
  std::reverse(curves.begin(), curves.end());
  EXPECT_EQ(select_learning_rate(curves).chosen, 1e-3);
  // A constant loss never strictly decreases.
  std::vector<PilotCurve> flat{{1e-3, {0.69, 0.69, 0.69}, 0}, {1e-5, {0.69, 0.69, 0.69}, 0}};
  const auto f = select_learning_rate(flat);
  EXPECT_TRUE(f.fallback);
  EXPECT_EQ(f.chosen, 1e-5);
}

TEST(Pilots, DropoutRule) {
  std::vector<PilotCurve> equal;
  for (double r : kPilotDropoutRates) equal.push_back({r, {}, 0.8});
  EXPECT_EQ(select_dropout(equal).chosen, 0.90);
  equal[2].auc = 0.85;
  EXPECT_EQ(select_dropout(equal).chosen, 0.66);
}

TEST(Pilots, RealPilotRunsAreDeterministic) {
  const auto data = tiny_set(220, 20, 7);
  auto cfg = tiny_config();
  const std::vector<double> lrs{1e-4, 1e-3};
  const auto a = lr_pilot(cfg, data, lrs, 3);
  const auto b = lr_pilot(cfg, data, lrs, 3);
  ASSERT_EQ(a.curves.size(), 2u);
  EXPECT_EQ(a.chosen, b.chosen);
  EXPECT_EQ(a.curves[1].losses, b.curves[1].losses);
  EXPECT_THROW(lr_pilot(cfg, tiny_set(100, 20, 7), lrs, 1), ConfigError);

  const auto monitor = prepare_eval_set(tiny_set(40, 20, 8), {Representation::magnitude}, 16, 0.8, {});
  const auto d1 = dropout_pilot(cfg, data, monitor, {0.0, 0.5}, 2);
  const auto d2 = dropout_pilot(cfg, data, monitor, {0.0, 0.5}, 2);
  EXPECT_EQ(d1.chosen, d2.chosen);
}

TEST(Pilots, StratifiedSubsetKeepsClassShares) {
  std::vector<int> labels(1100, 0);
  for (std::size_t i = 0; i < labels.size(); i += 11) labels[i] = 1;
  Rng rng(3);
  const auto idx = stratified_subset(labels, 0.1, rng);
  int pos = 0;
  for (auto i : idx) pos += labels[i];
  EXPECT_EQ(idx.size(), 110u);
  EXPECT_EQ(pos, 10);
}

TEST(Train, SameSeedSameHistoryAndModelBytes) {
  const auto data = tiny_set(48, 24, 11);
  const auto monitor = prepare_eval_set(tiny_set(24, 24, 12), {Representation::magnitude, Representation::psd}, 16,
                                        0.8, {});
  auto cfg = tiny_config();
  cfg.reprs = ReprSet::parse("mag+psd");
  const auto a = train::train(cfg, data, monitor);
  const auto b = train::train(cfg, data, monitor);
  ASSERT_EQ(a.history.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].monitored_auc, b.history[i].monitored_auc);
    EXPECT_GE(a.history[i].monitored_auc, 0.0);
    EXPECT_LE(a.history[i].monitored_auc, 1.0);
  }
  EXPECT_EQ(nn::encode_model(a.model), nn::encode_model(b.model));
  EXPECT_EQ(stats::auc(predict(a.model, monitor), monitor.labels), a.best_auc);

  cfg.max_epochs = 1;
  const auto one = train::train(cfg, data, monitor);
  EXPECT_EQ(one.history.size(), 1u);
  EXPECT_EQ(one.best_epoch, 1u);
}

TEST(Predict, DeterministicBoundedAndOrderEquivariant) {
  const auto chips = tiny_set(30, 24, 13);
  const auto model = nn::build_model<float>(ReprSet::parse("mag,phase"), 16, 0.5, 3);
  const auto s1 = predict(model, chips, model.reprs());
  const auto s2 = predict(model, chips, model.reprs());
  EXPECT_EQ(s1, s2);
  for (double s : s1) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
  std::vector<std::size_t> perm(chips.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = (i * 7) % perm.size();
  const auto sp = predict(model, chips.subset(perm), model.reprs());
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(sp[i], s1[perm[i]]);
  EXPECT_THROW(predict(model, chips, ReprSet::parse("mag")), InvalidParameter);
}

TEST(Artifacts, HistoryAndRunManifest) {
  std::vector<EpochRecord> h{{1, 0.5, 0.75, 1.25}, {2, 0.25, 0.8, 1.0}};
  EXPECT_EQ(encode_history(h),
            "epoch\ttrain_loss\tmonitored_auc\tseconds\n1\t0.500000\t0.750000\t1.250\n2\t0.250000\t0.800000\t1.000\n");
  const auto m = encode_run_manifest(tiny_config());
  EXPECT_NE(m.find("early_stop_on = test\n"), std::string::npos);
  EXPECT_NE(m.find("steps_per_epoch = auto\n"), std::string::npos);
}
