#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "sasatr/chip.hpp"
#include "sasatr/error.hpp"
#include "sasatr/fft.hpp"
#include "sasatr/io.hpp"
#include "sasatr/rng.hpp"

namespace sasatr {

/// Per-trial environment: background speckle level, trial-wide gain and a
/// multiplicative seabed texture.
struct TrialProfile {
  std::string name;
  double speckle_sigma = 1.0;
  double gain_db = 0.0;
  double corr_range = 4.0;  // texture correlation length along columns, pixels
  double corr_cross = 4.0;  // along rows, pixels
  double texture_depth = 0.3;
  double band_range = 1.0;  // occupied fraction of the spatial-frequency band along columns, (0,1]
  double band_cross = 1.0;  // along rows
};

inline void validate(const TrialProfile& p) {
  if (p.name.empty()) throw InvalidParameter("trial profile needs a name");
  if (!(p.speckle_sigma > 0.0)) throw InvalidParameter("speckle_sigma must be positive for trial " + p.name);
  if (!(p.texture_depth >= 0.0 && p.texture_depth < 1.0))
    throw InvalidParameter("texture_depth must lie in [0,1) for trial " + p.name);
  if (!(p.corr_range >= 1.0 && p.corr_cross >= 1.0))
    throw InvalidParameter("texture correlation lengths must be >= 1 pixel for trial " + p.name);
  if (!std::isfinite(p.gain_db)) throw InvalidParameter("gain_db must be finite for trial " + p.name);
  if (!(p.band_range > 0.0 && p.band_range <= 1.0 && p.band_cross > 0.0 && p.band_cross <= 1.0))
    throw InvalidParameter("system band fractions must lie in (0,1] for trial " + p.name);
}

struct SynthConfig {
  std::uint64_t seed = 1;
  std::vector<TrialProfile> trials;  // chronological order
  std::size_t chips_per_trial = 100;
  double clutter_to_target_ratio = 10.0;
  std::size_t chip_height = 100;
  std::size_t chip_width = 100;
  double extent_m = 5.0;
};

/// Four trials with distinct texture anisotropy, gain and system band.
inline std::vector<TrialProfile> default_trials() {
  return {
      {"T01", 1.0, 0.0, 6.0, 1.5, 0.35, 1.0, 0.6},
      {"T02", 1.0, 6.0, 1.5, 6.0, 0.35, 0.6, 1.0},
      {"T03", 1.0, -4.0, 8.0, 8.0, 0.4, 0.75, 0.75},
      {"T04", 1.0, 3.0, 1.0, 1.0, 0.2, 1.0, 1.0},
  };
}

inline void validate(const SynthConfig& c) {
  if (c.trials.size() < 2) throw InvalidParameter("at least two trials are needed so train and test are non-empty");
  for (const auto& t : c.trials) validate(t);
  for (std::size_t i = 0; i < c.trials.size(); ++i)
    for (std::size_t j = i + 1; j < c.trials.size(); ++j)
      if (c.trials[i].name == c.trials[j].name) throw InvalidParameter("duplicate trial name " + c.trials[i].name);
  if (!(c.clutter_to_target_ratio >= 1.0)) throw InvalidParameter("clutter_to_target_ratio must be >= 1");
  if (c.chip_height < kMinChipSide || c.chip_width < kMinChipSide)
    throw InvalidParameter("chips must be at least 16x16 pixels");
  if (c.chips_per_trial < 2) throw InvalidParameter("chips_per_trial must be >= 2");
}

enum class Split { train, validation, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "validation" || s == "val") return Split::validation;
  if (s == "test") return Split::test;
  throw InvalidParameter("unknown split '" + std::string(s) + "'");
}

struct ChipRecord {
  std::string chip_id;
  int label = 0;  // 0 clutter, 1 target
  std::string trial_name;
  Split split = Split::train;
  std::string path;  // relative to the manifest directory

  bool operator==(const ChipRecord&) const = default;
};

// ---- primitives -------------------------------------------------------------

/// Circular complex Gaussian speckle: independent N(0, sigma^2) real and
/// imaginary parts, so |z| is Rayleigh(sigma).
inline ComplexChip gen_speckle(std::size_t h, std::size_t w, double sigma, Rng& rng) {
  if (!(sigma > 0.0)) throw InvalidParameter("speckle sigma must be positive");
  if (h < kMinChipSide || w < kMinChipSide) throw InvalidParameter("speckle chip must be at least 16x16");
  ComplexChip chip(h, w);
  for (auto& z : chip.pixels.data) {
    const double re = rng.normal(0.0, sigma);
    const double im = rng.normal(0.0, sigma);
    z = {static_cast<float>(re), static_cast<float>(im)};
  }
  return chip;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-0.5 * d * d / (sigma * sigma));
  }
  return k;
}

/// White noise low-passed by a separable Gaussian (std `sigma_cols` along
/// columns, `sigma_rows` along rows). Noise is drawn on a padded support so the
/// field has no edge roll-off.
template <class T>
Grid<T> smooth_noise(std::size_t h, std::size_t w, double sigma_cols, double sigma_rows, Rng& rng) {
  const auto kc = gaussian_kernel(sigma_cols);
  const auto kr = gaussian_kernel(sigma_rows);
  const std::size_t pc = kc.size() / 2;
  const std::size_t pr = kr.size() / 2;
  const std::size_t H = h + 2 * pr;
  const std::size_t W = w + 2 * pc;
  Grid<T> noise(H, W);
  for (auto& v : noise.data) {
    if constexpr (std::is_same_v<T, std::complex<double>>) {
      const double re = rng.normal();
      const double im = rng.normal();
      v = {re, im};
    } else {
      v = rng.normal();
    }
  }
  Grid<T> rows_pass(H, w);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      T acc{};
      for (std::size_t i = 0; i < kc.size(); ++i) acc += kc[i] * noise(r, c + i);
      rows_pass(r, c) = acc;
    }
  Grid<T> out(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      T acc{};
      for (std::size_t i = 0; i < kr.size(); ++i) acc += kr[i] * rows_pass(r + i, c);
      out(r, c) = acc;
    }
  return out;
}

/// Zero-mean, unit-std smooth field (sample-normalized).
inline Grid<double> texture_field(std::size_t h, std::size_t w, double corr_range, double corr_cross, Rng& rng) {
  auto s = smooth_noise<double>(h, w, corr_range, corr_cross, rng);
  double mean = 0.0;
  for (double v : s.data) mean += v;
  mean /= static_cast<double>(s.size());
  double var = 0.0;
  for (double v : s.data) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(s.size()));
  for (auto& v : s.data) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  return s;
}

/// Lowest texture multiplier. 1 + depth*s is unbounded below for a Gaussian
/// field, and a negative factor would flip the pixel phase.
inline constexpr double kTextureFloor = 0.02;

/// Multiplies pixel magnitudes by 1 + depth*s(x,y) and the trial gain; the
/// phase is unchanged.
inline ComplexChip apply_texture(const ComplexChip& chip, const TrialProfile& profile, Rng& rng) {
  validate(chip);
  validate(profile);
  ComplexChip out = chip;
  const double gain = std::pow(10.0, profile.gain_db / 20.0);
  if (profile.texture_depth == 0.0) {
    if (gain != 1.0)
      for (auto& z : out.pixels.data) z *= static_cast<float>(gain);
    return out;
  }
  const auto s = texture_field(chip.height(), chip.width(), profile.corr_range, profile.corr_cross, rng);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double t = std::max(1.0 + profile.texture_depth * s.data[i], kTextureFloor);
    out.pixels.data[i] = std::complex<float>(std::complex<double>(chip.pixels.data[i]) * (t * gain));
  }
  return out;
}

/// Imaging-system response of a trial: the speckle spectrum is weighted by a
/// separable Hann window spanning `band_range` x `band_cross` of the band,
/// then rescaled to keep the chip's mean power. Full band on both axes is the
/// identity.
inline ComplexChip apply_system_response(const ComplexChip& chip, const TrialProfile& profile) {
  validate(chip);
  validate(profile);
  if (profile.band_range == 1.0 && profile.band_cross == 1.0) return chip;
  auto window = [](std::size_t k, std::size_t n, double band) {
    const double f = static_cast<double>(std::min(k, n - k)) / static_cast<double>(n);  // in [0, 0.5]
    const double u = f / (0.5 * band);
    if (u >= 1.0) return 0.0;
    const double c = std::cos(0.5 * std::numbers::pi * u);
    return c * c;
  };
  auto spec = dft2d(to_complex_grid(chip), FftDirection::forward);
  for (std::size_t r = 0; r < spec.rows; ++r) {
    const double wr = window(r, spec.rows, profile.band_cross);
    for (std::size_t c = 0; c < spec.cols; ++c) spec(r, c) *= wr * window(c, spec.cols, profile.band_range);
  }
  const auto shaped = dft2d(spec, FftDirection::inverse);
  double before = 0.0, after = 0.0;
  for (const auto& z : chip.pixels.data) before += std::norm(std::complex<double>(z));
  for (const auto& z : shaped.data) after += std::norm(z);
  const double scale = after > 0.0 ? std::sqrt(before / after) : 0.0;
  ComplexChip out = chip;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels.data[i] = std::complex<float>(shaped.data[i] * scale);
  return out;
}

enum MaskLabel : std::uint8_t { kBackground = 0, kHighlight = 1, kShadow = 2, kClutter = 3 };

struct TargetInsertion {
  ComplexChip chip;
  Grid<std::uint8_t> mask;
  double highlight_gain = 0.0;
  double shadow_gain = 0.0;
};

/// Fraction of each side kept clear of highlights, so that any 0.8 crop
/// contains the whole highlight.
inline constexpr double kObjectMargin = 0.2;

/// Target model: a bright elliptical highlight with a spatially coherent phase
/// (constant + linear + small quadratic term, replacing the speckle phase)
/// followed in range by a shadow of the same cross-range width.
inline TargetInsertion insert_target(const ComplexChip& chip, Rng& rng) {
  validate(chip);
  const auto h = static_cast<double>(chip.height());
  const auto w = static_cast<double>(chip.width());
  double r0 = 0, c0 = 0, ar = 0, ac = 0, len = 0;
  for (int attempt = 0;; ++attempt) {
    ar = rng.uniform(0.03, 0.08) * h;
    ac = rng.uniform(0.02, 0.05) * w;
    ar = std::max(ar, 1.5);
    ac = std::max(ac, 1.0);
    len = rng.uniform(0.05, 0.20) * w;
    r0 = rng.uniform(kObjectMargin * h + ar, (1.0 - kObjectMargin) * h - ar - 1.0);
    c0 = rng.uniform(kObjectMargin * w + ac, (1.0 - kObjectMargin) * w - ac - 1.0);
    const bool fits = 2.0 * ar <= 0.4 * h && 2.0 * ac <= 0.4 * w && c0 + ac + len < w - 1.0 && r0 - ar >= 0.0;
    if (fits) break;
    if (attempt > 1000) throw InvalidParameter("chip too small to host a target");
  }
  const double a_h = rng.uniform(3.0, 6.0);
  const double a_s = rng.uniform(0.05, 0.3);
  const double phi0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double slope_c = rng.uniform(0.4, 1.2) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  const double slope_r = rng.uniform(-0.3, 0.3);
  const double curv = rng.uniform(-0.02, 0.02);

  TargetInsertion res{chip, Grid<std::uint8_t>(chip.height(), chip.width(), kBackground), a_h, a_s};
  for (std::size_t r = 0; r < chip.height(); ++r) {
    const double dr = (static_cast<double>(r) - r0) / ar;
    if (std::abs(dr) > 1.0) continue;
    const double half = ac * std::sqrt(1.0 - dr * dr);
    for (std::size_t c = 0; c < chip.width(); ++c) {
      const double dc = static_cast<double>(c) - c0;
      if (std::abs(dc) <= half) {
        const double y = static_cast<double>(r) - r0;
        const double psi = phi0 + slope_r * y + slope_c * dc + curv * (y * y + dc * dc);
        const double mag = a_h * std::abs(std::complex<double>(chip.at(r, c)));
        res.chip.at(r, c) = std::complex<float>(std::polar(mag, psi));
        res.mask(r, c) = kHighlight;
      } else if (dc > half && dc <= half + len) {
        res.chip.at(r, c) *= static_cast<float>(a_s);
        res.mask(r, c) = kShadow;
      }
    }
  }
  return res;
}

enum class ClutterKind { blob, texture_anomaly };

struct ClutterInsertion {
  ComplexChip chip;
  ClutterKind kind = ClutterKind::blob;
  Grid<std::uint8_t> mask;
  Grid<float> magnitude_factor;  // |out| / |in| per pixel (blob variant); 1 elsewhere
};

/// Clutter model. Half the time an irregular bright blob (union of a few
/// ellipses, amplitude x[2,5], speckle phase kept, no shadow); otherwise a
/// texture anomaly: a disk of spatially correlated, frequency-shifted speckle
/// whose mean power equals the background it replaces.
inline ClutterInsertion insert_clutter_object_detailed(const ComplexChip& chip, Rng& rng) {
  validate(chip);
  const auto h = static_cast<double>(chip.height());
  const auto w = static_cast<double>(chip.width());
  ClutterInsertion res{chip, ClutterKind::blob, Grid<std::uint8_t>(chip.height(), chip.width(), kBackground),
                       Grid<float>(chip.height(), chip.width(), 1.0f)};
  if (rng.bernoulli(0.5)) {
    res.kind = ClutterKind::blob;
    const double amp = rng.uniform(2.0, 5.0);
    const double rc = rng.uniform(kObjectMargin * h + 0.08 * h, (1.0 - kObjectMargin) * h - 0.08 * h);
    const double cc = rng.uniform(kObjectMargin * w + 0.06 * w, (1.0 - kObjectMargin) * w - 0.06 * w);
    const int lobes = 2 + static_cast<int>(rng.below(3));
    struct Lobe {
      double r, c, ar, ac;
    };
    std::vector<Lobe> parts;
    for (int i = 0; i < lobes; ++i)
      parts.push_back({rc + rng.uniform(-0.03, 0.03) * h, cc + rng.uniform(-0.02, 0.02) * w,
                       rng.uniform(0.02, 0.05) * h + 1.0, rng.uniform(0.015, 0.04) * w + 1.0});
    for (std::size_t r = 0; r < chip.height(); ++r)
      for (std::size_t c = 0; c < chip.width(); ++c) {
        bool inside = false;
        for (const auto& p : parts) {
          const double dr = (static_cast<double>(r) - p.r) / p.ar;
          const double dc = (static_cast<double>(c) - p.c) / p.ac;
          inside = inside || dr * dr + dc * dc <= 1.0;
        }
        if (inside) {
          res.chip.at(r, c) *= static_cast<float>(amp);
          res.mask(r, c) = kClutter;
          res.magnitude_factor(r, c) = static_cast<float>(amp);
        }
      }
    return res;
  }

  res.kind = ClutterKind::texture_anomaly;
  const double radius = rng.uniform(0.10, 0.18) * std::min(h, w);
  const double rc = rng.uniform(kObjectMargin * h, (1.0 - kObjectMargin) * h);
  const double cc = rng.uniform(kObjectMargin * w, (1.0 - kObjectMargin) * w);
  const double corr = rng.uniform(1.0, 2.5);
  const double k = rng.uniform(0.8, 2.0);
  const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double kr = k * std::sin(dir);
  const double kc = k * std::cos(dir);
  auto field = smooth_noise<std::complex<double>>(chip.height(), chip.width(), corr, corr, rng);

  double bg_power = 0.0, field_power = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < chip.height(); ++r)
    for (std::size_t c = 0; c < chip.width(); ++c) {
      const double dr = static_cast<double>(r) - rc;
      const double dc = static_cast<double>(c) - cc;
      if (dr * dr + dc * dc > radius * radius) continue;
      bg_power += std::norm(std::complex<double>(chip.at(r, c)));
      field_power += std::norm(field(r, c));
      ++count;
    }
  if (count == 0 || field_power <= 0.0) return res;
  const double scale = std::sqrt(bg_power / field_power);
  for (std::size_t r = 0; r < chip.height(); ++r)
    for (std::size_t c = 0; c < chip.width(); ++c) {
      const double dr = static_cast<double>(r) - rc;
      const double dc = static_cast<double>(c) - cc;
      if (dr * dr + dc * dc > radius * radius) continue;
      const auto carrier = std::polar(1.0, kr * static_cast<double>(r) + kc * static_cast<double>(c));
      res.chip.at(r, c) = std::complex<float>(field(r, c) * scale * carrier);
      res.mask(r, c) = kClutter;
    }
  return res;
}

inline ComplexChip insert_clutter_object(const ComplexChip& chip, Rng& rng) {
  return insert_clutter_object_detailed(chip, rng).chip;
}

// ---- dataset ---------------------------------------------------------------

/// Chronological split: the first ceil(T/2) trials train (the last
/// floor(0.2 * that) of them become validation), the rest test.
inline std::vector<Split> trial_splits(std::size_t n_trials) {
  const std::size_t n_train = (n_trials + 1) / 2;
  const std::size_t n_val = n_train / 5;
  std::vector<Split> s(n_trials, Split::test);
  for (std::size_t i = 0; i < n_train; ++i) s[i] = i + n_val >= n_train ? Split::validation : Split::train;
  return s;
}

inline std::size_t targets_per_trial(const SynthConfig& c) {
  const auto n = static_cast<double>(c.chips_per_trial);
  auto t = static_cast<std::size_t>(std::llround(n / (c.clutter_to_target_ratio + 1.0)));
  return std::clamp<std::size_t>(t, 1, c.chips_per_trial - 1);
}

inline std::string chip_id(const std::string& trial, std::size_t index) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return trial + "_" + buf;
}

/// One chip, fully determined by (seed, trial, index, label).
inline ComplexChip synthesize_chip(const SynthConfig& c, const TrialProfile& trial, std::size_t index, int label) {
  auto rng = Rng::derive(c.seed, "chip/" + trial.name, index);
  auto chip = gen_speckle(c.chip_height, c.chip_width, trial.speckle_sigma, rng);
  chip.extent_m = c.extent_m;
  chip = apply_system_response(chip, trial);
  chip = apply_texture(chip, trial, rng);
  return label == 1 ? insert_target(chip, rng).chip : insert_clutter_object(chip, rng);
}

/// Labels of one trial: the configured number of targets at shuffled positions.
inline std::vector<int> trial_labels(const SynthConfig& c, std::size_t trial_index) {
  std::vector<int> labels(c.chips_per_trial, 0);
  std::fill_n(labels.begin(), targets_per_trial(c), 1);
  auto rng = Rng::derive(c.seed, "labels", trial_index);
  rng.shuffle(std::span(labels));
  return labels;
}

/// Record list for a configuration without generating pixels.
inline std::vector<ChipRecord> plan_dataset(const SynthConfig& c) {
  validate(c);
  const auto splits = trial_splits(c.trials.size());
  std::vector<ChipRecord> records;
  for (std::size_t t = 0; t < c.trials.size(); ++t) {
    const auto labels = trial_labels(c, t);
    for (std::size_t i = 0; i < c.chips_per_trial; ++i) {
      const auto id = chip_id(c.trials[t].name, i);
      records.push_back({id, labels[i], c.trials[t].name, splits[t], "chips/" + id + ".slc"});
    }
  }
  return records;
}

inline constexpr std::string_view kManifestHeader = "chip_id\tlabel\ttrial_name\tsplit\trelative_path";

inline std::string encode_manifest(const std::vector<ChipRecord>& records) {
  std::string s(kManifestHeader);
  s += '\n';
  for (const auto& r : records)
    s += io::join({r.chip_id, std::to_string(r.label), r.trial_name, std::string(to_string(r.split)), r.path}) + '\n';
  return s;
}

inline std::vector<ChipRecord> decode_manifest(std::string_view text) {
  std::vector<ChipRecord> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_no++ == 0) {
      if (line != kManifestHeader) throw IoError("manifest header mismatch");
      continue;
    }
    if (line.empty()) continue;
    const auto f = io::split(line, '\t');
    if (f.size() != 5) throw IoError("manifest line " + std::to_string(line_no) + " has " + std::to_string(f.size()) +
                                     " fields, expected 5");
    ChipRecord r{f[0], std::stoi(f[1]), f[2], parse_split(f[3]), f[4]};
    if (r.label != 0 && r.label != 1) throw IoError("manifest label must be 0 or 1");
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<ChipRecord> read_manifest(const std::filesystem::path& path) {
  return decode_manifest(io::read_file(path));
}

/// Generates every chip into `out_dir/chips/` and writes `out_dir/manifest.tsv`.
/// Chips derive their own streams, so the output is identical for any `jobs`.
inline std::vector<ChipRecord> gen_dataset(const SynthConfig& c, const std::filesystem::path& out_dir,
                                           unsigned jobs = 1) {
  auto records = plan_dataset(c);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "chips", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "chips").string() + ": " + ec.message());

  std::vector<std::size_t> trial_of(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) trial_of[i] = i / c.chips_per_trial;

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    try {
      for (std::size_t i = next++; i < records.size() && !failed; i = next++) {
        const auto& trial = c.trials[trial_of[i]];
        const auto chip = synthesize_chip(c, trial, i % c.chips_per_trial, records[i].label);
        io::write_chip(out_dir / records[i].path, chip);
      }
    } catch (...) {
      if (!failed.exchange(true)) failure = std::current_exception();
    }
  };
  jobs = std::max(1u, jobs);
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  io::write_file_atomic(out_dir / "manifest.tsv", encode_manifest(records));
  return records;
}

}  // namespace sasatr
