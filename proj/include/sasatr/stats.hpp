#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sasatr/error.hpp"
#include "sasatr/io.hpp"
#include "sasatr/rng.hpp"

namespace sasatr::stats {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  bool operator==(const RocPoint&) const = default;
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0,0) first, (1,1) last
  double auc = 0.0;
};

namespace detail {

inline void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
  for (int y : labels)
    if (y != 0 && y != 1) throw InvalidParameter("labels must be 0 or 1");
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericError("roc", "non-finite score");
}

inline std::pair<std::size_t, std::size_t> class_counts(std::span<const int> labels) {
  std::size_t pos = 0;
  for (int y : labels) pos += static_cast<std::size_t>(y);
  return {pos, labels.size() - pos};
}

}  // namespace detail

/// Mann-Whitney AUC from the rank sum of the positives, ties at average rank.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_inputs(scores, labels);
  const auto [pos, neg] = detail::class_counts(labels);
  if (pos == 0 || neg == 0) throw UndefinedMetric("AUC needs both classes present");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) pos_in_group += static_cast<std::size_t>(labels[order[j++]]);
    // Ranks i+1..j share the mean (i+1+j)/2; doubled to stay in integers.
    rank_sum += static_cast<double>(pos_in_group) * static_cast<double>(i + 1 + j);
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0)) / (2.0 * p * n);
}

/// ROC points from a descending score sweep; tied scores form one step.
inline RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels) {
  RocCurve c;
  c.auc = auc(scores, labels);
  const auto [pos, neg] = detail::class_counts(labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  std::size_t tp = 0, fp = 0;
  c.points.push_back({0.0, 0.0});
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1) ++tp;
      else ++fp;
      ++j;
    }
    c.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                        static_cast<double>(tp) / static_cast<double>(pos)});
    i = j;
  }
  return c;
}

inline double trapezoid_area(const std::vector<RocPoint>& pts) {
  double a = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    a += (pts[i].fpr - pts[i - 1].fpr) * 0.5 * (pts[i].tpr + pts[i - 1].tpr);
  return a;
}

// ---- bootstrap ------------------------------------------------------------------

/// Bootstrap AUC replicates of one configuration. Index sets depend only on
/// (seed, replicate, n) and the shared labels, so ensembles computed on the
/// same test set are paired replicate by replicate.
struct AucEnsemble {
  std::string name;
  std::vector<double> aucs;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::uint64_t index_hash = 0;  // digest of every resample index set
  std::size_t redraws = 0;       // resamples discarded for missing a class
};

/// Resample `b`: draws n indices with replacement from its own substream,
/// redrawing until both classes are present.
inline std::vector<std::size_t> bootstrap_indices(std::uint64_t seed, std::size_t b, std::span<const int> labels,
                                                  std::size_t* redraws = nullptr) {
  const std::size_t n = labels.size();
  auto rng = Rng::derive(seed, "bootstrap/" + std::to_string(n), b);
  std::vector<std::size_t> idx(n);
  for (std::size_t attempt = 0;; ++attempt) {
    std::size_t pos = 0;
    for (auto& i : idx) {
      i = static_cast<std::size_t>(rng.below(n));
      pos += static_cast<std::size_t>(labels[i]);
    }
    if (pos > 0 && pos < n) return idx;
    if (redraws) ++*redraws;
    if (attempt > 10000) throw UndefinedMetric("bootstrap cannot draw both classes");
  }
}

inline AucEnsemble bootstrap_auc(std::span<const double> scores, std::span<const int> labels, std::size_t B,
                                 std::uint64_t seed, std::string name = {}) {
  detail::check_inputs(scores, labels);
  if (scores.size() < 10) throw InvalidParameter("bootstrap needs at least 10 samples");
  const auto [pos, neg] = detail::class_counts(labels);
  if (pos == 0 || neg == 0) throw UndefinedMetric("AUC needs both classes present");
  if (B == 0) throw InvalidParameter("bootstrap replicate count must be positive");
  AucEnsemble e{std::move(name), {}, seed, scores.size(), 0xcbf29ce484222325ULL, 0};
  std::vector<double> s(scores.size());
  std::vector<int> y(scores.size());
  for (std::size_t b = 0; b < B; ++b) {
    const auto idx = bootstrap_indices(seed, b, labels, &e.redraws);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      s[k] = scores[idx[k]];
      y[k] = labels[idx[k]];
      e.index_hash = mix64(e.index_hash ^ idx[k]);
    }
    e.aucs.push_back(auc(s, y));
  }
  return e;
}

// ---- Wilcoxon signed-rank ----------------------------------------------------------

struct WsrResult {
  double w_plus = 0.0;
  double p_value = 1.0;  // two-sided
  std::size_t n = 0;     // non-zero differences
  bool exact = false;
  bool degenerate = false;  // every difference was zero
};

inline constexpr std::size_t kWsrExactMaxN = 20;

enum class WsrMethod { automatic, normal };

/// Two-sided signed-rank test. Exact null distribution (subset-sum counts of
/// 1..n) for n <= 20 without ties; otherwise the normal approximation with
/// continuity and tie correction.
inline WsrResult wilcoxon_signed_rank(std::span<const double> diffs, WsrMethod method = WsrMethod::automatic) {
  std::vector<double> d;
  for (double v : diffs) {
    if (!std::isfinite(v)) throw NumericError("wilcoxon", "non-finite difference");
    if (v != 0.0) d.push_back(v);
  }
  WsrResult r;
  r.n = d.size();
  if (d.empty()) {
    r.degenerate = true;
    return r;
  }
  if (d.size() < 5) throw InvalidParameter("signed-rank test needs at least 5 non-zero differences");

  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> rank(n);
  double tie_term = 0.0;
  bool ties = false;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && std::abs(d[order[j]]) == std::abs(d[order[i]])) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = avg;
    const auto t = static_cast<double>(j - i);
    if (j - i > 1) ties = true;
    tie_term += t * t * t - t;
    i = j;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) r.w_plus += rank[i];

  if (method == WsrMethod::automatic && n <= kWsrExactMaxN && !ties) {
    // counts[s] = number of sign patterns with W+ = s.
    const std::size_t max_sum = n * (n + 1) / 2;
    std::vector<std::uint64_t> counts(max_sum + 1, 0);
    counts[0] = 1;
    for (std::size_t k = 1; k <= n; ++k)
      for (std::size_t s = max_sum; s >= k; --s) counts[s] += counts[s - k];
    const auto w = static_cast<std::size_t>(r.w_plus);
    std::uint64_t le = 0, ge = 0;
    for (std::size_t s = 0; s <= max_sum; ++s) {
      if (s <= w) le += counts[s];
      if (s >= w) ge += counts[s];
    }
    const double total = std::ldexp(1.0, static_cast<int>(n));
    r.p_value = std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) / total);
    r.exact = true;
    return r;
  }
  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  if (!(var > 0.0)) {
    r.p_value = 1.0;
    return r;
  }
  const double z = std::max(0.0, std::abs(r.w_plus - mean) - 0.5) / std::sqrt(var);
  r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

// ---- configuration comparison ------------------------------------------------------

struct ComparisonResult {
  std::string reference;
  std::string challenger;
  double w_plus = 0.0;
  double p_value = 1.0;
  double threshold = 0.0;  // alpha / m
  bool significant = false;
  bool degenerate = false;
  double mean_difference = 0.0;  // challenger - reference, averaged over replicates
};

/// Paired signed-rank test of each challenger against the reference under a
/// Bonferroni threshold alpha/m (m defaults to the number of challengers).
inline std::vector<ComparisonResult> compare_configs(const AucEnsemble& reference,
                                                     const std::vector<AucEnsemble>& challengers,
                                                     double alpha = 1e-3, std::size_t m = 0) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidParameter("alpha must lie in (0,1)");
  if (m == 0) m = challengers.size();
  std::vector<ComparisonResult> out;
  for (const auto& c : challengers) {
    if (c.aucs.size() != reference.aucs.size() || c.seed != reference.seed || c.n != reference.n ||
        c.index_hash != reference.index_hash)
      throw PairingError("ensemble '" + c.name + "' is not paired with reference '" + reference.name + "'");
    std::vector<double> diffs(c.aucs.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < diffs.size(); ++i) {
      diffs[i] = c.aucs[i] - reference.aucs[i];
      mean += diffs[i];
    }
    const auto w = wilcoxon_signed_rank(diffs);
    ComparisonResult r{reference.name, c.name, w.w_plus, w.p_value, alpha / static_cast<double>(m), false,
                       w.degenerate, diffs.empty() ? 0.0 : mean / static_cast<double>(diffs.size())};
    r.significant = !w.degenerate && r.p_value < r.threshold;
    out.push_back(r);
  }
  return out;
}

// ---- per-trial table ---------------------------------------------------------------

struct TrialAuc {
  std::string trial;
  std::size_t count = 0;
  double proportion = 0.0;    // share of all test samples
  std::optional<double> auc;  // empty when the trial holds a single class
};

inline constexpr std::string_view kAllTrials = "All";

/// One row per trial (ordered by name) plus the "All" row last.
inline std::vector<TrialAuc> per_trial_auc(std::span<const double> scores, std::span<const int> labels,
                                           std::span<const std::string> trials) {
  detail::check_inputs(scores, labels);
  if (trials.size() != scores.size()) throw ShapeError("trial names and scores differ in length");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < trials.size(); ++i) groups[trials[i]].push_back(i);
  std::vector<TrialAuc> rows;
  const auto total = static_cast<double>(scores.size());
  for (const auto& [name, idx] : groups) {
    std::vector<double> s;
    std::vector<int> y;
    for (auto i : idx) {
      s.push_back(scores[i]);
      y.push_back(labels[i]);
    }
    TrialAuc row{name, idx.size(), static_cast<double>(idx.size()) / total, std::nullopt};
    const auto [pos, neg] = detail::class_counts(y);
    if (pos > 0 && neg > 0) row.auc = auc(s, y);
    rows.push_back(std::move(row));
  }
  TrialAuc all{std::string(kAllTrials), scores.size(), 1.0, std::nullopt};
  const auto [pos, neg] = detail::class_counts(labels);
  if (pos > 0 && neg > 0) all.auc = auc(scores, labels);
  rows.push_back(std::move(all));
  return rows;
}

// ---- summaries and text output -----------------------------------------------------

/// Linear-interpolated quantile of a sample (q in [0,1]).
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw InvalidParameter("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::string encode_roc(const RocCurve& c) {
  std::string s = "fpr\ttpr\n";
  for (const auto& p : c.points) s += io::fmt(p.fpr, 8) + "\t" + io::fmt(p.tpr, 8) + "\n";
  return s;
}

inline std::string encode_ensemble(const AucEnsemble& e) {
  std::string s = "replicate\tauc\n";
  for (std::size_t i = 0; i < e.aucs.size(); ++i) s += std::to_string(i) + "\t" + io::fmt(e.aucs[i], 8) + "\n";
  return s;
}

inline std::string encode_comparisons(const std::vector<ComparisonResult>& rows) {
  std::string s = "reference\tchallenger\tmean_auc_difference\tw_plus\tp_value\tthreshold\tsignificant\n";
  for (const auto& r : rows)
    s += io::join({r.reference, r.challenger, io::fmt(r.mean_difference, 6), io::fmt(r.w_plus, 1),
                   io::fmt_sci(r.p_value, 4), io::fmt_sci(r.threshold, 4),
                   r.degenerate ? "degenerate" : (r.significant ? "yes" : "no")}) +
         "\n";
  return s;
}

inline std::string encode_trial_table(const std::vector<TrialAuc>& rows) {
  std::string s = "trial\tcount\tproportion\tauc\n";
  for (const auto& r : rows)
    s += io::join({r.trial, std::to_string(r.count), io::fmt(100.0 * r.proportion, 2),
                   r.auc ? io::fmt(*r.auc, 6) : "undefined"}) +
         "\n";
  return s;
}

}  // namespace sasatr::stats
