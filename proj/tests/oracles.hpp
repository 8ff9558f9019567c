#pragma once

// Independent reference implementations used only by the test suites.
// Each is written the slow, obvious way and shares no code path with the
// library routine it checks.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace oracle {

/// Direct O(n^2) 2D DFT sum, unnormalized forward convention.
inline std::vector<std::complex<double>> direct_dft2d(const std::vector<std::complex<double>>& x, std::size_t h,
                                                      std::size_t w) {
  std::vector<std::complex<double>> out(h * w);
  for (std::size_t ku = 0; ku < h; ++ku)
    for (std::size_t kv = 0; kv < w; ++kv) {
      std::complex<double> acc = 0.0;
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          const double a = -2.0 * std::numbers::pi *
                           (static_cast<double>(ku * r) / static_cast<double>(h) +
                            static_cast<double>(kv * c) / static_cast<double>(w));
          acc += x[r * w + c] * std::complex<double>(std::cos(a), std::sin(a));
        }
      out[ku * w + kv] = acc;
    }
  return out;
}

/// Mann-Whitney AUC over all positive/negative pairs.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

struct WsrEnumeration {
  double w_plus;
  double p_two_sided;
};

/// Exact signed-rank test by enumerating all 2^n sign assignments of the
/// integer ranks 1..n (tie-free, zero-free input).
inline WsrEnumeration wsr_enumerate(const std::vector<double>& diffs) {
  const std::size_t n = diffs.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return std::abs(diffs[a]) < std::abs(diffs[b]); });
  std::vector<double> rank(n);
  for (std::size_t k = 0; k < n; ++k) rank[order[k]] = static_cast<double>(k + 1);
  double observed = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (diffs[i] > 0) observed += rank[i];
  std::uint64_t le = 0, ge = 0;
  const std::uint64_t total = std::uint64_t{1} << n;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (std::uint64_t{1} << i)) w += static_cast<double>(i + 1);
    if (w <= observed) ++le;
    if (w >= observed) ++ge;
  }
  const double p = std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(total));
  return {observed, p};
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix (row-major n x n).
inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::size_t n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i * n + i];
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

/// Central difference of a scalar function of one coordinate.
template <class F>
double central_difference(F&& f, double& coordinate, double step) {
  const double saved = coordinate;
  coordinate = saved + step;
  const double up = f();
  coordinate = saved - step;
  const double down = f();
  coordinate = saved;
  return (up - down) / (2.0 * step);
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-8);
}

/// Rayleigh(sigma) CDF.
inline double rayleigh_cdf(double r, double sigma) { return 1.0 - std::exp(-r * r / (2.0 * sigma * sigma)); }

/// Kolmogorov-Smirnov distance of a sample against a continuous CDF.
template <class Cdf>
double ks_distance(std::vector<double> sample, Cdf&& cdf) {
  std::sort(sample.begin(), sample.end());
  const auto n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

}  // namespace oracle
