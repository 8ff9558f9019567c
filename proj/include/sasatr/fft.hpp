#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "sasatr/chip.hpp"

namespace sasatr {

enum class FftDirection { forward, inverse };

/// Mixed-radix Cooley-Tukey plan for one transform length.
///
/// Lengths factor into 4, 2, 3, 5 and any remaining primes; prime factors are
/// handled by a generic O(p^2) butterfly, which is adequate for chip-sized
/// transforms. The forward transform is unnormalized; `inverse` applies the
/// conjugate kernel without scaling (callers divide by n).
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n), twiddles_(n) {
    for (std::size_t k = 0; k < n; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddles_[k] = {std::cos(a), std::sin(a)};
    }
    std::size_t m = n;
    for (std::size_t p : {4u, 2u, 3u, 5u}) {
      while (m % p == 0) {
        factors_.push_back(p);
        m /= p;
      }
    }
    for (std::size_t p = 7; m > 1; p += 2) {
      while (m % p == 0) {
        factors_.push_back(p);
        m /= p;
      }
      if (p * p > m && m > 1) {
        factors_.push_back(m);
        m = 1;
      }
    }
  }

  std::size_t size() const noexcept { return n_; }

  void execute(std::span<const std::complex<double>> in, std::span<std::complex<double>> out,
               FftDirection dir) const {
    if (n_ == 0) return;
    transform(in.data(), 1, out.data(), n_, 0, dir == FftDirection::inverse);
  }

 private:
  std::complex<double> twiddle(std::size_t e, bool inverse) const {
    const auto& w = twiddles_[e % n_];
    return inverse ? std::conj(w) : w;
  }

  void transform(const std::complex<double>* in, std::size_t stride, std::complex<double>* out, std::size_t n,
                 std::size_t level, bool inverse) const {
    if (n == 1) {
      out[0] = in[0];
      return;
    }
    const std::size_t p = factors_[level];
    const std::size_t m = n / p;
    for (std::size_t j = 0; j < p; ++j) transform(in + j * stride, stride * p, out + j * m, m, level + 1, inverse);

    // Twiddle exponents are expressed on the full-length table.
    const std::size_t scale = n_ / n;
    std::complex<double> local[64];
    std::vector<std::complex<double>> heap;
    std::complex<double>* t = local;
    if (p > 64) {
      heap.resize(p);
      t = heap.data();
    }
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t j = 0; j < p; ++j) t[j] = out[j * m + k] * twiddle(j * k * scale, inverse);
      if (p == 2) {
        out[k] = t[0] + t[1];
        out[m + k] = t[0] - t[1];
      } else if (p == 4) {
        const auto a = t[0] + t[2];
        const auto b = t[0] - t[2];
        const auto c = t[1] + t[3];
        auto d = t[1] - t[3];
        d = inverse ? std::complex<double>(-d.imag(), d.real()) : std::complex<double>(d.imag(), -d.real());
        out[k] = a + c;
        out[m + k] = b + d;
        out[2 * m + k] = a - c;
        out[3 * m + k] = b - d;
      } else {
        for (std::size_t q = 0; q < p; ++q) {
          std::complex<double> acc = t[0];
          for (std::size_t j = 1; j < p; ++j) acc += t[j] * twiddle(j * q * m * scale, inverse);
          out[q * m + k] = acc;
        }
      }
    }
  }

  std::size_t n_;
  std::vector<std::complex<double>> twiddles_;
  std::vector<std::size_t> factors_;
};

/// 2D DFT by row then column passes. Forward is unnormalized, inverse scales
/// by 1/(rows*cols), so inverse(forward(x)) == x.
inline ComplexGrid dft2d(const ComplexGrid& x, FftDirection dir) {
  const std::size_t h = x.rows;
  const std::size_t w = x.cols;
  ComplexGrid out(h, w);
  if (h == 0 || w == 0) return out;
  const FftPlan row_plan(w);
  const FftPlan col_plan(h);
  std::vector<std::complex<double>> buf_in(std::max(h, w));
  std::vector<std::complex<double>> buf_out(std::max(h, w));
  for (std::size_t r = 0; r < h; ++r) {
    row_plan.execute(std::span(x.data).subspan(r * w, w), std::span(out.data).subspan(r * w, w), dir);
  }
  for (std::size_t c = 0; c < w; ++c) {
    for (std::size_t r = 0; r < h; ++r) buf_in[r] = out(r, c);
    col_plan.execute(std::span(buf_in).first(h), std::span(buf_out).first(h), dir);
    for (std::size_t r = 0; r < h; ++r) out(r, c) = buf_out[r];
  }
  if (dir == FftDirection::inverse) {
    const double s = 1.0 / static_cast<double>(h * w);
    for (auto& v : out.data) v *= s;
  }
  return out;
}

inline ComplexGrid dft2d(const ComplexChip& chip, FftDirection dir) { return dft2d(to_complex_grid(chip), dir); }

/// Moves the zero-frequency bin to (rows/2, cols/2).
template <class T>
Grid<T> fftshift(const Grid<T>& g) {
  Grid<T> out(g.rows, g.cols);
  const std::size_t sr = g.rows / 2;
  const std::size_t sc = g.cols / 2;
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c) out((r + sr) % g.rows, (c + sc) % g.cols) = g(r, c);
  return out;
}

/// Orthonormal DCT-II basis, row k holds the k-th cosine.
inline std::vector<double> dct_matrix(std::size_t n) {
  std::vector<double> m(n * n);
  for (std::size_t k = 0; k < n; ++k) {
    const double a = k == 0 ? std::sqrt(1.0 / static_cast<double>(n)) : std::sqrt(2.0 / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      m[k * n + i] = a * std::cos(std::numbers::pi * (2.0 * static_cast<double>(i) + 1.0) * static_cast<double>(k) /
                                  (2.0 * static_cast<double>(n)));
  }
  return m;
}

/// Separable orthonormal 2D DCT-II (forward) or DCT-III (inverse).
inline Grid<double> dct2d(const Grid<double>& x, FftDirection dir) {
  const std::size_t h = x.rows;
  const std::size_t w = x.cols;
  const auto ch = dct_matrix(h);
  const auto cw = dct_matrix(w);
  const bool fwd = dir == FftDirection::forward;
  Grid<double> tmp(h, w);
  // along columns index (within each row)
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t k = 0; k < w; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < w; ++i) acc += (fwd ? cw[k * w + i] : cw[i * w + k]) * x(r, i);
      tmp(r, k) = acc;
    }
  Grid<double> out(h, w);
  for (std::size_t c = 0; c < w; ++c)
    for (std::size_t k = 0; k < h; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < h; ++i) acc += (fwd ? ch[k * h + i] : ch[i * h + k]) * tmp(i, c);
      out(k, c) = acc;
    }
  return out;
}

}  // namespace sasatr
