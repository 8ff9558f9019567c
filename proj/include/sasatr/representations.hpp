#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "sasatr/chip.hpp"
#include "sasatr/error.hpp"
#include "sasatr/fft.hpp"
#include "sasatr/io.hpp"

namespace sasatr {

enum class Representation : std::uint8_t { magnitude = 0, phase = 1, psd = 2 };

inline std::string_view short_name(Representation r) {
  switch (r) {
    case Representation::magnitude: return "mag";
    case Representation::phase: return "phase";
    case Representation::psd: return "psd";
  }
  return "?";
}

inline Representation parse_representation(std::string_view s) {
  if (s == "mag" || s == "magnitude") return Representation::magnitude;
  if (s == "phase") return Representation::phase;
  if (s == "psd") return Representation::psd;
  if (s == "mag-ots" || s == "ots")
    throw ConfigError("the pre-trained off-the-shelf magnitude network is not supported: it needs external "
                      "photographic weights; use mag, phase or psd");
  throw ConfigError("unknown representation '" + std::string(s) + "' (expected mag, phase or psd)");
}

/// Non-empty, duplicate-free set of representations kept in the canonical
/// order (magnitude, phase, psd). Path i of a model consumes members()[i].
class ReprSet {
 public:
  ReprSet() = default;
  ReprSet(std::initializer_list<Representation> rs) {
    for (auto r : rs) add(r);
    check();
  }

  static ReprSet from_codes(const std::vector<std::uint8_t>& codes) {
    ReprSet s;
    for (auto c : codes) {
      if (c > 2) throw InvalidParameter("unknown representation code " + std::to_string(c));
      s.add(static_cast<Representation>(c));
    }
    s.check();
    return s;
  }

  /// Accepts "mag,psd", "mag+psd" or "psd+mag".
  static ReprSet parse(std::string_view text) {
    ReprSet s;
    std::string token;
    auto flush = [&] {
      if (!token.empty()) s.add(parse_representation(token));
      token.clear();
    };
    for (char c : text) {
      if (c == ',' || c == '+' || c == ' ') flush();
      else token += c;
    }
    flush();
    s.check();
    return s;
  }

  const std::vector<Representation>& members() const noexcept { return members_; }
  std::size_t size() const noexcept { return members_.size(); }
  Representation operator[](std::size_t i) const { return members_[i]; }
  bool contains(Representation r) const { return std::find(members_.begin(), members_.end(), r) != members_.end(); }

  std::vector<std::uint8_t> codes() const {
    std::vector<std::uint8_t> c;
    for (auto r : members_) c.push_back(static_cast<std::uint8_t>(r));
    return c;
  }

  std::string name() const {
    std::string n;
    for (auto r : members_) {
      if (!n.empty()) n += '+';
      n += short_name(r);
    }
    return n;
  }

  bool operator==(const ReprSet&) const = default;

 private:
  void add(Representation r) {
    if (contains(r)) throw InvalidParameter("duplicate representation " + std::string(short_name(r)));
    members_.push_back(r);
    std::sort(members_.begin(), members_.end());
  }
  void check() const {
    if (members_.empty()) throw InvalidParameter("representation set must not be empty");
  }
  std::vector<Representation> members_;
};

/// The six network input configurations, magnitude-only first.
inline std::vector<ReprSet> standard_configurations() {
  using R = Representation;
  return {ReprSet{R::magnitude},           ReprSet{R::phase},
          ReprSet{R::psd},                 ReprSet{R::magnitude, R::phase},
          ReprSet{R::magnitude, R::psd},   ReprSet{R::magnitude, R::phase, R::psd}};
}

struct ReprOptions {
  double dynamic_range_db = 60.0;
  bool psd_linear = false;  // skip the log before min-max mapping
};

/// Peak-relative log compression into [-1, 1]: the peak maps to +1 and
/// anything `dynamic_range_db` or more below it maps to -1.
inline RealChip magnitude_drc(const ComplexChip& chip, double dynamic_range_db = 60.0) {
  if (!(dynamic_range_db > 0.0)) throw InvalidParameter("dynamic range must be positive");
  double peak = 0.0;
  for (const auto& z : chip.pixels.data) peak = std::max(peak, static_cast<double>(std::abs(z)));
  if (peak == 0.0) throw DegenerateInput("magnitude compression of an all-zero chip");
  const double eps = 1e-12 * peak;
  const double top = 20.0 * std::log10(peak + eps);
  const double floor_db = top - dynamic_range_db;
  RealChip out(chip.height(), chip.width(), RealKind::magnitude_drc);
  for (std::size_t i = 0; i < chip.pixels.size(); ++i) {
    const double d = std::clamp(20.0 * std::log10(std::abs(std::complex<double>(chip.pixels.data[i])) + eps),
                                floor_db, top);
    out.values.data[i] = 2.0 * (d - floor_db) / dynamic_range_db - 1.0;
  }
  return out;
}

/// Pointwise phase in [0, 2pi). Exact-zero pixels have phase 0.
inline double wrapped_angle(std::complex<double> z) {
  if (z == std::complex<double>(0.0, 0.0)) return 0.0;
  double phi = std::atan2(z.imag(), z.real());
  if (phi < 0.0) phi += 2.0 * std::numbers::pi;
  if (phi >= 2.0 * std::numbers::pi) phi = 0.0;
  return phi;
}

/// Raw wrapped phase in radians, for the unwrapper and inspection figures.
inline RealChip wrapped_phase(const ComplexChip& chip) {
  RealChip out(chip.height(), chip.width(), RealKind::wrapped_phase);
  for (std::size_t i = 0; i < chip.pixels.size(); ++i)
    out.values.data[i] = wrapped_angle(std::complex<double>(chip.pixels.data[i]));
  return out;
}

/// Network phase input: phi / pi - 1, in [-1, 1).
inline RealChip phase_map(const ComplexChip& chip) {
  RealChip out = wrapped_phase(chip);
  out.kind = RealKind::phase;
  for (auto& v : out.values.data) v = v / std::numbers::pi - 1.0;
  return out;
}

/// |F|^2 of the unnormalized DFT, DC at (rows/2, cols/2).
inline Grid<double> power_spectrum(const ComplexGrid& x) {
  const auto f = fftshift(dft2d(x, FftDirection::forward));
  Grid<double> p(x.rows, x.cols);
  for (std::size_t i = 0; i < p.size(); ++i) p.data[i] = std::norm(f.data[i]);
  return p;
}

inline void minmax_to_unit(std::vector<double>& v) {
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double span = *hi_it - lo;
  // A flat spectrum (e.g. a delta image) maps to the midpoint.
  for (auto& x : v) x = span > 0.0 ? std::clamp(2.0 * (x - lo) / span - 1.0, -1.0, 1.0) : 0.0;
}

/// DC-centred power spectral density, log-scaled (unless `linear`) and mapped
/// to [-1, 1].
inline RealChip psd2d(const ComplexChip& chip, bool linear = false) {
  bool any = false;
  for (const auto& z : chip.pixels.data) any = any || z != std::complex<float>(0.0f, 0.0f);
  if (!any) throw DegenerateInput("power spectrum of an all-zero chip");
  RealChip out(chip.height(), chip.width(), RealKind::psd);
  out.values = power_spectrum(to_complex_grid(chip));
  if (!linear) {
    const double pmax = *std::max_element(out.values.data.begin(), out.values.data.end());
    const double eps = 1e-12 * pmax;
    for (auto& v : out.values.data) v = 10.0 * std::log10(v + eps);
  }
  minmax_to_unit(out.values.data);
  return out;
}

inline RealChip extract(const ComplexChip& chip, Representation r, const ReprOptions& opt = {}) {
  switch (r) {
    case Representation::magnitude: return magnitude_drc(chip, opt.dynamic_range_db);
    case Representation::phase: return phase_map(chip);
    case Representation::psd: return psd2d(chip, opt.psd_linear);
  }
  throw InvalidParameter("unknown representation");
}

/// Wraps into (-pi, pi].
inline double wrap_to_pi(double x) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = x - two_pi * std::round(x / two_pi);
  if (w <= -std::numbers::pi) w += two_pi;
  if (w > std::numbers::pi) w -= two_pi;
  return w;
}

/// Unweighted least-squares phase unwrapping (Ghiglia-Romero).
///
/// Builds the divergence of the wrapped phase differences and solves the
/// Neumann Poisson problem in the DCT domain. The result is mean-removed.
inline RealChip unwrap_phase_dct(const RealChip& wrapped) {
  if (wrapped.kind != RealKind::wrapped_phase)
    throw InvalidParameter("unwrapping expects raw wrapped phase in radians, got " +
                           std::string(to_string(wrapped.kind)));
  const std::size_t h = wrapped.height();
  const std::size_t w = wrapped.width();
  if (h < 2 || w < 2) throw ShapeError("unwrapping needs at least 2x2 samples");
  const auto& psi = wrapped.values;

  Grid<double> dx(h, w, 0.0);  // along columns; zero on the last column
  Grid<double> dy(h, w, 0.0);  // along rows; zero on the last row
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c + 1 < w; ++c) dx(r, c) = wrap_to_pi(psi(r, c + 1) - psi(r, c));
  for (std::size_t r = 0; r + 1 < h; ++r)
    for (std::size_t c = 0; c < w; ++c) dy(r, c) = wrap_to_pi(psi(r + 1, c) - psi(r, c));

  Grid<double> rho(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      double v = dx(r, c) + dy(r, c);
      if (c > 0) v -= dx(r, c - 1);
      if (r > 0) v -= dy(r - 1, c);
      rho(r, c) = v;
    }

  auto spec = dct2d(rho, FftDirection::forward);
  for (std::size_t m = 0; m < h; ++m)
    for (std::size_t n = 0; n < w; ++n) {
      if (m == 0 && n == 0) {
        spec(m, n) = 0.0;
        continue;
      }
      const double denom = 2.0 * std::cos(std::numbers::pi * static_cast<double>(m) / static_cast<double>(h)) +
                           2.0 * std::cos(std::numbers::pi * static_cast<double>(n) / static_cast<double>(w)) - 4.0;
      spec(m, n) /= denom;
    }
  RealChip out(h, w, RealKind::unwrapped_phase);
  out.values = dct2d(spec, FftDirection::inverse);
  double mean = 0.0;
  for (double v : out.values.data) mean += v;
  mean /= static_cast<double>(out.values.size());
  for (auto& v : out.values.data) v -= mean;
  return out;
}

/// Removes the least-squares plane a*col + b*row + c.
inline RealChip detrend_plane(const RealChip& in) {
  const std::size_t h = in.height();
  const std::size_t w = in.width();
  RealChip out = in;
  if (h == 0 || w == 0) return out;
  // On a full rectangular grid centred coordinates are orthogonal, so the
  // normal equations decouple.
  const double xc = (static_cast<double>(w) - 1.0) / 2.0;
  const double yc = (static_cast<double>(h) - 1.0) / 2.0;
  double mean = 0.0, sxv = 0.0, syv = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double x = static_cast<double>(c) - xc;
      const double y = static_cast<double>(r) - yc;
      const double v = in.at(r, c);
      mean += v;
      sxv += x * v;
      syv += y * v;
      sxx += x * x;
      syy += y * y;
    }
  mean /= static_cast<double>(h * w);
  const double a = sxx > 0.0 ? sxv / sxx : 0.0;
  const double b = syy > 0.0 ? syv / syy : 0.0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      out.at(r, c) = in.at(r, c) - (a * (static_cast<double>(c) - xc) + b * (static_cast<double>(r) - yc) + mean);
  return out;
}

/// Bilinear resampling with corner-aligned sample positions.
inline RealChip resize_bilinear(const RealChip& in, std::size_t out_h, std::size_t out_w) {
  if (out_h < 2 || out_w < 2) throw ShapeError("resize target must be at least 2x2");
  if (in.height() < 1 || in.width() < 1) throw ShapeError("resize of an empty image");
  if (in.height() == out_h && in.width() == out_w) return in;
  RealChip out(out_h, out_w, in.kind);
  const double sy = in.height() > 1 ? static_cast<double>(in.height() - 1) / static_cast<double>(out_h - 1) : 0.0;
  const double sx = in.width() > 1 ? static_cast<double>(in.width() - 1) / static_cast<double>(out_w - 1) : 0.0;
  for (std::size_t r = 0; r < out_h; ++r) {
    const double y = static_cast<double>(r) * sy;
    const auto y0 = std::min(static_cast<std::size_t>(y), in.height() - 1);
    const auto y1 = std::min(y0 + 1, in.height() - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < out_w; ++c) {
      const double x = static_cast<double>(c) * sx;
      const auto x0 = std::min(static_cast<std::size_t>(x), in.width() - 1);
      const auto x1 = std::min(x0 + 1, in.width() - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = in.at(y0, x0) * (1.0 - fx) + in.at(y0, x1) * fx;
      const double bot = in.at(y1, x0) * (1.0 - fx) + in.at(y1, x1) * fx;
      out.at(r, c) = top * (1.0 - fy) + bot * fy;
    }
  }
  return out;
}

inline void write_rep(const std::filesystem::path& path, const RealChip& chip) {
  io::write_file_atomic(path, io::encode_rep(chip));
}

}  // namespace sasatr
