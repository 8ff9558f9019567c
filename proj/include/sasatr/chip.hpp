#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sasatr/error.hpp"

namespace sasatr {

/// Dense row-major 2D array.
template <class T>
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const noexcept { return data.size(); }

  bool operator==(const Grid&) const = default;
};

using ComplexGrid = Grid<std::complex<double>>;

inline constexpr std::size_t kMinChipSide = 16;

/// Complex single-look image patch. Rows run along the cross-range (track)
/// axis, columns along range; range increases with column index.
struct ComplexChip {
  Grid<std::complex<float>> pixels;
  double extent_m = 5.0;

  ComplexChip() = default;
  ComplexChip(std::size_t height, std::size_t width, double extent = 5.0)
      : pixels(height, width), extent_m(extent) {}

  std::size_t height() const noexcept { return pixels.rows; }
  std::size_t width() const noexcept { return pixels.cols; }
  std::complex<float>& at(std::size_t r, std::size_t c) { return pixels(r, c); }
  const std::complex<float>& at(std::size_t r, std::size_t c) const { return pixels(r, c); }

  bool operator==(const ComplexChip&) const = default;
};

inline void validate(const ComplexChip& chip) {
  if (chip.height() < kMinChipSide || chip.width() < kMinChipSide)
    throw ShapeError("chip must be at least 16x16, got " + std::to_string(chip.height()) + "x" +
                     std::to_string(chip.width()));
  if (chip.pixels.size() != chip.height() * chip.width())
    throw ShapeError("chip pixel count does not match its dimensions");
  for (const auto& z : chip.pixels.data)
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
      throw InvalidParameter("chip contains a non-finite pixel");
}

inline ComplexGrid to_complex_grid(const ComplexChip& chip) {
  ComplexGrid g(chip.height(), chip.width());
  std::transform(chip.pixels.data.begin(), chip.pixels.data.end(), g.data.begin(),
                 [](std::complex<float> z) { return std::complex<double>(z); });
  return g;
}

enum class RealKind : std::uint32_t {
  magnitude_drc = 0,
  phase = 1,
  psd = 2,
  unwrapped_phase = 3,
  wrapped_phase = 4,  // raw radians in [0, 2pi), input of the unwrapper
  generic = 5,
};

inline std::string_view to_string(RealKind k) {
  switch (k) {
    case RealKind::magnitude_drc: return "magnitude-drc";
    case RealKind::phase: return "phase";
    case RealKind::psd: return "psd";
    case RealKind::unwrapped_phase: return "unwrapped-phase";
    case RealKind::wrapped_phase: return "wrapped-phase";
    case RealKind::generic: return "generic";
  }
  return "unknown";
}

/// Kinds fed to the network are confined to [-1, 1].
constexpr bool is_network_kind(RealKind k) {
  return k == RealKind::magnitude_drc || k == RealKind::phase || k == RealKind::psd;
}

/// Real-valued image: a representation of a chip, or an inspection product.
struct RealChip {
  Grid<double> values;
  RealKind kind = RealKind::generic;

  RealChip() = default;
  RealChip(std::size_t height, std::size_t width, RealKind k, double fill = 0.0)
      : values(height, width, fill), kind(k) {}

  std::size_t height() const noexcept { return values.rows; }
  std::size_t width() const noexcept { return values.cols; }
  double& at(std::size_t r, std::size_t c) { return values(r, c); }
  double at(std::size_t r, std::size_t c) const { return values(r, c); }

  bool operator==(const RealChip&) const = default;
};

}  // namespace sasatr
