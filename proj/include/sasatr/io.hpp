#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sasatr/chip.hpp"
#include "sasatr/error.hpp"

namespace sasatr::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian and written with native stores");

/// Growable little-endian byte buffer.
class ByteWriter {
 public:
  template <class T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::string& bytes() const noexcept { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError(source_ + ": truncated file");
  }
  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a temporary sibling and renames it into place, so readers
/// never observe a partially written artifact.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

// ---- CHIP: "SLC1", u32 height, u32 width, interleaved f32 (re, im) -------

inline constexpr std::string_view kChipMagic = "SLC1";

inline std::string encode_chip(const ComplexChip& chip) {
  ByteWriter w;
  w.put_bytes(kChipMagic);
  w.put(static_cast<std::uint32_t>(chip.height()));
  w.put(static_cast<std::uint32_t>(chip.width()));
  for (const auto& z : chip.pixels.data) {
    w.put(z.real());
    w.put(z.imag());
  }
  return w.bytes();
}

inline ComplexChip decode_chip(std::string_view bytes, const std::string& source = "chip") {
  ByteReader r(bytes, source);
  if (r.get_bytes(4) != kChipMagic) throw IoError(source + ": bad CHIP magic");
  const auto h = r.get<std::uint32_t>();
  const auto w = r.get<std::uint32_t>();
  ComplexChip chip(h, w);
  for (auto& z : chip.pixels.data) {
    const float re = r.get<float>();
    const float im = r.get<float>();
    z = {re, im};
  }
  if (!r.at_end()) throw IoError(source + ": trailing bytes after CHIP payload");
  return chip;
}

inline void write_chip(const std::filesystem::path& path, const ComplexChip& chip) {
  write_file_atomic(path, encode_chip(chip));
}

inline ComplexChip read_chip(const std::filesystem::path& path) {
  return decode_chip(read_file(path), path.string());
}

// ---- REP1: "REP1", u32 h, u32 w, u32 kind, f32 values --------------------

inline constexpr std::string_view kRepMagic = "REP1";

inline std::string encode_rep(const RealChip& chip) {
  ByteWriter w;
  w.put_bytes(kRepMagic);
  w.put(static_cast<std::uint32_t>(chip.height()));
  w.put(static_cast<std::uint32_t>(chip.width()));
  w.put(static_cast<std::uint32_t>(chip.kind));
  for (double v : chip.values.data) w.put(static_cast<float>(v));
  return w.bytes();
}

inline RealChip decode_rep(std::string_view bytes, const std::string& source = "rep") {
  ByteReader r(bytes, source);
  if (r.get_bytes(4) != kRepMagic) throw IoError(source + ": bad REP1 magic");
  const auto h = r.get<std::uint32_t>();
  const auto w = r.get<std::uint32_t>();
  const auto kind = r.get<std::uint32_t>();
  if (kind > static_cast<std::uint32_t>(RealKind::generic)) throw IoError(source + ": unknown kind code");
  RealChip chip(h, w, static_cast<RealKind>(kind));
  for (auto& v : chip.values.data) v = r.get<float>();
  if (!r.at_end()) throw IoError(source + ": trailing bytes after REP1 payload");
  return chip;
}

// ---- PGM (binary P5, 8-bit, min-max mapped) -------------------------------

inline std::vector<std::uint8_t> quantize_minmax(const std::vector<double>& values) {
  std::vector<std::uint8_t> out(values.size(), 0);
  if (values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double span = *hi_it - lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double t = span > 0.0 ? (values[i] - lo) / span : 0.0;
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
  }
  return out;
}

inline std::string encode_pgm(const Grid<double>& image) {
  std::string s = "P5\n" + std::to_string(image.cols) + " " + std::to_string(image.rows) + "\n255\n";
  const auto q = quantize_minmax(image.data);
  s.append(q.begin(), q.end());
  return s;
}

inline void write_pgm(const std::filesystem::path& path, const Grid<double>& image) {
  write_file_atomic(path, encode_pgm(image));
}

/// Parses a P5 file back into [0,255] grey levels.
inline Grid<double> decode_pgm(std::string_view bytes) {
  std::istringstream in{std::string(bytes)};
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255) throw IoError("unsupported PGM");
  in.get();
  Grid<double> g(h, w);
  for (auto& v : g.data) {
    const int c = in.get();
    if (c == EOF) throw IoError("truncated PGM");
    v = static_cast<double>(static_cast<unsigned char>(c));
  }
  return g;
}

// ---- tab-separated text ------------------------------------------------

inline std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    fields.emplace_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

inline std::string join(const std::vector<std::string>& fields, char sep = '\t') {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += sep;
    out += fields[i];
  }
  return out;
}

/// Fixed-precision formatting so text artifacts are byte-stable.
inline std::string fmt(double v, int precision = 6) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(precision);
  ss << v;
  return ss.str();
}

inline std::string fmt_sci(double v, int precision = 6) {
  std::ostringstream ss;
  ss.setf(std::ios::scientific);
  ss.precision(precision);
  ss << v;
  return ss.str();
}

}  // namespace sasatr::io
