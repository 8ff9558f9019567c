#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sasatr/io.hpp"
#include "sasatr/nn/model.hpp"

namespace sasatr::nn {

// CNET layout (little-endian):
//   "CNET" u32 version=1 u32 tensor_count
//   per tensor: u16 name_len, name bytes, u8 rank, u32 dims[rank], f32 payload
//   footer: u8 repr_count, u8 repr_codes[repr_count], f32 dropout_rate
inline constexpr std::string_view kModelMagic = "CNET";
inline constexpr std::uint32_t kModelVersion = 1;

inline std::string encode_model(const Model<float>& model) {
  io::ByteWriter w;
  w.put_bytes(kModelMagic);
  w.put(kModelVersion);
  w.put(static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    w.put(static_cast<std::uint16_t>(p.name.size()));
    w.put_bytes(p.name);
    w.put(static_cast<std::uint8_t>(p.value.rank()));
    for (auto d : p.value.shape()) w.put(static_cast<std::uint32_t>(d));
    for (float v : p.value.values()) w.put(v);
  }
  const auto codes = model.reprs().codes();
  w.put(static_cast<std::uint8_t>(codes.size()));
  for (auto c : codes) w.put(c);
  w.put(model.dropout_rate_f());
  return w.bytes();
}

inline Model<float> decode_model(std::string_view bytes, const std::string& source = "model") {
  io::ByteReader r(bytes, source);
  if (r.get_bytes(4) != kModelMagic) throw IoError(source + ": bad CNET magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kModelVersion) throw IoError(source + ": unsupported CNET version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  std::vector<Param<float>> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>();
    std::string name(r.get_bytes(name_len));
    const auto rank = r.get<std::uint8_t>();
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) shape.push_back(r.get<std::uint32_t>());
    std::vector<float> values(element_count(shape));
    for (auto& v : values) v = r.get<float>();
    params.push_back({std::move(name), Tensor<float>(shape, std::move(values)), Tensor<float>(shape)});
  }
  const auto n_codes = r.get<std::uint8_t>();
  std::vector<std::uint8_t> codes;
  for (std::uint8_t i = 0; i < n_codes; ++i) codes.push_back(r.get<std::uint8_t>());
  const auto dropout = r.get<float>();
  if (!r.at_end()) throw IoError(source + ": trailing bytes after CNET footer");
  return Model<float>(ReprSet::from_codes(codes), dropout, std::move(params));
}

inline void save_model(const std::filesystem::path& path, const Model<float>& model) {
  io::write_file_atomic(path, encode_model(model));
}

inline Model<float> load_model(const std::filesystem::path& path) {
  return decode_model(io::read_file(path), path.string());
}

}  // namespace sasatr::nn
