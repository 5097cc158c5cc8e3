#pragma once

// Weight file layout (all integers little-endian):
//   7 bytes   magic "RDNLA1\0"
//   8 x i32   P, D, G, G_b, scale, upsampler code, toggle bits
//             (bit0 CM, bit1 LRA, bit2 GFB), in_channels
//   u64       number of float32 values in the payload
//   payload   float32 parameters in registry order
//   u64       FNV-1a 64 checksum of the payload bytes

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "orbitsr/model.hpp"

namespace orbitsr {

class WeightFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigMismatchError : public WeightFileError {
 public:
  using WeightFileError::WeightFileError;
};

inline constexpr std::array<char, 7> kWeightMagic{'R', 'D', 'N', 'L', 'A', '1', '\0'};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "weight IO assumes a little-endian host");

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& is, const std::string& path) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U)))
    throw WeightFileError("weight file truncated: " + path);
  return v;
}

inline std::array<std::int32_t, 8> encode_config(const ModelConfig& c) {
  const std::int32_t bits = (c.cm ? 1 : 0) | (c.lra ? 2 : 0) | (c.gfb ? 4 : 0);
  return {c.blocks, c.layers, c.growth, c.base_channels, c.scale,
          static_cast<std::int32_t>(c.upsampler), bits, c.in_channels};
}

inline ModelConfig decode_config(const std::array<std::int32_t, 8>& f) {
  ModelConfig c;
  c.blocks = f[0];
  c.layers = f[1];
  c.growth = f[2];
  c.base_channels = f[3];
  c.scale = f[4];
  if (f[5] != 0 && f[5] != 1) throw WeightFileError("weight file: unknown upsampler code");
  c.upsampler = static_cast<Upsampler>(f[5]);
  c.cm = f[6] & 1;
  c.lra = f[6] & 2;
  c.gfb = f[6] & 4;
  c.in_channels = f[7];
  return c;
}

}  // namespace detail

template <typename T>
void save_weights(const Model<T>& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw WeightFileError("cannot open for writing: " + path);
  os.write(kWeightMagic.data(), kWeightMagic.size());
  for (std::int32_t v : detail::encode_config(model.config())) detail::put(os, v);
  std::vector<float> payload;
  payload.reserve(model.param_count());
  for (const auto* p : model.parameters())
    for (T v : p->value.values()) payload.push_back(static_cast<float>(v));
  detail::put<std::uint64_t>(os, payload.size());
  const std::size_t bytes = payload.size() * sizeof(float);
  os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(bytes));
  detail::put<std::uint64_t>(os, detail::fnv1a64(payload.data(), bytes));
  if (!os) throw WeightFileError("write failed: " + path);
}

inline ModelConfig read_weight_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw WeightFileError("cannot open weight file: " + path);
  std::array<char, 7> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kWeightMagic)
    throw WeightFileError("not a weight file (bad magic): " + path);
  std::array<std::int32_t, 8> fields{};
  for (auto& f : fields) f = detail::get<std::int32_t>(is, path);
  return detail::decode_config(fields);
}

template <typename T = float>
Model<T> load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw WeightFileError("cannot open weight file: " + path);
  std::array<char, 7> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kWeightMagic)
    throw WeightFileError("not a weight file (bad magic): " + path);
  std::array<std::int32_t, 8> fields{};
  for (auto& f : fields) f = detail::get<std::int32_t>(is, path);
  const ModelConfig config = detail::decode_config(fields);
  Model<T> model;
  try {
    model = Model<T>::skeleton(config);
  } catch (const std::invalid_argument& e) {
    throw WeightFileError(std::string("weight file holds an invalid config: ") + e.what());
  }
  const auto count = detail::get<std::uint64_t>(is, path);
  if (count != model.param_count())
    throw WeightFileError("weight file header mismatch: payload has " + std::to_string(count) +
                          " values, config needs " + std::to_string(model.param_count()));
  std::vector<float> payload(count);
  const std::size_t bytes = count * sizeof(float);
  if (!is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(bytes)))
    throw WeightFileError("weight file truncated: " + path);
  const auto checksum = detail::get<std::uint64_t>(is, path);
  if (checksum != detail::fnv1a64(payload.data(), bytes))
    throw WeightFileError("weight file checksum mismatch: " + path);
  std::size_t i = 0;
  for (auto* p : model.parameters())
    for (T& v : p->value.values()) v = static_cast<T>(payload[i++]);
  return model;
}

// Loads and requires the stored config to equal `expected`.
template <typename T = float>
Model<T> load_weights(const std::string& path, const ModelConfig& expected) {
  const ModelConfig stored = read_weight_config(path);
  if (!(stored == expected)) {
    std::string msg = "weight file config mismatch:";
    const auto a = detail::encode_config(stored);
    const auto b = detail::encode_config(expected);
    static constexpr const char* names[] = {"P", "D", "G", "G_b", "scale", "upsampler", "toggles",
                                            "in_channels"};
    for (std::size_t k = 0; k < a.size(); ++k)
      if (a[k] != b[k])
        msg += std::string(" ") + names[k] + " file=" + std::to_string(a[k]) +
               " expected=" + std::to_string(b[k]);
    throw ConfigMismatchError(msg);
  }
  return load_weights<T>(path);
}

}  // namespace orbitsr
