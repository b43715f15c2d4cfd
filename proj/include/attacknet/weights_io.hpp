#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "attacknet/errors.hpp"
#include "attacknet/io_util.hpp"
#include "attacknet/model.hpp"
#include "attacknet/tensor.hpp"

namespace attacknet {

// Weights container format, little-endian throughout:
//   magic "ATKW1\0" | u16 version | u32 json_len | config json (UTF-8)
//   then per tensor in canonical enumeration order:
//     u16 name_len | name | u8 rank | rank x u32 dims | size x f64
//   and a trailing u32 CRC-32 (IEEE) over every preceding byte.
// Running statistics are stored alongside the trainable parameters so a
// reloaded model evaluates identically.

inline constexpr char kWeightsMagic[6] = {'A', 'T', 'K', 'W', '1', '\0'};
inline constexpr std::uint16_t kWeightsVersion = 1;

inline std::string serialize_weights(const ModelWeights& weights) {
  weights.config.validate();
  ByteWriter w;
  w.put_bytes(std::string_view(kWeightsMagic, sizeof(kWeightsMagic)));
  w.put_u16(kWeightsVersion);
  const std::string config_json = nlohmann::json(weights.config).dump();
  if (config_json.size() > 0xFFFFFFFFu) {
    throw FormatError("config json too large");
  }
  w.put_u32(static_cast<std::uint32_t>(config_json.size()));
  w.put_bytes(config_json);
  for (const NamedTensorRef& ref : enumerate_tensors(weights)) {
    if (ref.name.size() > 0xFFFF) {
      throw FormatError("tensor name too long: " + ref.name);
    }
    w.put_u16(static_cast<std::uint16_t>(ref.name.size()));
    w.put_bytes(ref.name);
    const Tensor& t = *ref.tensor;
    w.put_u8(static_cast<std::uint8_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) {
      w.put_u32(static_cast<std::uint32_t>(t.dim(d)));
    }
    for (std::int64_t i = 0, n = t.size(); i < n; ++i) {
      w.put_f64(t[i]);
    }
  }
  w.put_crc32();
  return std::move(w).bytes();
}

inline ModelWeights deserialize_weights(std::string_view bytes) {
  // Structural parse first so truncation surfaces as an I/O error (the
  // ByteReader throws when the stream ends early); the checksum over the
  // full payload is verified once the structure has been read.
  ByteReader r(bytes);
  const std::string_view magic = r.get_bytes(sizeof(kWeightsMagic));
  if (magic != std::string_view(kWeightsMagic, sizeof(kWeightsMagic))) {
    throw FormatError("bad weights magic");
  }
  const std::uint16_t version = r.get_u16();
  if (version != kWeightsVersion) {
    throw FormatError("unsupported weights version " +
                      std::to_string(version));
  }

  const std::uint32_t json_len = r.get_u32();
  const std::string config_json(r.get_bytes(json_len));
  ModelConfig config;
  try {
    from_json(nlohmann::json::parse(config_json), config);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("bad embedded config: ") + e.what());
  }
  config.validate();

  // The embedded config fixes every tensor name and shape; anything read
  // from the stream must match it exactly.
  ModelWeights weights = init_weights(config, 0);
  for (const NamedTensorRef& ref : enumerate_tensors(weights)) {
    const std::uint16_t name_len = r.get_u16();
    const std::string name(r.get_bytes(name_len));
    if (name != ref.name) {
      throw CorruptionError("expected tensor '" + ref.name + "', found '" +
                            name + "'");
    }
    const std::uint8_t rank = r.get_u8();
    if (rank != ref.tensor->rank()) {
      throw CorruptionError("tensor '" + name + "' rank mismatch");
    }
    std::vector<std::int64_t> dims(rank);
    for (std::uint8_t d = 0; d < rank; ++d) {
      dims[d] = static_cast<std::int64_t>(r.get_u32());
      if (dims[d] != ref.tensor->dim(d)) {
        throw CorruptionError("tensor '" + name + "' shape mismatch");
      }
    }
    double* out = ref.tensor->data();
    for (std::int64_t i = 0, n = ref.tensor->size(); i < n; ++i) {
      out[i] = r.get_f64();
    }
  }
  const std::uint32_t stored_crc = r.get_u32();
  if (r.remaining() != 0) {
    throw CorruptionError("trailing bytes after weights payload");
  }
  if (stored_crc != crc32(bytes.substr(0, bytes.size() - 4))) {
    throw CorruptionError("weights checksum mismatch");
  }
  return weights;
}

inline void save_weights(const std::string& path, const ModelWeights& w) {
  atomic_write_file(path, serialize_weights(w));
}

inline ModelWeights load_weights(const std::string& path) {
  return deserialize_weights(read_file(path));
}

}  // namespace attacknet
