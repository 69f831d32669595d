#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "advlab/models/model.hpp"
#include "json.hpp"

namespace advlab {

// Checkpoint = JSON manifest + binary blob of little-endian float32 values.
// Manifest entries list (name, shape, offset, length) with offset in bytes
// from the start of the blob and length in float32 elements; entries are
// stored back to back in manifest order, model parameters first, then any
// extra tensors (optimizer state).

struct NamedBuffer {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct LoadedCheckpoint {
  Model<float> model;
  std::vector<NamedBuffer> extra;
  nlohmann::ordered_json metadata;
};

inline constexpr const char* kCheckpointFormat = "advlab.checkpoint";

namespace detail {

inline void write_le_floats(std::ofstream& out, std::span<const float> values) {
  std::vector<std::uint32_t> words(values.size());
  std::memcpy(words.data(), values.data(), values.size() * sizeof(float));
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& w : words) w = __builtin_bswap32(w);
  }
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
}

inline std::vector<float> read_le_floats(const std::vector<char>& blob, std::size_t offset, std::size_t count) {
  std::vector<std::uint32_t> words(count);
  std::memcpy(words.data(), blob.data() + offset, count * 4);
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& w : words) w = __builtin_bswap32(w);
  }
  std::vector<float> out(count);
  std::memcpy(out.data(), words.data(), count * 4);
  return out;
}

inline std::filesystem::path blob_path_for(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

}  // namespace detail

/// Writes `<stem>.json` and `<stem>.bin` where stem is `manifest_path`
/// without extension.
inline void save_checkpoint(const std::filesystem::path& manifest_path, const Model<float>& model,
                            const std::vector<NamedBuffer>& extra = {},
                            const nlohmann::ordered_json& metadata = nlohmann::ordered_json::object()) {
  namespace fs = std::filesystem;
  if (manifest_path.has_parent_path()) fs::create_directories(manifest_path.parent_path());
  const fs::path blob_path = detail::blob_path_for(manifest_path);

  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  if (!blob) throw CheckpointError("cannot write " + blob_path.string());

  std::size_t offset = 0;
  auto entry = [&](const std::string& name, const Shape& shape, std::span<const float> values) {
    nlohmann::ordered_json e{{"name", name}, {"shape", shape}, {"offset", offset}, {"length", values.size()}};
    detail::write_le_floats(blob, values);
    offset += values.size() * 4;
    return e;
  };

  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (const auto& [name, t] : model.parameters()) params.push_back(entry(name, t.shape(), t.data()));
  nlohmann::ordered_json extras = nlohmann::ordered_json::array();
  for (const auto& b : extra) extras.push_back(entry(b.name, b.shape, b.values));
  blob.close();
  if (!blob) throw CheckpointError("failed writing " + blob_path.string());

  nlohmann::ordered_json manifest{{"format", kCheckpointFormat},
                                  {"version", 1},
                                  {"dtype", "float32-le"},
                                  {"spec", model.spec()},
                                  {"seed", model.seed()},
                                  {"blob", blob_path.filename().string()},
                                  {"blob_bytes", offset},
                                  {"parameters", params},
                                  {"extra_tensors", extras},
                                  {"metadata", metadata}};
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + manifest_path.string());
  out << manifest.dump(2) << '\n';
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_path);
  if (!in) throw CheckpointError("cannot open checkpoint manifest " + manifest_path.string());
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }

  try {
    if (manifest.at("format") != kCheckpointFormat) throw CheckpointError("not an advlab checkpoint");
    const auto spec = manifest.at("spec").get<ClassifierSpec>();
    const auto seed = manifest.at("seed").get<std::uint64_t>();
    const fs::path blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();

    std::ifstream bin(blob_path, std::ios::binary);
    if (!bin) throw CheckpointError("cannot open checkpoint blob " + blob_path.string());
    std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    if (blob.size() != manifest.at("blob_bytes").get<std::size_t>()) {
      throw CheckpointError("blob " + blob_path.string() + " has " + std::to_string(blob.size()) +
                           " bytes, manifest expects " + manifest.at("blob_bytes").dump());
    }

    auto read_entry = [&](const nlohmann::ordered_json& e) {
      NamedBuffer b;
      b.name = e.at("name").get<std::string>();
      b.shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto length = e.at("length").get<std::size_t>();
      if (length != numel(b.shape) || offset + length * 4 > blob.size()) {
        throw CheckpointError("entry '" + b.name + "' is inconsistent with its shape or the blob size");
      }
      b.values = detail::read_le_floats(blob, offset, length);
      return b;
    };

    LoadedCheckpoint out{build_model<float>(spec, seed), {}, manifest.value("metadata", nlohmann::ordered_json::object())};
    const auto& entries = manifest.at("parameters");
    if (entries.size() != out.model.parameters().size()) {
      throw CheckpointError("checkpoint lists " + std::to_string(entries.size()) + " parameters, spec defines " +
                            std::to_string(out.model.parameters().size()));
    }
    std::size_t i = 0;
    for (auto& [name, t] : out.model.parameters()) {
      auto b = read_entry(entries[i++]);
      if (b.name != name || b.shape != t.shape()) {
        throw CheckpointError("parameter '" + b.name + "' " + to_string(b.shape) + " does not match expected '" +
                              name + "' " + to_string(t.shape()));
      }
      std::copy(b.values.begin(), b.values.end(), t.mutable_data().begin());
    }
    for (const auto& e : manifest.at("extra_tensors")) out.extra.push_back(read_entry(e));
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
  } catch (const SpecError& e) {
    throw CheckpointError("checkpoint " + manifest_path.string() + " has an invalid spec: " + e.what());
  }
}

}  // namespace advlab
