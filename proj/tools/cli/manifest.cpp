#include "manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

#include "advlab/core/error.hpp"

namespace advlab::cli {

namespace {

constexpr const char* kModules[] = {"tensor_autodiff", "vision_models", "data_pipeline", "attack_engine",
                                    "training",        "evaluation",    "cli"};

std::string to_hex(const unsigned char* p, unsigned n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < n; ++i) {
    out.push_back(digits[p[i] >> 4]);
    out.push_back(digits[p[i] & 15]);
  }
  return out;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  return to_hex(md.data(), len);
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return sha256_hex(os.str());
}

std::string config_hash(const RunConfig& cfg) { return sha256_hex(resolved_json(cfg).dump()); }

nlohmann::ordered_json base_manifest(const std::string& command, const RunConfig& cfg) {
  nlohmann::ordered_json modules;
  for (const char* m : kModules) modules[m] = ADVLAB_VERSION;
  return {{"tool", "advlab"},
          {"version", ADVLAB_VERSION},
          {"command", command},
          {"modules", modules},
          {"config_hash", config_hash(cfg)},
          {"config", resolved_json(cfg)},
          {"seeds", to_json(seed_roots(cfg))}};
}

nlohmann::ordered_json input_entry(const std::string& label, const std::filesystem::path& path) {
  return {{"path", label}, {"sha256", sha256_file(path)}};
}

void write_manifest(const std::filesystem::path& dir, nlohmann::ordered_json manifest,
                    std::vector<std::string> outputs) {
  std::sort(outputs.begin(), outputs.end());
  manifest["outputs"] = outputs;
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw ReportError("cannot write '" + (dir / "manifest.json").string() + "'");
  out << manifest.dump(2) << '\n';
}

}  // namespace advlab::cli
