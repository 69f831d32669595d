#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "run_config.hpp"

namespace advlab::cli {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Hash of the resolved config, so configs that differ only in omitted
/// defaults or formatting hash the same.
std::string config_hash(const RunConfig& cfg);

/// Manifest skeleton shared by every command: tool and module versions,
/// config echo with its hash, and the seed streams.
nlohmann::ordered_json base_manifest(const std::string& command, const RunConfig& cfg);

/// Input files recorded with their hash. `label` is the path as the user
/// gave it, so the manifest does not depend on the working directory.
nlohmann::ordered_json input_entry(const std::string& label, const std::filesystem::path& path);

/// Writes `dir/manifest.json` listing `outputs` (names relative to `dir`).
void write_manifest(const std::filesystem::path& dir, nlohmann::ordered_json manifest,
                    std::vector<std::string> outputs);

}  // namespace advlab::cli
