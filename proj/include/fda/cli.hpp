#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace fda::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 1, kValidation = 2, kRuntime = 3 };

/// Record of one command, written next to its outputs.
struct RunManifest {
  std::string command;
  std::string config_hash;
  nlohmann::ordered_json seeds = nlohmann::ordered_json::object();
  nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
  nlohmann::ordered_json outputs = nlohmann::ordered_json::object();
  std::string tool_version = kToolVersion;
  double wall_time_s = 0.0;
};

nlohmann::ordered_json to_json(const RunManifest& m);
/// Writes through a temporary file and renames it into place.
void write_manifest(const RunManifest& m, const std::filesystem::path& path);
/// 64-bit FNV-1a of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::ordered_json& cfg);

/// Runs one command line; argv[0] is the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace fda::cli
