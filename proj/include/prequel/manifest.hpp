#pragma once

// Run manifests: enough to rebuild an output from its inputs and config.
// No timestamps, so identical runs produce identical manifests.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "prequel/io.hpp"

namespace prequel {

inline constexpr const char* kVersion = "0.1.0";

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json inputs = nlohmann::json::array();
  nlohmann::json versions = nlohmann::json::object();
  nlohmann::json outputs = nlohmann::json::array();

  void add_input(const std::filesystem::path& p) {
    inputs.push_back({{"path", p.string()}, {"hash", io::file_hash(p)}});
  }

  void add_output(const std::filesystem::path& p) {
    outputs.push_back({{"path", p.string()}, {"hash", io::file_hash(p)}});
  }

  nlohmann::json to_json() const {
    nlohmann::json v = versions;
    v["prequel"] = kVersion;
    return {{"command", command}, {"config", config}, {"config_hash", io::content_hash(config.dump())},
            {"inputs", inputs}, {"outputs", outputs}, {"versions", v}};
  }

  void write(const std::filesystem::path& path) const { io::write_atomically(path, to_json().dump(2) + "\n"); }
};

}  // namespace prequel
