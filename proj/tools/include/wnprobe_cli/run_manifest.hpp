// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace wnprobe::cli {

inline constexpr const char* kManifestName = "manifest.json";

// Provenance of one command invocation. Written last, next to the outputs it lists.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv);

  void set_option(const std::string& name, nlohmann::json value);
  void add_seed(const std::string& name, std::uint64_t seed);
  // Hashes the file now.
  void add_input(const std::string& role, const std::filesystem::path& path);
  void add_output(const std::string& name);
  void set_status(int exit_code, const std::string& message = {});

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& dir) const;

 private:
  std::string command_;
  std::vector<std::string> argv_;
  nlohmann::json options_ = nlohmann::json::object();
  nlohmann::json seeds_ = nlohmann::json::object();
  nlohmann::json inputs_ = nlohmann::json::array();
  std::vector<std::string> outputs_;
  int exit_code_ = 0;
  std::string message_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
  std::chrono::system_clock::time_point started_at_ = std::chrono::system_clock::now();
};

// Writes files into the output directory and registers them with the manifest.
class OutputDir {
 public:
  OutputDir(std::filesystem::path dir, RunManifest& manifest);

  const std::filesystem::path& path() const { return dir_; }
  std::filesystem::path file(const std::string& name);  // registers, returns full path
  void text(const std::string& name, const std::string& content);
  // Adds {"manifest": "manifest.json"} before writing.
  void json(const std::string& name, nlohmann::json value);

 private:
  std::filesystem::path dir_;
  RunManifest* manifest_;
};

}  // namespace wnprobe::cli
