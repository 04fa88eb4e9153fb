// SPDX-License-Identifier: Apache-2.0
#include "wnprobe_cli/run_manifest.hpp"

#include <ctime>
#include <fstream>

#include "wnprobe/checksum.hpp"
#include "wnprobe/error.hpp"
#include "wnprobe/version.hpp"

namespace wnprobe::cli {

RunManifest::RunManifest(std::string command, std::vector<std::string> argv)
    : command_(std::move(command)), argv_(std::move(argv)) {}

void RunManifest::set_option(const std::string& name, nlohmann::json value) { options_[name] = std::move(value); }

void RunManifest::add_seed(const std::string& name, std::uint64_t seed) { seeds_[name] = seed; }

void RunManifest::add_input(const std::string& role, const std::filesystem::path& path) {
  inputs_.push_back({{"role", role}, {"path", path.string()}, {"checksum", sha256_file(path)}});
}

void RunManifest::add_output(const std::string& name) {
  for (const auto& o : outputs_) {
    if (o == name) return;
  }
  outputs_.push_back(name);
}

void RunManifest::set_status(int exit_code, const std::string& message) {
  exit_code_ = exit_code;
  message_ = message;
}

nlohmann::json RunManifest::to_json() const {
  const std::time_t t = std::chrono::system_clock::to_time_t(started_at_);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  nlohmann::json j;
  j["format"] = "wnprobe-run/1";
  j["tool"] = "wnprobe";
  j["version"] = version_string();
  j["command"] = command_;
  j["argv"] = argv_;
  j["options"] = options_;
  j["seeds"] = seeds_;
  j["inputs"] = inputs_;
  j["outputs"] = outputs_;
  j["exit_code"] = exit_code_;
  if (!message_.empty()) j["message"] = message_;
  j["started_at"] = stamp;
  j["wall_clock_seconds"] = seconds;
  return j;
}

void RunManifest::write(const std::filesystem::path& dir) const {
  std::ofstream out(dir / kManifestName, std::ios::trunc);
  if (!out) throw input_error("cannot write " + (dir / kManifestName).string());
  out << to_json().dump(2) << '\n';
}

OutputDir::OutputDir(std::filesystem::path dir, RunManifest& manifest) : dir_(std::move(dir)), manifest_(&manifest) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw input_error("cannot create output directory " + dir_.string() + ": " + ec.message());
}

std::filesystem::path OutputDir::file(const std::string& name) {
  manifest_->add_output(name);
  const auto p = dir_ / name;
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  return p;
}

void OutputDir::text(const std::string& name, const std::string& content) {
  std::ofstream out(file(name), std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("cannot write " + (dir_ / name).string());
  out << content;
}

void OutputDir::json(const std::string& name, nlohmann::json value) {
  value["manifest"] = kManifestName;
  text(name, value.dump(2) + "\n");
}

}  // namespace wnprobe::cli
