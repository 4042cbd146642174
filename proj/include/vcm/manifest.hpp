#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vcm/common.hpp"

namespace vcm {

// FNV-1a over a byte stream; cheap and stable content fingerprint for
// manifests and report provenance.
inline std::uint64_t fnv1a(std::span<const char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_file(const std::filesystem::path& path,
                               std::uint64_t h = 0xcbf29ce484222325ULL) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VcmError("cannot hash missing file: " + path.string());
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a(std::span<const char>(buf, static_cast<std::size_t>(in.gcount())), h);
  }
  return h;
}

// Hash of every regular file under dir, folded in sorted relative-path
// order so the result is layout-stable.
inline std::string hash_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    const std::string rel = fs::relative(f, dir).generic_string();
    h = fnv1a(std::span<const char>(rel.data(), rel.size()), h);
    h = hash_file(f, h);
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string hash_file_hex(const std::filesystem::path& path) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash_file(path)));
  return buf;
}

inline std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

// Reproducibility record written to the output directory before any work
// starts. Command, full config snapshot, input hashes and seed are enough
// to replay the run.
struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::string dataset_path;
  std::string dataset_hash;
  std::uint64_t seed = 0;
  std::string code_version = kVersion;
  nlohmann::json output_paths;
  std::string started_at;
  std::string finished_at;  // empty until completion
  std::string status = "running";

  nlohmann::json to_json() const {
    return nlohmann::json{{"command", command},
                          {"config", config},
                          {"dataset_path", dataset_path},
                          {"dataset_hash", dataset_hash},
                          {"seed", seed},
                          {"code_version", code_version},
                          {"output_paths", output_paths},
                          {"started_at", started_at},
                          {"finished_at", finished_at},
                          {"status", status}};
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw VcmError("cannot write manifest: " + path.string());
    out << to_json().dump(2) << '\n';
  }
};

}  // namespace vcm
