#pragma once

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ulab/error.hpp"
#include "ulab/model/checkpoint.hpp"

namespace ulab::runner {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kToolName = "ulab";
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kOutRootEnv = "ULAB_OUT_ROOT";

/// Git-style blob hash: SHA-1 over "blob <len>\0" followed by the bytes.
inline std::string blob_sha1(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("cannot allocate a digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 && EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("SHA-1 digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::string file_sha1(const fs::path& path) { return blob_sha1(read_text(path)); }

inline void write_text_atomic(const fs::path& path, const std::string& text) { model::write_file_atomic(path, text); }

/// Relative output paths land under $ULAB_OUT_ROOT when it is set.
inline fs::path resolve_output(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv(kOutRootEnv); root && *root) return fs::path(root) / p;
  return p;
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct InputFile {
  std::string role;
  fs::path path;
  std::string sha1;
};

struct RunManifest {
  std::string command;
  json args = json::object();    // subcommand options as given
  json config = json::object();  // fully resolved
  json seeds = json::object();
  std::vector<InputFile> inputs;
  json extra = json::object();   // command-specific facts (e.g. epoch schedule)
  std::string started_utc = utc_now();

  void add_input(const std::string& role, const fs::path& path) { inputs.push_back({role, path, file_sha1(path)}); }

  json to_json() const {
    json in = json::array();
    for (const auto& i : inputs) in.push_back({{"role", i.role}, {"path", i.path.string()}, {"sha1", i.sha1}});
    return {{"tool", kToolName}, {"version", kToolVersion}, {"command", command}, {"args", args},
            {"config", config},  {"seeds", seeds},          {"inputs", in},       {"extra", extra},
            {"started_utc", started_utc}};
  }

  static RunManifest from_json(const json& j) {
    RunManifest m;
    try {
      m.command = j.at("command").get<std::string>();
      m.args = j.at("args");
      m.config = j.at("config");
      m.seeds = j.value("seeds", json::object());
      m.extra = j.value("extra", json::object());
      m.started_utc = j.value("started_utc", std::string{});
      for (const auto& i : j.at("inputs"))
        m.inputs.push_back({i.at("role").get<std::string>(), i.at("path").get<std::string>(), i.at("sha1").get<std::string>()});
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed run manifest: ") + e.what());
    }
    return m;
  }

  /// Rehashes every input; throws DataError if any changed since the run.
  void verify_inputs() const {
    for (const auto& i : inputs) {
      const auto now = file_sha1(i.path);
      if (now != i.sha1) throw DataError("input '" + i.role + "' (" + i.path.string() + ") changed since the run");
    }
  }

  const InputFile* input(const std::string& role) const {
    for (const auto& i : inputs)
      if (i.role == role) return &i;
    return nullptr;
  }
};

inline void write_manifest(const RunManifest& m, const fs::path& path) { write_text_atomic(path, m.to_json().dump(2) + "\n"); }

inline RunManifest load_manifest(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return RunManifest::from_json(j);
}

}  // namespace ulab::runner
