#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mtbp/error.hpp"
#include "mtbp/version.hpp"

namespace mtbp {

// FNV-1a, 64 bit.  Keyed only by content: reruns on identical inputs hash
// identically, so manifests are byte-reproducible.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

inline std::string content_digest(std::string_view data) {
  static const char* hex = "0123456789abcdef";
  std::uint64_t h = fnv1a64(data);
  std::string s = "fnv1a64:";
  for (int i = 15; i >= 0; --i) s += hex[(h >> (4 * i)) & 0xF];
  return s;
}

// What produced an output: the command, its resolved configuration, and a
// digest of every input file.  Deliberately timestamp-free.
struct RunManifest {
  std::string command;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
  std::vector<std::string> outputs;

  void add_input(const std::string& path, std::string_view content) {
    inputs[path] = content_digest(content);
  }
};

inline std::string render_manifest(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["tool"] = std::string(kToolName) + " " + kToolVersion;
  j["command"] = m.command;
  j["config"] = m.config;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  return j.dump(2) + "\n";
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::validation, "cannot open '" + path + "'");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::validation, "error reading '" + path + "'");
  return data;
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::validation, "cannot write '" + path + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) fail(ErrorKind::validation, "error writing '" + path + "'");
}

// Every file-producing command drops `<primary output>.manifest.json` next
// to its output; report commands print the same JSON to stdout instead.
inline void write_manifest_file(const std::string& primary_output, const RunManifest& m) {
  write_file(primary_output + ".manifest.json", render_manifest(m));
}

}  // namespace mtbp
