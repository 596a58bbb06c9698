#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "iterdpo/errors.hpp"
#include "iterdpo/hash.hpp"

namespace iterdpo {

using Json = nlohmann::json;

// One JSON document per line. nlohmann orders object keys alphabetically
// and emits shortest round-trip doubles, so serialization is byte-stable.
inline void write_jsonl(const std::filesystem::path& path,
                        const std::vector<Json>& lines) {
  std::filesystem::create_directories(path.parent_path().empty()
                                          ? std::filesystem::path(".")
                                          : path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw NotFoundError("cannot open for writing: " + path.string());
  for (const Json& j : lines) {
    out << j.dump() << '\n';
  }
  if (!out) throw IntegrityError("write failed: " + path.string());
}

inline std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open: " + path.string());
  std::vector<Json> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    lines.push_back(Json::parse(line));
  }
  return lines;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open: " + path.string());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

inline std::uint64_t file_hash(const std::filesystem::path& path) {
  std::string bytes = read_file_bytes(path);
  return hash_bytes(bytes.data(), bytes.size());
}

}  // namespace iterdpo
