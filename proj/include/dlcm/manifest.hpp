#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dlcm {

/// SHA-1 hex digest (content hashing for manifests and config identity).
std::string sha1_hex(const std::string& bytes);

/// Every CLI run writes one of these next to its outputs so the run can be
/// re-executed exactly.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string content_hash;  // hash of resolved config + input digests
  std::string out_dir;
  std::vector<std::string> argv;

  std::string to_json() const;
  void write(const std::string& path) const;
};

}  // namespace dlcm
