#pragma once

#include "dlcm/common.hpp"

#include <string>
#include <vector>

namespace dlcm {

/// Byte-level vocabulary: ids 0..255 are raw bytes, id 256 is the
/// begin-of-document marker. Round-trips arbitrary byte strings.
class Vocab {
 public:
  static constexpr int kBod = 256;

  Vocab() = default;

  /// Loads a vocabulary description; currently only {"type":"byte"} is
  /// accepted, which yields the built-in byte vocabulary.
  static Vocab from_file(const std::string& path);

  int size() const { return 257; }
  int bod() const { return kBod; }

  std::vector<int> tokenize(const std::string& text) const;
  std::string detokenize(const std::vector<int>& ids) const;

  /// One display string per token; BOD renders empty.
  std::vector<std::string> token_strings(const std::vector<int>& ids) const;
};

}  // namespace dlcm
