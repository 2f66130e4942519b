#pragma once

#include "dlcm/common.hpp"
#include "dlcm/tokenizer.hpp"

#include <string>
#include <vector>

namespace dlcm {

/// One packed training window. `ids` always has exactly the window length;
/// short tails are padded with BOD tokens whose targets are the ignore label.
struct TokenBatch {
  std::vector<int> ids;
  std::vector<int> doc_offsets;  // ascending, doc_offsets[0] == 0
  std::vector<int> targets;      // -1 = ignore (pad or end of document)
  int pad_start = -1;            // first padded position, or -1 if none

  int length() const { return static_cast<int>(ids.size()); }
  int real_tokens() const { return pad_start < 0 ? length() : pad_start; }

  /// Document start (within the window) governing position t.
  int doc_start_of(int t) const;
};

struct Document {
  std::vector<int> ids;  // begins with BOD
};

std::vector<Document> tokenize_corpus(const Vocab& vocab, const std::vector<std::string>& texts);

/// Reads one document per plain-text file, or one per line for *.jsonl files
/// (field "text").
std::vector<std::string> load_corpus_files(const std::vector<std::string>& paths);

/// Deterministic shuffled packing of documents into windows of exactly L
/// tokens. Documents longer than L continue into the next window (the
/// continuation restarts the local context). Throws ConfigError on an empty
/// corpus or L < 2.
std::vector<TokenBatch> pack_batches(const std::vector<Document>& corpus, int window,
                                     std::uint64_t seed);

/// Total unpadded tokens across batches.
long batch_token_count(const std::vector<TokenBatch>& batches);

}  // namespace dlcm
