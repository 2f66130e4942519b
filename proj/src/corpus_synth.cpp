#include "dlcm/corpus_synth.hpp"

#include <array>
#include <cmath>
#include <map>

namespace dlcm {

namespace {

const std::array<const char*, 8> kSentences = {
    "the red fox ran over the old stone bridge. ",
    "a small bird sang in the tall green tree. ",
    "rain fell all night on the quiet village roofs. ",
    "the baker made warm bread before the sun rose. ",
    "two children played chess by the open window. ",
    "a long train rolled slowly through the valley. ",
    "the fisherman mended his net on the gray pier. ",
    "snow covered the hills and the roads were still. ",
};

std::vector<std::string> split_docs(const std::string& text, std::size_t doc_bytes) {
  std::vector<std::string> docs;
  for (std::size_t i = 0; i < text.size(); i += doc_bytes) {
    docs.push_back(text.substr(i, doc_bytes));
  }
  if (docs.empty()) docs.push_back("");
  return docs;
}

}  // namespace

std::vector<std::string> synth_template_corpus(std::uint64_t seed, std::size_t total_bytes,
                                               std::size_t doc_bytes) {
  Rng rng(Rng::mix(seed, 0x74656d70ULL));
  std::string text;
  text.reserve(total_bytes + 64);
  while (text.size() < total_bytes) {
    text += kSentences[rng.next_below(kSentences.size())];
  }
  text.resize(total_bytes);
  return split_docs(text, doc_bytes);
}

std::vector<std::string> synth_random_corpus(std::uint64_t seed, std::size_t total_bytes,
                                             std::size_t doc_bytes) {
  static const char* alphabet =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789+/";
  Rng rng(Rng::mix(seed, 0x72616e64ULL));
  std::string text(total_bytes, ' ');
  for (char& c : text) c = alphabet[rng.next_below(64)];
  return split_docs(text, doc_bytes);
}

std::vector<std::string> synth_periodic_corpus(const std::string& phrase, std::size_t total_bytes,
                                               std::size_t doc_bytes) {
  if (phrase.empty()) throw ConfigError("synth_periodic_corpus: empty phrase");
  std::string text;
  text.reserve(total_bytes + phrase.size());
  while (text.size() < total_bytes) text += phrase;
  text.resize(total_bytes);
  return split_docs(text, doc_bytes);
}

std::vector<std::string> synth_mixed_corpus(std::uint64_t seed, std::size_t total_bytes,
                                            std::size_t doc_bytes) {
  const std::size_t half = total_bytes / 2;
  std::vector<std::string> a = synth_template_corpus(Rng::mix(seed, 1), half, doc_bytes);
  std::vector<std::string> b = synth_random_corpus(Rng::mix(seed, 2), total_bytes - half, doc_bytes);
  std::vector<std::string> out;
  const std::size_t n = std::max(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i < a.size()) out.push_back(std::move(a[i]));
    if (i < b.size()) out.push_back(std::move(b[i]));
  }
  return out;
}

double unigram_entropy(const std::vector<std::vector<int>>& token_docs) {
  std::map<int, long> counts;
  long total = 0;
  for (const auto& doc : token_docs) {
    // targets are the tokens following each position within a document
    for (std::size_t t = 1; t < doc.size(); ++t) {
      ++counts[doc[t]];
      ++total;
    }
  }
  if (total == 0) throw ConfigError("unigram_entropy: no targets");
  double h = 0.0;
  for (const auto& [tok, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace dlcm
