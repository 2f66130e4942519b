#include "dlcm/batching.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dlcm {

int TokenBatch::doc_start_of(int t) const {
  int start = 0;
  for (int off : doc_offsets) {
    if (off <= t) start = off;
    else break;
  }
  return start;
}

std::vector<Document> tokenize_corpus(const Vocab& vocab, const std::vector<std::string>& texts) {
  std::vector<Document> docs;
  docs.reserve(texts.size());
  for (const std::string& s : texts) docs.push_back(Document{vocab.tokenize(s)});
  return docs;
}

std::vector<std::string> load_corpus_files(const std::vector<std::string>& paths) {
  std::vector<std::string> texts;
  for (const std::string& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("corpus: cannot open " + path);
    if (std::filesystem::path(path).extension() == ".jsonl") {
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        texts.push_back(j.at("text").get<std::string>());
      }
    } else {
      std::ostringstream ss;
      ss << in.rdbuf();
      texts.push_back(ss.str());
    }
  }
  return texts;
}

std::vector<TokenBatch> pack_batches(const std::vector<Document>& corpus, int window,
                                     std::uint64_t seed) {
  if (window < 2) throw ConfigError("pack_batches: window must be >= 2");
  if (corpus.empty()) throw ConfigError("pack_batches: empty corpus");

  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(Rng::mix(seed, 0x7061636bULL));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.next_below(i)]);
  }

  // Flatten in shuffled order; record per-token (doc id, is doc start).
  std::vector<int> stream;
  std::vector<int> stream_doc;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const Document& d = corpus[order[oi]];
    if (d.ids.empty()) continue;
    for (int id : d.ids) {
      stream.push_back(id);
      stream_doc.push_back(static_cast<int>(oi));
    }
  }
  if (stream.empty()) throw ConfigError("pack_batches: corpus has no tokens");

  const int total = static_cast<int>(stream.size());
  std::vector<TokenBatch> out;
  for (int w0 = 0; w0 < total; w0 += window) {
    TokenBatch b;
    const int real = std::min(window, total - w0);
    b.ids.resize(static_cast<std::size_t>(window));
    b.targets.assign(static_cast<std::size_t>(window), -1);
    b.doc_offsets.push_back(0);
    for (int t = 0; t < real; ++t) {
      const int g = w0 + t;
      b.ids[static_cast<std::size_t>(t)] = stream[static_cast<std::size_t>(g)];
      if (t > 0 && stream_doc[static_cast<std::size_t>(g)] !=
                       stream_doc[static_cast<std::size_t>(g - 1)]) {
        b.doc_offsets.push_back(t);
      }
      if (g + 1 < total && stream_doc[static_cast<std::size_t>(g + 1)] ==
                               stream_doc[static_cast<std::size_t>(g)]) {
        b.targets[static_cast<std::size_t>(t)] = stream[static_cast<std::size_t>(g + 1)];
      }
    }
    if (real < window) {
      b.pad_start = real;
      b.doc_offsets.push_back(real);  // pad region starts a fresh (ignored) context
      for (int t = real; t < window; ++t) b.ids[static_cast<std::size_t>(t)] = Vocab::kBod;
    }
    out.push_back(std::move(b));
  }
  return out;
}

long batch_token_count(const std::vector<TokenBatch>& batches) {
  long n = 0;
  for (const TokenBatch& b : batches) n += b.real_tokens();
  return n;
}

}  // namespace dlcm
