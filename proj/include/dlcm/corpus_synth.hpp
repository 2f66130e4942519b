#pragma once

#include "dlcm/common.hpp"

#include <string>
#include <vector>

namespace dlcm {

/// Deterministic synthetic corpora used by tests, ablations and CLI demos.
/// All generators split output into documents of roughly `doc_bytes` bytes.

/// Highly learnable prose: sentences drawn from a small fixed pool, so the
/// next-byte distribution is near-deterministic inside sentences.
std::vector<std::string> synth_template_corpus(std::uint64_t seed, std::size_t total_bytes,
                                               std::size_t doc_bytes = 2048);

/// Near-incompressible noise: uniform draws from a 64-symbol alphabet.
std::vector<std::string> synth_random_corpus(std::uint64_t seed, std::size_t total_bytes,
                                             std::size_t doc_bytes = 2048);

/// Exact repetition of one phrase.
std::vector<std::string> synth_periodic_corpus(const std::string& phrase, std::size_t total_bytes,
                                               std::size_t doc_bytes = 2048);

/// Alternating template/noise documents (mixed information density).
std::vector<std::string> synth_mixed_corpus(std::uint64_t seed, std::size_t total_bytes,
                                            std::size_t doc_bytes = 2048);

/// Entropy (nats/token) of the empirical next-token target distribution a
/// memoryless model would face on this corpus; the baseline for trained CE.
double unigram_entropy(const std::vector<std::vector<int>>& token_docs);

}  // namespace dlcm
