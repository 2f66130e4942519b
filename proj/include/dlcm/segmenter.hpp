#pragma once

#include "dlcm/autograd.hpp"
#include "dlcm/exact_sum.hpp"
#include "dlcm/params.hpp"

#include <string>
#include <vector>

namespace dlcm {

enum class BoundaryMode { RuleBased, LearnedMlp };
enum class Phase { Train, Infer };

struct SegmenterConfig {
  int d_scan = 0;                 // 0 -> min(128, d_token)
  double temp_sharpen = 0.5;      // alpha in (0, 1]
  double threshold = 0.5;
  double target_r = 4.0;
  BoundaryMode mode = BoundaryMode::RuleBased;
  double lambda_aux = 0.03;

  void validate() const;
  int resolved_d_scan(int d_token) const;
};

/// Per-token boundary state for one window. `p` lives on the tape (the
/// auxiliary loss differentiates through it); everything else is sampled or
/// derived and treated as constant.
struct BoundaryScores {
  Var p;                      // L x 1
  std::vector<double> p_sharp;
  std::vector<int> b;         // 0/1, filled by sample/threshold
  std::vector<char> forced;   // positions where p is overridden to 1
  std::vector<char> flagged;  // zero-norm cosine rows (p fell back to 0.5)
};

struct SegmentMap {
  std::vector<int> lengths;            // per segment, sums to L
  std::vector<int> j;                  // per token, 1-based cumulative boundary count
  std::vector<int> seg_start;          // per token
  std::vector<int> seg_end;            // per token
  std::vector<int> token_first_concept;  // per token, 0-based first concept of its document
  std::vector<char> concept_reset;     // per concept: first of its document
  int concepts = 0;

  int tokens() const { return static_cast<int>(j.size()); }
};

/// Eq.-style boundary probabilities from projected adjacent-token
/// dissimilarity: p_t = (1 - cos(q_{t-1}, k_t)) / 2, forced to 1 at document
/// starts. Zero-norm rows fall back to cos = 0 (p = 0.5) and are flagged.
BoundaryScores boundary_scores(Tape& t, Var h, Var w_q, Var w_k,
                               const std::vector<int>& doc_offsets);

/// Learned-predictor ablation arm: p_t = sigmoid(MLP([h_{t-1}; h_t])), same
/// forcing rules. mlp_w1: 2*d_token x d_hidden, mlp_w2: d_hidden x 1.
BoundaryScores learned_boundary_scores(Tape& t, Var h, Var mlp_w1, Var mlp_b1, Var mlp_w2,
                                       Var mlp_b2, const std::vector<int>& doc_offsets);

/// Temperature sharpening sigma(logit(p)/alpha); identity at alpha = 1,
/// fixed point at p = 0.5. Throws ConfigError for alpha <= 0.
double sharpen_prob(double p, double alpha);

/// Fills scores.p_sharp and scores.b: Bernoulli(p_sharp) in Train phase,
/// hard threshold p >= 0.5 in Infer phase; forced positions stay 1.
void sharpen_and_sample(BoundaryScores& scores, Tape& t, const SegmenterConfig& cfg, Phase phase,
                        Rng& rng);

/// Builds the token->concept map; requires b = 1 at every doc offset.
SegmentMap build_segment_map(const std::vector<int>& b, const std::vector<int>& doc_offsets);

/// Mean-pools token states per segment and projects to the concept width:
/// C = pool(H) * W_up (W_up stored d_token x d_concept).
Var pool_concepts(Tape& t, Var h, const SegmentMap& map, Var w_up);

/// Token-weighted global boundary statistics. sum_p is accumulated exactly,
/// so shard merging is associative and bit-reproducible in any order.
struct GlobalStats {
  long token_count = 0;
  ExactSum sum_p;
  long sum_b = 0;

  void add_token(double p, int b);
  void merge(const GlobalStats& other);
  double g() const;  // expected boundary rate
  double f() const;  // actual boundary rate
};

GlobalStats accumulate_global_stats(const std::vector<GlobalStats>& shards);

/// Load-balancing loss; gradient flows through G only (F is sampled).
double aux_loss(double g, double f, double r);
/// d(aux_loss)/dG at fixed F.
double aux_loss_dg(double f, double r);
/// Tape version, affine in G.
Var aux_loss_var(Tape& t, Var g, double f, double r);

/// " | "-separated segmentation dump; token_texts holds one display string
/// per token (special tokens may render empty).
std::string format_segment_dump(const std::vector<std::string>& token_texts,
                                const SegmentMap& map);

/// Mean tokens per concept of a map (pads excluded by the caller).
double mean_tokens_per_concept(const SegmentMap& map);

}  // namespace dlcm
