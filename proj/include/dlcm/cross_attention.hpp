#pragma once

#include "dlcm/autograd.hpp"
#include "dlcm/params.hpp"
#include "dlcm/segmenter.hpp"

namespace dlcm {

/// strict: a token attends only to fully completed concepts (its own
/// in-progress concept excluded; rows with nothing to attend bypass through
/// the residual). paper_faithful: the token's own concept is attendable,
/// which admits pooled lookahead up to seg_end(t).
enum class CausalityMode { PaperFaithful, Strict };

CausalityMode causality_from_string(const std::string& s);
std::string to_string(CausalityMode m);

struct CrossAttnWeights {
  Var w_q;  // d_token x heads*d_head
  Var w_k;  // d_concept x heads*d_head
  Var w_v;  // d_concept x heads*d_head
  Var w_o;  // heads*d_head x d_token
  int heads = 1;
  double eps = 1e-6;
};

/// Reference semantics: for each token, an unweighted softmax over the
/// allowed concept prefix of its own document; residual output attn*W_O + H.
Var irregular_cross_attention(Tape& t, Var h, Var z_smooth, const SegmentMap& map,
                              const CrossAttnWeights& w, CausalityMode mode);

/// repeat_interleave form: keys/values are expanded to one copy per member
/// token and masked with the standard causal prefix. Weights each visible
/// concept by its visible multiplicity m_k(t) (softmax over duplicates).
Var replicated_cross_attention(Tape& t, Var h, Var z_smooth, const SegmentMap& map,
                               const CrossAttnWeights& w, CausalityMode mode);

/// Unembedding with width-stabilized forward scaling:
/// logits = (1/s_token) * H' * W_unemb^T.
Var decode_logits(Tape& t, Var h_final, Var w_unemb, double s_token);

/// Per-row allowed concept range [lo, hi] (inclusive, 0-based; hi < lo means
/// an empty row) for the irregular path. Exposed for tests and oracles.
void irregular_bounds(const SegmentMap& map, CausalityMode mode, std::vector<int>& lo,
                      std::vector<int>& hi);

/// Same for the replicated path over expanded key rows.
void replicated_bounds(const SegmentMap& map, CausalityMode mode, std::vector<int>& lo,
                       std::vector<int>& hi);

}  // namespace dlcm
