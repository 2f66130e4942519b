#include "dlcm/cross_attention.hpp"

#include "dlcm/transformer.hpp"

#include <cmath>

namespace dlcm {

CausalityMode causality_from_string(const std::string& s) {
  if (s == "paper") return CausalityMode::PaperFaithful;
  if (s == "strict") return CausalityMode::Strict;
  throw ConfigError("causality mode must be 'paper' or 'strict', got '" + s + "'");
}

std::string to_string(CausalityMode m) {
  return m == CausalityMode::PaperFaithful ? "paper" : "strict";
}

void irregular_bounds(const SegmentMap& map, CausalityMode mode, std::vector<int>& lo,
                      std::vector<int>& hi) {
  const int L = map.tokens();
  lo.resize(static_cast<std::size_t>(L));
  hi.resize(static_cast<std::size_t>(L));
  for (int t = 0; t < L; ++t) {
    const int own = map.j[static_cast<std::size_t>(t)] - 1;  // 0-based own concept
    lo[static_cast<std::size_t>(t)] = map.token_first_concept[static_cast<std::size_t>(t)];
    hi[static_cast<std::size_t>(t)] = mode == CausalityMode::PaperFaithful ? own : own - 1;
  }
}

void replicated_bounds(const SegmentMap& map, CausalityMode mode, std::vector<int>& lo,
                       std::vector<int>& hi) {
  const int L = map.tokens();
  // start position of each concept
  std::vector<int> concept_start(static_cast<std::size_t>(map.concepts));
  {
    int pos = 0;
    for (int k = 0; k < map.concepts; ++k) {
      concept_start[static_cast<std::size_t>(k)] = pos;
      pos += map.lengths[static_cast<std::size_t>(k)];
    }
  }
  lo.resize(static_cast<std::size_t>(L));
  hi.resize(static_cast<std::size_t>(L));
  for (int t = 0; t < L; ++t) {
    const int fc = map.token_first_concept[static_cast<std::size_t>(t)];
    lo[static_cast<std::size_t>(t)] = concept_start[static_cast<std::size_t>(fc)];
    hi[static_cast<std::size_t>(t)] = mode == CausalityMode::PaperFaithful
                                          ? t
                                          : map.seg_start[static_cast<std::size_t>(t)] - 1;
  }
}

namespace {

Var cross_attention_core(Tape& t, Var h, Var keys, Var values, const CrossAttnWeights& w,
                         const std::vector<int>& lo, const std::vector<int>& hi) {
  const Matrix& H = t.value(h);
  const Index total_head_dim = t.value(w.w_q).cols();
  if (total_head_dim % w.heads != 0) {
    throw ShapeError("cross_attention: head dims inconsistent");
  }
  const Index dh = total_head_dim / w.heads;

  Var q_all = matmul(t, h, w.w_q);

  std::vector<Var> head_ctx;
  head_ctx.reserve(static_cast<std::size_t>(w.heads));
  for (int g = 0; g < w.heads; ++g) {
    Var q = col_block(t, q_all, static_cast<Index>(g) * dh, dh);
    Var k = col_block(t, keys, static_cast<Index>(g) * dh, dh);
    Var v = col_block(t, values, static_cast<Index>(g) * dh, dh);
    auto [qn, kn] = qk_rmsnorm(t, q, k, w.eps);
    Var scores = scale(t, matmul_nt(t, qn, kn), 1.0 / std::sqrt(static_cast<double>(dh)));
    Var probs = softmax_banded(t, scores, lo, hi);
    head_ctx.push_back(matmul(t, probs, v));
  }
  Var merged = head_ctx[0];
  for (std::size_t g = 1; g < head_ctx.size(); ++g) merged = hcat(t, merged, head_ctx[g]);
  Var projected = matmul(t, merged, w.w_o);
  if (t.value(projected).cols() != H.cols()) {
    throw ShapeError("cross_attention: W_O output width vs token width");
  }
  return add(t, projected, h);
}

}  // namespace

Var irregular_cross_attention(Tape& t, Var h, Var z_smooth, const SegmentMap& map,
                              const CrossAttnWeights& w, CausalityMode mode) {
  const Matrix& H = t.value(h);
  const Matrix& Z = t.value(z_smooth);
  if (H.rows() != map.tokens() || Z.rows() != map.concepts) {
    throw ShapeError("irregular_cross_attention: map (" + std::to_string(map.tokens()) + " tokens, " +
                     std::to_string(map.concepts) + " concepts) vs H " + shape_str(H) + ", Z " +
                     shape_str(Z));
  }
  std::vector<int> lo, hi;
  irregular_bounds(map, mode, lo, hi);
  Var keys = matmul(t, z_smooth, w.w_k);
  Var values = matmul(t, z_smooth, w.w_v);
  return cross_attention_core(t, h, keys, values, w, lo, hi);
}

Var replicated_cross_attention(Tape& t, Var h, Var z_smooth, const SegmentMap& map,
                               const CrossAttnWeights& w, CausalityMode mode) {
  const Matrix& H = t.value(h);
  const Matrix& Z = t.value(z_smooth);
  if (H.rows() != map.tokens() || Z.rows() != map.concepts) {
    throw ShapeError("replicated_cross_attention: map vs H " + shape_str(H) + ", Z " +
                     shape_str(Z));
  }
  std::vector<int> lo, hi;
  replicated_bounds(map, mode, lo, hi);
  Var keys = repeat_rows(t, matmul(t, z_smooth, w.w_k), map.lengths);
  Var values = repeat_rows(t, matmul(t, z_smooth, w.w_v), map.lengths);
  return cross_attention_core(t, h, keys, values, w, lo, hi);
}

Var decode_logits(Tape& t, Var h_final, Var w_unemb, double s_token) {
  return scale(t, matmul_nt(t, h_final, w_unemb), 1.0 / s_token);
}

}  // namespace dlcm
