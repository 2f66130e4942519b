#pragma once

#include "dlcm/autograd.hpp"
#include "dlcm/params.hpp"

#include <string>
#include <utility>
#include <vector>

namespace dlcm {

struct StackConfig {
  int width = 0;
  int layers = 0;
  int heads = 1;
  int kv_heads = 1;
  int mlp_dim = 0;  // 0 -> 8/3 * width rounded up to a multiple of 8
  double rope_base = 10000.0;
  double eps = 1e-6;

  void validate() const;
  int head_dim() const { return width / heads; }
  int resolved_mlp_dim() const;
};

/// Per-row attention context inside a packed window: positions restart at
/// each document start and attention windows are [doc_start(t), t].
struct SeqContext {
  std::vector<int> positions;
  std::vector<int> lo;  // first attendable row
};

SeqContext make_seq_context(const std::vector<int>& doc_offsets, int length);

/// RMS-normalizes query and key rows to unit RMS (eps floors the denominator);
/// applied before every attention score, cross-attention included.
std::pair<Var, Var> qk_rmsnorm(Tape& t, Var q, Var k, double eps);

/// MAC count of attention score/value products since the last reset; used by
/// cost-scaling tests.
void attn_ops_reset();
long long attn_ops_total();

/// Pre-norm causal transformer blocks (RMSNorm, rotary embeddings,
/// Swish-gated MLP). Zero layers is the identity.
class TransformerStack {
 public:
  TransformerStack(ParamStore& store, std::string prefix, StackConfig cfg, ParamKind kind);

  Var forward(Tape& t, ParamBinding& pb, Var x, const SeqContext& ctx,
              std::vector<double>* layer_rms = nullptr) const;

  const StackConfig& config() const { return cfg_; }

 private:
  struct LayerParams {
    int attn_gain, wq, wk, wv, wo;
    int mlp_gain, w_gate, w_up, w_down;
  };

  ParamStore* store_;
  StackConfig cfg_;
  std::vector<LayerParams> layers_;
};

}  // namespace dlcm
