#pragma once

#include "dlcm/autograd.hpp"
#include "dlcm/batching.hpp"
#include "dlcm/cross_attention.hpp"
#include "dlcm/mup.hpp"
#include "dlcm/params.hpp"
#include "dlcm/segmenter.hpp"
#include "dlcm/smoothing.hpp"
#include "dlcm/transformer.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dlcm {

struct ModelConfig {
  int vocab = 257;
  int d_token = 64;
  int d_concept = 128;
  int enc_layers = 2;
  int backbone_layers = 2;
  int dec_layers = 2;
  int heads_token = 4;
  int kv_heads_token = 4;
  int heads_concept = 4;
  int kv_heads_concept = 4;
  int cross_heads = 4;
  int mlp_dim_token = 0;    // 0 -> 8/3*d rounded
  int mlp_dim_concept = 0;
  int mlp_dim_cross = 0;    // 0 -> 4*d_token
  double rope_base = 10000.0;
  double eps = 1e-6;

  SegmenterConfig seg;
  CausalityMode causality = CausalityMode::PaperFaithful;

  // width-scaling plan inputs
  int d_base = 256;
  double sigma_base = 0.02;
  double eta_token = 3e-3;
  double eta_concept = 3e-3;
  double eta_others = 3e-3;
  double adam_eps_base = 1e-8;
  bool output_scaling = true;

  void validate() const;
  int resolved_mlp_cross() const { return mlp_dim_cross > 0 ? mlp_dim_cross : 4 * d_token; }
  std::string to_json() const;
  static ModelConfig from_json(const std::string& json_text);
  std::string config_hash() const;
};

/// Everything one window forward produces. Owns the tape; the Vars reference
/// it. CE/statistics exclude padded positions. Heap-held tape/binding keep
/// addresses stable across moves of the result.
struct ForwardResult {
  std::unique_ptr<Tape> tape;
  std::unique_ptr<ParamBinding> binding;
  Var logits;       // L x vocab
  Var ce_rows;      // L x 1 (0 at ignored rows)
  Var ce_sum;       // 1 x 1, sum over counted rows
  Var sum_p;        // 1 x 1, boundary-prob sum over counted rows
  long ce_count = 0;     // rows entering CE
  long stat_count = 0;   // rows entering boundary stats (non-pad)
  BoundaryScores boundary;
  SegmentMap map;
  GlobalStats stats;     // this window's shard statistics
  std::vector<int> targets;
  std::vector<double> layer_rms;  // residual-stream RMS after each block

  ForwardResult(const ParamStore& store, bool needs_grad)
      : tape(std::make_unique<Tape>()),
        binding(std::make_unique<ParamBinding>(*tape, store, needs_grad)) {}
};

/// Hierarchical concept model: encoder over tokens, learned segmentation and
/// pooling, deep causal reasoning over pooled concepts, smoothing, and a
/// cross-attention token decoder with residual reconstruction.
class DlcmModel {
 public:
  explicit DlcmModel(const ModelConfig& cfg, std::uint64_t init_seed);

  /// Runs one packed window. In Train phase boundaries are sampled with
  /// `rng`; Infer thresholds. `frozen_b` overrides sampling entirely (used by
  /// gradient checks). `needs_grad=false` skips tape bookkeeping for eval.
  ForwardResult forward(const TokenBatch& batch, Phase phase, Rng* rng,
                        const std::vector<int>* frozen_b = nullptr, bool needs_grad = true) const;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const MuPPlan& plan() const { return plan_; }
  double token_scale() const { return cfg_.output_scaling ? plan_.s_token : 1.0; }

  long non_embedding_params() const;

 private:
  ModelConfig cfg_;
  ParamStore store_;
  MuPPlan plan_;
  std::unique_ptr<TransformerStack> encoder_;
  std::unique_ptr<TransformerStack> backbone_;
  std::unique_ptr<TransformerStack> decoder_;
  int embed_ = -1, unembed_ = -1, final_gain_ = -1;
  int w_q_ = -1, w_k_ = -1;                      // rule-based boundary projections
  int mlp_w1_ = -1, mlp_b1_ = -1, mlp_w2_ = -1, mlp_b2_ = -1;  // learned arm
  int w_up_ = -1, smooth_gate_ = -1;
  int cx_wq_ = -1, cx_wk_ = -1, cx_wv_ = -1, cx_wo_ = -1;
  int cx_mlp_gain_ = -1, cx_w_gate_ = -1, cx_w_up_ = -1, cx_w_down_ = -1;
};

/// Token-uniform causal LM used as the profiling baseline.
class BaselineModel {
 public:
  BaselineModel(int vocab, int d_token, int layers, int heads, const ModelConfig& like,
                std::uint64_t init_seed);

  struct Result {
    std::unique_ptr<Tape> tape;
    std::unique_ptr<ParamBinding> binding;
    Var logits;
    Var ce_rows;
    Var ce_sum;
    long ce_count = 0;
    Result(const ParamStore& store, bool needs_grad)
        : tape(std::make_unique<Tape>()),
          binding(std::make_unique<ParamBinding>(*tape, store, needs_grad)) {}
  };

  Result forward(const TokenBatch& batch, bool needs_grad = true) const;

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const MuPPlan& plan() const { return plan_; }
  long non_embedding_params() const;

 private:
  int vocab_;
  double s_token_;
  bool output_scaling_;
  ParamStore store_;
  MuPPlan plan_;
  std::unique_ptr<TransformerStack> stack_;
  int embed_ = -1, unembed_ = -1, final_gain_ = -1;
};

}  // namespace dlcm
