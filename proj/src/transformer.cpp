#include "dlcm/transformer.hpp"

#include <atomic>
#include <cmath>

namespace dlcm {

namespace {
std::atomic<long long> g_attn_ops{0};
}

void attn_ops_reset() { g_attn_ops.store(0); }
long long attn_ops_total() { return g_attn_ops.load(); }

void StackConfig::validate() const {
  if (width <= 0) throw ConfigError("stack: width must be positive");
  if (layers < 0) throw ConfigError("stack: negative layer count");
  if (heads <= 0 || width % heads != 0) throw ConfigError("stack: width must divide by heads");
  if (kv_heads <= 0 || heads % kv_heads != 0) {
    throw ConfigError("stack: heads must divide by kv_heads");
  }
  if (head_dim() % 2 != 0) throw ConfigError("stack: head_dim must be even for rotary embeddings");
}

int StackConfig::resolved_mlp_dim() const {
  if (mlp_dim > 0) return mlp_dim;
  const int raw = (width * 8 + 2) / 3;
  return (raw + 7) / 8 * 8;
}

SeqContext make_seq_context(const std::vector<int>& doc_offsets, int length) {
  SeqContext ctx;
  ctx.positions.resize(static_cast<std::size_t>(length));
  ctx.lo.resize(static_cast<std::size_t>(length));
  int start = 0;
  std::size_t next = 0;
  for (int t = 0; t < length; ++t) {
    if (next < doc_offsets.size() && doc_offsets[next] == t) {
      start = t;
      ++next;
    }
    ctx.lo[static_cast<std::size_t>(t)] = start;
    ctx.positions[static_cast<std::size_t>(t)] = t - start;
  }
  return ctx;
}

std::pair<Var, Var> qk_rmsnorm(Tape& t, Var q, Var k, double eps) {
  return {rmsnorm_rows(t, q, eps), rmsnorm_rows(t, k, eps)};
}

TransformerStack::TransformerStack(ParamStore& store, std::string prefix, StackConfig cfg,
                                   ParamKind kind)
    : store_(&store), cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.width;
  const int dh = cfg_.head_dim();
  const int m = cfg_.resolved_mlp_dim();
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string lp = prefix + ".l" + std::to_string(l) + ".";
    LayerParams layer{};
    layer.attn_gain = store.add(lp + "attn.norm_gain", 1, d, ParamKind::GainOrBias, false);
    layer.wq = store.add(lp + "attn.wq", d, cfg_.heads * dh, kind, true);
    layer.wk = store.add(lp + "attn.wk", d, cfg_.kv_heads * dh, kind, true);
    layer.wv = store.add(lp + "attn.wv", d, cfg_.kv_heads * dh, kind, true);
    layer.wo = store.add(lp + "attn.wo", cfg_.heads * dh, d, kind, true);
    layer.mlp_gain = store.add(lp + "mlp.norm_gain", 1, d, ParamKind::GainOrBias, false);
    layer.w_gate = store.add(lp + "mlp.w_gate", d, m, kind, true);
    layer.w_up = store.add(lp + "mlp.w_up", d, m, kind, true);
    layer.w_down = store.add(lp + "mlp.w_down", m, d, kind, true);
    layers_.push_back(layer);
  }
}

Var TransformerStack::forward(Tape& t, ParamBinding& pb, Var x, const SeqContext& ctx,
                              std::vector<double>* layer_rms) const {
  const Matrix& X = t.value(x);
  if (X.cols() != cfg_.width) {
    throw ShapeError("stack_forward: input width " + std::to_string(X.cols()) + " vs config " +
                     std::to_string(cfg_.width));
  }
  const int L = static_cast<int>(X.rows());
  if (static_cast<int>(ctx.positions.size()) != L) {
    throw ShapeError("stack_forward: context length vs input rows");
  }

  const int dh = cfg_.head_dim();
  const int group = cfg_.heads / cfg_.kv_heads;
  std::vector<int> hi(static_cast<std::size_t>(L));
  for (int i = 0; i < L; ++i) hi[static_cast<std::size_t>(i)] = i;

  long long ops = 0;
  for (int i = 0; i < L; ++i) {
    ops += (i - ctx.lo[static_cast<std::size_t>(i)] + 1);
  }
  g_attn_ops.fetch_add(2LL * ops * dh * cfg_.heads * cfg_.layers);

  auto param = [&pb](int idx) { return pb[idx]; };

  for (const LayerParams& layer : layers_) {
    // attention block
    {
      Var h = rowwise_mul(t, rmsnorm_rows(t, x, cfg_.eps), param(layer.attn_gain));
      Var q_all = rope_rows(t, matmul(t, h, param(layer.wq)), ctx.positions, dh, cfg_.rope_base);
      Var k_all = rope_rows(t, matmul(t, h, param(layer.wk)), ctx.positions, dh, cfg_.rope_base);
      Var v_all = matmul(t, h, param(layer.wv));

      std::vector<Var> head_ctx;
      head_ctx.reserve(static_cast<std::size_t>(cfg_.heads));
      for (int g = 0; g < cfg_.heads; ++g) {
        Var q = col_block(t, q_all, static_cast<Index>(g) * dh, dh);
        const int kv = g / group;
        Var k = col_block(t, k_all, static_cast<Index>(kv) * dh, dh);
        Var v = col_block(t, v_all, static_cast<Index>(kv) * dh, dh);
        auto [qn, kn] = qk_rmsnorm(t, q, k, cfg_.eps);
        Var scores = scale(t, matmul_nt(t, qn, kn), 1.0 / std::sqrt(static_cast<double>(dh)));
        Var probs = softmax_banded(t, scores, ctx.lo, hi);
        head_ctx.push_back(matmul(t, probs, v));
      }
      Var merged = head_ctx[0];
      for (std::size_t g = 1; g < head_ctx.size(); ++g) merged = hcat(t, merged, head_ctx[g]);
      x = add(t, x, matmul(t, merged, param(layer.wo)));
    }
    // MLP block
    {
      Var h = rowwise_mul(t, rmsnorm_rows(t, x, cfg_.eps), param(layer.mlp_gain));
      Var gate = silu(t, matmul(t, h, param(layer.w_gate)));
      Var up = matmul(t, h, param(layer.w_up));
      x = add(t, x, matmul(t, mul(t, gate, up), param(layer.w_down)));
    }
    if (layer_rms != nullptr) {
      layer_rms->push_back(std::sqrt(t.value(x).array().square().mean()));
    }
  }
  return x;
}

}  // namespace dlcm
