#include "dlcm/model.hpp"

#include "dlcm/manifest.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace dlcm {

void ModelConfig::validate() const {
  if (vocab < 2) throw ConfigError("model: vocab must be >= 2");
  if (d_token <= 0 || d_concept <= 0) throw ConfigError("model: widths must be positive");
  if (d_token % heads_token != 0 || d_concept % heads_concept != 0 ||
      d_token % cross_heads != 0) {
    throw ConfigError("model: widths must divide by their head counts");
  }
  seg.validate();
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["vocab"] = vocab;
  j["d_token"] = d_token;
  j["d_concept"] = d_concept;
  j["enc_layers"] = enc_layers;
  j["backbone_layers"] = backbone_layers;
  j["dec_layers"] = dec_layers;
  j["heads_token"] = heads_token;
  j["kv_heads_token"] = kv_heads_token;
  j["heads_concept"] = heads_concept;
  j["kv_heads_concept"] = kv_heads_concept;
  j["cross_heads"] = cross_heads;
  j["mlp_dim_token"] = mlp_dim_token;
  j["mlp_dim_concept"] = mlp_dim_concept;
  j["mlp_dim_cross"] = mlp_dim_cross;
  j["rope_base"] = rope_base;
  j["eps"] = eps;
  j["seg"] = {{"d_scan", seg.d_scan},
              {"temp_sharpen", seg.temp_sharpen},
              {"threshold", seg.threshold},
              {"target_r", seg.target_r},
              {"mode", seg.mode == BoundaryMode::RuleBased ? "rule" : "learned"},
              {"lambda_aux", seg.lambda_aux}};
  j["causality"] = to_string(causality);
  j["d_base"] = d_base;
  j["sigma_base"] = sigma_base;
  j["eta_token"] = eta_token;
  j["eta_concept"] = eta_concept;
  j["eta_others"] = eta_others;
  j["adam_eps_base"] = adam_eps_base;
  j["output_scaling"] = output_scaling;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  ModelConfig c;
  c.vocab = j.value("vocab", c.vocab);
  c.d_token = j.value("d_token", c.d_token);
  c.d_concept = j.value("d_concept", c.d_concept);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.backbone_layers = j.value("backbone_layers", c.backbone_layers);
  c.dec_layers = j.value("dec_layers", c.dec_layers);
  c.heads_token = j.value("heads_token", c.heads_token);
  c.kv_heads_token = j.value("kv_heads_token", c.kv_heads_token);
  c.heads_concept = j.value("heads_concept", c.heads_concept);
  c.kv_heads_concept = j.value("kv_heads_concept", c.kv_heads_concept);
  c.cross_heads = j.value("cross_heads", c.cross_heads);
  c.mlp_dim_token = j.value("mlp_dim_token", c.mlp_dim_token);
  c.mlp_dim_concept = j.value("mlp_dim_concept", c.mlp_dim_concept);
  c.mlp_dim_cross = j.value("mlp_dim_cross", c.mlp_dim_cross);
  c.rope_base = j.value("rope_base", c.rope_base);
  c.eps = j.value("eps", c.eps);
  if (j.contains("seg")) {
    const auto& s = j["seg"];
    c.seg.d_scan = s.value("d_scan", c.seg.d_scan);
    c.seg.temp_sharpen = s.value("temp_sharpen", c.seg.temp_sharpen);
    c.seg.threshold = s.value("threshold", c.seg.threshold);
    c.seg.target_r = s.value("target_r", c.seg.target_r);
    c.seg.mode = s.value("mode", "rule") == std::string("learned") ? BoundaryMode::LearnedMlp
                                                                   : BoundaryMode::RuleBased;
    c.seg.lambda_aux = s.value("lambda_aux", c.seg.lambda_aux);
  }
  c.causality = causality_from_string(j.value("causality", "paper"));
  c.d_base = j.value("d_base", c.d_base);
  c.sigma_base = j.value("sigma_base", c.sigma_base);
  c.eta_token = j.value("eta_token", c.eta_token);
  c.eta_concept = j.value("eta_concept", c.eta_concept);
  c.eta_others = j.value("eta_others", c.eta_others);
  c.adam_eps_base = j.value("adam_eps_base", c.adam_eps_base);
  c.output_scaling = j.value("output_scaling", c.output_scaling);
  return c;
}

std::string ModelConfig::config_hash() const { return sha1_hex(to_json()); }

DlcmModel::DlcmModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  plan_ = make_mup_plan(cfg_.d_base, cfg_.d_token, cfg_.d_concept, cfg_.sigma_base,
                        cfg_.eta_token, cfg_.eta_concept, cfg_.eta_others, cfg_.adam_eps_base);

  embed_ = store_.add("embed.table", cfg_.vocab, cfg_.d_token, ParamKind::Embedding, true);

  StackConfig enc;
  enc.width = cfg_.d_token;
  enc.layers = cfg_.enc_layers;
  enc.heads = cfg_.heads_token;
  enc.kv_heads = cfg_.kv_heads_token;
  enc.mlp_dim = cfg_.mlp_dim_token;
  enc.rope_base = cfg_.rope_base;
  enc.eps = cfg_.eps;
  encoder_ = std::make_unique<TransformerStack>(store_, "encoder", enc, ParamKind::HiddenToken);

  const int d_scan = cfg_.seg.resolved_d_scan(cfg_.d_token);
  if (cfg_.seg.mode == BoundaryMode::RuleBased) {
    w_q_ = store_.add("boundary.w_q", cfg_.d_token, d_scan, ParamKind::HiddenToken, true);
    w_k_ = store_.add("boundary.w_k", cfg_.d_token, d_scan, ParamKind::HiddenToken, true);
  } else {
    mlp_w1_ = store_.add("boundary.mlp.w1", 2 * cfg_.d_token, d_scan, ParamKind::HiddenToken, true);
    mlp_b1_ = store_.add("boundary.mlp.b1", 1, d_scan, ParamKind::GainOrBias, false);
    mlp_w2_ = store_.add("boundary.mlp.w2", d_scan, 1, ParamKind::HiddenToken, true);
    mlp_b2_ = store_.add("boundary.mlp.b2", 1, 1, ParamKind::GainOrBias, false);
  }

  w_up_ = store_.add("pool.w_up", cfg_.d_token, cfg_.d_concept, ParamKind::HiddenToken, true);

  StackConfig bb;
  bb.width = cfg_.d_concept;
  bb.layers = cfg_.backbone_layers;
  bb.heads = cfg_.heads_concept;
  bb.kv_heads = cfg_.kv_heads_concept;
  bb.mlp_dim = cfg_.mlp_dim_concept;
  bb.rope_base = cfg_.rope_base;
  bb.eps = cfg_.eps;
  backbone_ = std::make_unique<TransformerStack>(store_, "backbone", bb, ParamKind::HiddenConcept);

  smooth_gate_ = store_.add("smooth.gate", 1, cfg_.d_concept, ParamKind::GainOrBias, false);

  const int cross_dim = cfg_.cross_heads * (cfg_.d_token / cfg_.cross_heads);
  cx_wq_ = store_.add("cross.w_q", cfg_.d_token, cross_dim, ParamKind::HiddenToken, true);
  cx_wk_ = store_.add("cross.w_k", cfg_.d_concept, cross_dim, ParamKind::HiddenConcept, true);
  cx_wv_ = store_.add("cross.w_v", cfg_.d_concept, cross_dim, ParamKind::HiddenConcept, true);
  cx_wo_ = store_.add("cross.w_o", cross_dim, cfg_.d_token, ParamKind::HiddenToken, true);
  const int m_cross = cfg_.resolved_mlp_cross();
  cx_mlp_gain_ = store_.add("cross.mlp.norm_gain", 1, cfg_.d_token, ParamKind::GainOrBias, false);
  cx_w_gate_ = store_.add("cross.mlp.w_gate", cfg_.d_token, m_cross, ParamKind::HiddenToken, true);
  cx_w_up_ = store_.add("cross.mlp.w_up", cfg_.d_token, m_cross, ParamKind::HiddenToken, true);
  cx_w_down_ = store_.add("cross.mlp.w_down", m_cross, cfg_.d_token, ParamKind::HiddenToken, true);

  StackConfig dec = enc;
  dec.layers = cfg_.dec_layers;
  decoder_ = std::make_unique<TransformerStack>(store_, "decoder", dec, ParamKind::HiddenToken);

  final_gain_ = store_.add("final.norm_gain", 1, cfg_.d_token, ParamKind::GainOrBias, false);
  unembed_ = store_.add("unembed.table", cfg_.vocab, cfg_.d_token, ParamKind::Embedding, true);

  apply_mup_init(store_, plan_, init_seed);
}

ForwardResult DlcmModel::forward(const TokenBatch& batch, Phase phase, Rng* rng,
                                 const std::vector<int>* frozen_b, bool needs_grad) const {
  const int L = batch.length();
  if (L == 0) throw ShapeError("forward: empty batch");

  ForwardResult out(store_, needs_grad);
  Tape& t = *out.tape;
  ParamBinding& bind = *out.binding;

  const SeqContext tok_ctx = make_seq_context(batch.doc_offsets, L);

  Var x = embedding_rows(t, bind[embed_], batch.ids);
  Var h = encoder_->forward(t, bind, x, tok_ctx, &out.layer_rms);

  // boundary probabilities
  if (cfg_.seg.mode == BoundaryMode::RuleBased) {
    out.boundary = boundary_scores(t, h, bind[w_q_], bind[w_k_], batch.doc_offsets);
  } else {
    out.boundary = learned_boundary_scores(t, h, bind[mlp_w1_], bind[mlp_b1_], bind[mlp_w2_],
                                           bind[mlp_b2_], batch.doc_offsets);
  }

  if (frozen_b != nullptr) {
    if (static_cast<int>(frozen_b->size()) != L) {
      throw ShapeError("forward: frozen boundary length vs window");
    }
    out.boundary.b = *frozen_b;
    const Matrix& pv = t.value(out.boundary.p);
    out.boundary.p_sharp.resize(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i) {
      out.boundary.p_sharp[static_cast<std::size_t>(i)] =
          sharpen_prob(pv(i, 0), cfg_.seg.temp_sharpen);
    }
  } else {
    if (phase == Phase::Train && rng == nullptr) {
      throw ConfigError("forward: Train phase requires an rng");
    }
    Rng fallback(0);
    sharpen_and_sample(out.boundary, t, cfg_.seg, phase, rng ? *rng : fallback);
  }

  out.map = build_segment_map(out.boundary.b, batch.doc_offsets);

  Var concepts = pool_concepts(t, h, out.map, bind[w_up_]);

  // learned arm: straight-through gate so CE reaches the predictor through b
  if (cfg_.seg.mode == BoundaryMode::LearnedMlp) {
    std::vector<int> starts;
    starts.reserve(static_cast<std::size_t>(out.map.concepts));
    for (int i = 0; i < L; ++i) {
      if (out.boundary.b[static_cast<std::size_t>(i)] == 1) starts.push_back(i);
    }
    Var p_sel = gather_rows(t, out.boundary.p, starts);
    Var ste = add_scalar(t, sub(t, p_sel, t.constant(t.value(p_sel))), 1.0);
    Var broadcast = matmul(t, ste, t.constant(Matrix::Ones(1, cfg_.d_concept)));
    concepts = mul(t, concepts, broadcast);
  }

  // concept-level document structure
  std::vector<int> concept_offsets;
  for (int k = 0; k < out.map.concepts; ++k) {
    if (out.map.concept_reset[static_cast<std::size_t>(k)]) concept_offsets.push_back(k);
  }
  const SeqContext con_ctx = make_seq_context(concept_offsets, out.map.concepts);

  Var z = backbone_->forward(t, bind, concepts, con_ctx, &out.layer_rms);
  Var z_smooth = smooth_concepts(t, z, bind[smooth_gate_], out.map);

  CrossAttnWeights cw;
  cw.w_q = bind[cx_wq_];
  cw.w_k = bind[cx_wk_];
  cw.w_v = bind[cx_wv_];
  cw.w_o = bind[cx_wo_];
  cw.heads = cfg_.cross_heads;
  cw.eps = cfg_.eps;
  Var fused = irregular_cross_attention(t, h, z_smooth, out.map, cw, cfg_.causality);

  // Swish-gated MLP block after cross-attention
  {
    Var n = rowwise_mul(t, rmsnorm_rows(t, fused, cfg_.eps), bind[cx_mlp_gain_]);
    Var gate = silu(t, matmul(t, n, bind[cx_w_gate_]));
    Var up = matmul(t, n, bind[cx_w_up_]);
    fused = add(t, fused, matmul(t, mul(t, gate, up), bind[cx_w_down_]));
  }

  out.layer_rms.push_back(std::sqrt(t.value(fused).array().square().mean()));
  Var dec = decoder_->forward(t, bind, fused, tok_ctx, &out.layer_rms);
  Var final_h = rowwise_mul(t, rmsnorm_rows(t, dec, cfg_.eps), bind[final_gain_]);
  out.logits = decode_logits(t, final_h, bind[unembed_], token_scale());

  out.targets = batch.targets;
  out.ce_rows = cross_entropy_rows(t, out.logits, batch.targets);
  out.ce_sum = sum_all(t, out.ce_rows);
  out.ce_count = 0;
  for (int y : batch.targets) {
    if (y >= 0) ++out.ce_count;
  }

  // boundary statistics over unpadded tokens
  const int real = batch.real_tokens();
  out.stat_count = real;
  Matrix stat_mask = Matrix::Zero(L, 1);
  stat_mask.topRows(real).setOnes();
  out.sum_p = sum_all(t, mul(t, out.boundary.p, t.constant(std::move(stat_mask))));

  const Matrix& pv = t.value(out.boundary.p);
  for (int i = 0; i < real; ++i) {
    out.stats.add_token(pv(i, 0), out.boundary.b[static_cast<std::size_t>(i)]);
  }
  return out;
}

long DlcmModel::non_embedding_params() const {
  long total = 0;
  for (int i = 0; i < store_.size(); ++i) {
    const ParamEntry& e = store_.at(i);
    if (e.kind == ParamKind::Embedding) continue;
    total += static_cast<long>(e.value.size());
  }
  return total;
}

BaselineModel::BaselineModel(int vocab, int d_token, int layers, int heads,
                             const ModelConfig& like, std::uint64_t init_seed)
    : vocab_(vocab), output_scaling_(like.output_scaling) {
  plan_ = make_mup_plan(like.d_base, d_token, d_token, like.sigma_base, like.eta_token,
                        like.eta_concept, like.eta_others, like.adam_eps_base);
  s_token_ = output_scaling_ ? plan_.s_token : 1.0;

  embed_ = store_.add("embed.table", vocab, d_token, ParamKind::Embedding, true);
  StackConfig sc;
  sc.width = d_token;
  sc.layers = layers;
  sc.heads = heads;
  sc.kv_heads = heads;
  sc.rope_base = like.rope_base;
  sc.eps = like.eps;
  stack_ = std::make_unique<TransformerStack>(store_, "stack", sc, ParamKind::HiddenToken);
  final_gain_ = store_.add("final.norm_gain", 1, d_token, ParamKind::GainOrBias, false);
  unembed_ = store_.add("unembed.table", vocab, d_token, ParamKind::Embedding, true);

  apply_mup_init(store_, plan_, init_seed);
}

BaselineModel::Result BaselineModel::forward(const TokenBatch& batch, bool needs_grad) const {
  Result out(store_, needs_grad);
  Tape& t = *out.tape;

  const SeqContext ctx = make_seq_context(batch.doc_offsets, batch.length());
  Var x = embedding_rows(t, (*out.binding)[embed_], batch.ids);
  Var hh = stack_->forward(t, *out.binding, x, ctx);
  Var final_h =
      rowwise_mul(t, rmsnorm_rows(t, hh, stack_->config().eps), (*out.binding)[final_gain_]);
  out.logits = decode_logits(t, final_h, (*out.binding)[unembed_], s_token_);
  out.ce_rows = cross_entropy_rows(t, out.logits, batch.targets);
  out.ce_sum = sum_all(t, out.ce_rows);
  out.ce_count = 0;
  for (int y : batch.targets) {
    if (y >= 0) ++out.ce_count;
  }
  return out;
}

long BaselineModel::non_embedding_params() const {
  long total = 0;
  for (int i = 0; i < store_.size(); ++i) {
    const ParamEntry& e = store_.at(i);
    if (e.kind == ParamKind::Embedding) continue;
    total += static_cast<long>(e.value.size());
  }
  return total;
}

}  // namespace dlcm
