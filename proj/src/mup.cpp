#include "dlcm/mup.hpp"

#include "dlcm/batching.hpp"
#include "dlcm/corpus_synth.hpp"
#include "dlcm/model.hpp"
#include "dlcm/training.hpp"

#include <json.hpp>

#include <cmath>

namespace dlcm {

const MuPGroup& MuPPlan::group_for(ParamKind kind) const {
  switch (kind) {
    case ParamKind::HiddenToken:
      return token_hidden;
    case ParamKind::HiddenConcept:
      return concept_hidden;
    default:
      return others;
  }
}

std::string MuPPlan::to_json() const {
  nlohmann::json j;
  j["s_token"] = s_token;
  j["s_concept"] = s_concept;
  j["output_scale"] = output_scale;
  j["groups"] = nlohmann::json::array();
  for (const MuPGroup* g : {&token_hidden, &concept_hidden, &others}) {
    j["groups"].push_back({{"group", g->group},
                           {"shape_key", g->shape_key},
                           {"width_multiplier", g->width_multiplier},
                           {"init_std", g->init_std},
                           {"lr", g->lr},
                           {"adam_eps", g->adam_eps}});
  }
  if (!warnings.empty()) j["warnings"] = warnings;
  return j.dump(2);
}

MuPPlan make_mup_plan(int d_base, int d_token, int d_concept, double sigma_base, double eta_token,
                      double eta_concept, double eta_others, double adam_eps_base) {
  if (d_base <= 0 || d_token <= 0 || d_concept <= 0) {
    throw ConfigError("mup plan: dimensions must be positive");
  }
  MuPPlan plan;
  plan.sigma_base = sigma_base;
  plan.s_token = static_cast<double>(d_token) / static_cast<double>(d_base);
  plan.s_concept = static_cast<double>(d_concept) / static_cast<double>(d_base);
  plan.output_scale = 1.0 / plan.s_token;
  if (plan.s_token < 1.0) plan.warnings.push_back("s_token < 1: width below base width");
  if (plan.s_concept < 1.0) plan.warnings.push_back("s_concept < 1: width below base width");

  plan.token_hidden = {"token_hidden", "d_token", plan.s_token,
                       sigma_base / std::sqrt(plan.s_token), eta_token / plan.s_token,
                       adam_eps_base / plan.s_token};
  plan.concept_hidden = {"concept_hidden", "d_concept", plan.s_concept,
                         sigma_base / std::sqrt(plan.s_concept), eta_concept / plan.s_concept,
                         adam_eps_base / plan.s_concept};
  plan.others = {"others", "none", 1.0, sigma_base, eta_others, adam_eps_base};
  return plan;
}

void apply_mup_init(ParamStore& store, const MuPPlan& plan, std::uint64_t seed) {
  for (int i = 0; i < store.size(); ++i) {
    ParamEntry& e = store.at(i);
    Rng rng(Rng::mix(seed, Rng::mix(0x696e6974ULL, static_cast<std::uint64_t>(i))));
    switch (e.kind) {
      case ParamKind::HiddenToken:
      case ParamKind::HiddenConcept: {
        const double std_dev = plan.group_for(e.kind).init_std;
        for (Index r = 0; r < e.value.rows(); ++r) {
          for (Index c = 0; c < e.value.cols(); ++c) {
            e.value(r, c) = rng.next_trunc_normal(std_dev);
          }
        }
        break;
      }
      case ParamKind::Embedding: {
        for (Index r = 0; r < e.value.rows(); ++r) {
          for (Index c = 0; c < e.value.cols(); ++c) {
            e.value(r, c) = rng.next_trunc_normal(plan.sigma_base);
          }
        }
        break;
      }
      case ParamKind::GainOrBias: {
        const bool is_gain = e.name.find("norm_gain") != std::string::npos;
        e.value.setConstant(is_gain ? 1.0 : 0.0);
        break;
      }
    }
  }
}

double CoordinateCheckReport::logit_growth_ratio() const {
  if (rows.empty()) return 0.0;
  const double base = rows.front().init_logit_rms;
  double worst = 0.0;
  for (const CoordinateCheckRow& r : rows) {
    worst = std::max(worst, r.init_logit_rms / base);
  }
  return worst;
}

double CoordinateCheckReport::stepped_activation_ratio() const {
  if (rows.empty()) return 0.0;
  const std::size_t layers = rows.front().stepped_layer_rms.size();
  double worst = 0.0;
  for (std::size_t l = 0; l < layers; ++l) {
    double lo = std::numeric_limits<double>::max();
    double hi = 0.0;
    for (const CoordinateCheckRow& r : rows) {
      lo = std::min(lo, r.stepped_layer_rms[l]);
      hi = std::max(hi, r.stepped_layer_rms[l]);
    }
    if (lo > 0.0) worst = std::max(worst, hi / lo);
  }
  return worst;
}

std::string CoordinateCheckReport::to_json() const {
  nlohmann::json j;
  j["output_scaling"] = output_scaling;
  j["logit_growth_ratio"] = logit_growth_ratio();
  j["stepped_activation_ratio"] = stepped_activation_ratio();
  j["rows"] = nlohmann::json::array();
  for (const CoordinateCheckRow& r : rows) {
    j["rows"].push_back({{"width", r.width},
                         {"init_logit_rms", r.init_logit_rms},
                         {"stepped_logit_rms", r.stepped_logit_rms},
                         {"init_layer_rms", r.init_layer_rms},
                         {"stepped_layer_rms", r.stepped_layer_rms}});
  }
  return j.dump(2);
}

namespace {

double matrix_rms(const Matrix& m) { return std::sqrt(m.array().square().mean()); }

}  // namespace

CoordinateCheckReport coordinate_check(const std::vector<int>& widths, std::uint64_t seed,
                                       int d_base, bool output_scaling, int steps) {
  if (widths.empty()) throw ConfigError("coordinate_check: no widths");
  CoordinateCheckReport report;
  report.output_scaling = output_scaling;

  // one small shared batch of synthetic text
  Vocab vocab;
  const auto texts = synth_template_corpus(Rng::mix(seed, 0xc0de), 4096, 512);
  const auto docs = tokenize_corpus(vocab, texts);
  const auto batches = pack_batches(docs, 64, seed);

  for (int w : widths) {
    ModelConfig cfg;
    cfg.d_token = w;
    cfg.d_concept = 2 * w;
    cfg.d_base = d_base;
    cfg.output_scaling = output_scaling;
    cfg.enc_layers = 2;
    cfg.backbone_layers = 2;
    cfg.dec_layers = 2;
    cfg.heads_token = 4;
    cfg.kv_heads_token = 4;
    cfg.heads_concept = 4;
    cfg.kv_heads_concept = 4;
    cfg.cross_heads = 4;
    cfg.seg.target_r = 4.0;
    DlcmModel model(cfg, Rng::mix(seed, static_cast<std::uint64_t>(w)));

    CoordinateCheckRow row;
    row.width = w;

    auto measure = [&](double& logit_rms, std::vector<double>& layer_rms) {
      Rng rng(Rng::mix(seed, 0x6d656173ULL));
      ForwardResult fr = model.forward(batches[0], Phase::Train, &rng, nullptr, false);
      logit_rms = matrix_rms(fr.tape->value(fr.logits));
      layer_rms = forward_layer_rms(model, batches[0]);
    };

    measure(row.init_logit_rms, row.init_layer_rms);

    AdamW opt(model.params(), model.plan());
    Rng rng(Rng::mix(seed, 0x73746570ULL));
    for (int s = 0; s < steps; ++s) {
      ForwardResult fr = model.forward(batches[static_cast<std::size_t>(s) % batches.size()],
                                       Phase::Train, &rng);
      Var root = scale(*fr.tape, fr.ce_sum, 1.0 / static_cast<double>(std::max<long>(1, fr.ce_count)));
      fr.tape->backward(root);
      std::vector<Matrix> grads;
      fr.binding->accumulate_grads(grads);
      opt.step(grads, 1.0);
    }

    measure(row.stepped_logit_rms, row.stepped_layer_rms);
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace dlcm
