#pragma once

#include "dlcm/common.hpp"
#include "dlcm/params.hpp"

#include <string>
#include <vector>

namespace dlcm {

struct MuPGroup {
  std::string group;      // "token_hidden" | "concept_hidden" | "others"
  std::string shape_key;  // width class the multiplier is keyed by
  double width_multiplier = 1.0;
  double init_std = 0.0;
  double lr = 0.0;
  double adam_eps = 0.0;
};

/// Width-decoupled parametrization: hidden init std sigma_base * s^(-1/2),
/// hidden lr eta_base * s^(-1), optimizer eps eps_base * s^(-1), with
/// s = s_token for token-width components and s = s_concept for the backbone;
/// embeddings and bias-like parameters keep base values. Forward logits are
/// scaled by 1/s_token.
struct MuPPlan {
  double s_token = 1.0;
  double s_concept = 1.0;
  double output_scale = 1.0;  // 1 / s_token
  double sigma_base = 0.02;
  MuPGroup token_hidden;
  MuPGroup concept_hidden;
  MuPGroup others;
  std::vector<std::string> warnings;

  const MuPGroup& group_for(ParamKind kind) const;
  std::string to_json() const;
};

MuPPlan make_mup_plan(int d_base, int d_token, int d_concept, double sigma_base, double eta_token,
                      double eta_concept, double eta_others, double adam_eps_base = 1e-8);

/// Initializes every parameter in the store per the plan: hidden matrices and
/// embeddings from a truncated normal (3 sigma), norm gains to 1, other
/// bias-like vectors to 0.
void apply_mup_init(ParamStore& store, const MuPPlan& plan, std::uint64_t seed);

struct CoordinateCheckRow {
  int width = 0;
  double init_logit_rms = 0.0;
  double stepped_logit_rms = 0.0;
  std::vector<double> init_layer_rms;     // residual stream after each block
  std::vector<double> stepped_layer_rms;
};

struct CoordinateCheckReport {
  bool output_scaling = true;
  std::vector<CoordinateCheckRow> rows;

  /// max over widths of RMS(width)/RMS(smallest width) at init.
  double logit_growth_ratio() const;
  /// max over layers of (max/min over widths) of stepped activation RMS.
  double stepped_activation_ratio() const;
  std::string to_json() const;
};

/// Builds small models across widths (d_concept = 2*d_token) with shared
/// d_base, measures logit/activation RMS at init and after a few optimizer
/// steps under the plan's learning rates.
CoordinateCheckReport coordinate_check(const std::vector<int>& widths, std::uint64_t seed,
                                       int d_base, bool output_scaling, int steps = 10);

}  // namespace dlcm
