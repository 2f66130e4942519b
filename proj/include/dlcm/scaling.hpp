#pragma once

#include "dlcm/common.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dlcm {

enum class TrainPhase { Stable, Decay };

struct ScalingPoint {
  double n = 0.0;      // total (non-embedding) parameters
  double d = 0.0;      // tokens seen
  double r = 1.0;      // compression ratio
  double p = 0.0;      // concept-parameter fraction in (0,1)
  double loss = 0.0;
  TrainPhase phase = TrainPhase::Stable;
  double weight = 1.0;
  std::string config_id;  // groups points sharing a per-config offset
};

/// L(N,D,R,P) = E0 + A_tok/(N(1-P)+t_tok)^d1 + A_con*R^gamma/(NP+t_con)^d2
///            + A_dat/(D+t_dat)^alpha_data + offset(config).
/// Exponents and amplitudes are shared globally; only the additive offsets
/// vary per configuration (mean-zero gauge).
struct ScalingFit {
  double e0 = 0.0;
  double a_token = 0.0, a_concept = 0.0, a_data = 0.0;
  double t_token = 0.0, t_concept = 0.0, t_data = 0.0;
  double delta1 = 0.0, delta2 = 0.0;
  double gamma = 0.0;
  double alpha_data = 0.0;
  std::map<std::string, double> config_offsets;
  double r_squared = 0.0;       // in log-loss space
  double objective = 0.0;
  std::vector<double> residuals;

  double predict(double n, double d, double r, double p,
                 const std::string& config_id = "") const;
  std::string to_json() const;
  static ScalingFit from_json(const std::string& json_text);
};

struct FitOptions {
  int max_iters = 800;
  int multi_starts = 8;
  std::uint64_t seed = 17;
  bool huber = false;        // robust loss for outliers
  double huber_delta = 0.05;
  // Ridge on per-config offsets. Each config is one (N,R,P) cell, so
  // unpenalized offsets could absorb the whole N/R/P structure and leave the
  // exponents unidentified; shrinking them toward zero restores identifiability.
  double offset_ridge = 1.0;
};

/// Weighted least squares on ln(loss); multi-start bounded quasi-Newton over
/// log-transformed positive parameters. Throws ConfigError when an axis has
/// too little variation to identify its parameters.
ScalingFit fit_full_law(const std::vector<ScalingPoint>& points, const FitOptions& opts = {});

/// Log-spaced tail-weighted subsampling of a loss trajectory: weights
/// proportional to (D/D_max)^w, the last point always kept at max weight.
std::vector<ScalingPoint> tail_weighted_sampling(const std::vector<ScalingPoint>& trajectory,
                                                 int max_points = 48, double w = 2.0);

struct DecayRun {
  double l_stable = 0.0;  // loss at decay start
  double r = 1.0;
  double n = 0.0;
  double delta_decay = 0.0;  // fractional loss drop in the decay window
};

/// ln(delta) = ln k + a ln L_stable + b ln R + c ln N (ordinary least squares).
struct DecayFit {
  double k = 0.0, a = 0.0, b = 0.0, c = 0.0;
  double r_squared = 0.0;
  int used_runs = 0;
  int dropped_runs = 0;

  double predict(double l_stable, double r, double n) const;
  std::string to_json() const;
};

DecayFit fit_decay_law(const std::vector<DecayRun>& runs);

/// Architecture summary for FLOPs accounting.
struct ArchConfig {
  double n_token_side = 0.0;  // non-embedding params in encoder+decoder side
  double n_backbone = 0.0;    // non-embedding params in the concept backbone
  int token_layers = 0;
  int backbone_layers = 0;
  int d_token = 0;
  int d_concept = 0;
  long window = 0;  // 0: weights-only estimate (attention terms omitted)

  double total_params() const { return n_token_side + n_backbone; }
  double concept_fraction() const {
    const double t = total_params();
    return t > 0 ? n_backbone / t : 0.0;
  }
};

struct FlopsEstimate {
  double token_weight = 0.0;
  double concept_weight = 0.0;
  double token_attn = 0.0;
  double concept_attn = 0.0;
  double total = 0.0;
  double per_token = 0.0;
};

/// Training FLOPs ~ 6*D*N_token + 6*(D/R)*N_backbone, plus per-layer
/// attention terms 12*L*d_token and 12*(L/R)*d_concept per token when the
/// config carries a window length.
FlopsEstimate flops_estimate(const ArchConfig& arch, double d_tokens, double r);

struct ConfigCell {
  double p = 0.0;
  double r = 1.0;
  double d_at_equal_flops = 0.0;
  double predicted_loss = 0.0;
};

struct OptimalConfigResult {
  std::vector<ConfigCell> table;  // sorted by predicted loss ascending
  ConfigCell best;
  std::string annotation;
};

/// Predicted loss per (P,R) grid cell at equal estimated FLOPs (the data
/// budget is adjusted per cell to hold FLOPs fixed).
OptimalConfigResult optimal_config(double n_budget, double d_tokens,
                                   const std::vector<double>& p_grid,
                                   const std::vector<double>& r_grid, const ScalingFit& fit,
                                   const ArchConfig& arch_template);

/// Ratio of baseline FLOPs to DLCM FLOPs at matched predicted loss (root
/// finding on the baseline's D). Throws NumericError when no crossing exists
/// in the bracket.
double compute_multiplier(const ScalingFit& fit, const ArchConfig& dlcm_arch, double dlcm_p,
                          double dlcm_r, double dlcm_d, const ArchConfig& baseline_arch);

/// CSV/JSONL ingestion for ScalingPoints (columns:
/// run_id,N,P,R,D,loss,phase[,weight]).
std::vector<ScalingPoint> load_points_csv(const std::string& path);
std::vector<ScalingPoint> load_points_jsonl(const std::string& path, double n_params, double r,
                                            double p, const std::string& run_id);

}  // namespace dlcm
