#pragma once

#include "dlcm/batching.hpp"
#include "dlcm/model.hpp"
#include "dlcm/mup.hpp"
#include "dlcm/params.hpp"
#include "dlcm/segmenter.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dlcm {

/// Decoupled-weight-decay adaptive moment optimizer; learning rate and eps
/// come from the parameter's plan group, decay applies to matrices only.
class AdamW {
 public:
  AdamW(ParamStore& store, const MuPPlan& plan, double beta1 = 0.9, double beta2 = 0.95,
        double weight_decay = 0.1);

  /// grads[i] pairs with store param i (empty matrices are skipped).
  void step(const std::vector<Matrix>& grads, double lr_mult);

  long step_count() const { return step_count_; }
  void set_step_count(long t) { step_count_ = t; }

 private:
  ParamStore* store_;
  const MuPPlan* plan_;
  double beta1_, beta2_, weight_decay_;
  long step_count_ = 0;
};

/// Warmup -> constant 1.0 -> linear decay to 0.1 over the final fraction of
/// steps; step 0 yields 0, the last step exactly 0.1.
double wsd_schedule(long step, long total_steps, long warmup_steps, double decay_fraction);

struct LossParts {
  double total = 0.0;
  double ce = 0.0;
  double aux = 0.0;
};

/// L = L_CE + lambda * L_aux, parts reported separately. Throws NumericError
/// when every target is ignored.
LossParts total_loss(const Matrix& logits, const std::vector<int>& targets,
                     const GlobalStats& stats, double r, double lambda);

struct TrainConfig {
  ModelConfig model;
  int window = 256;       // packed window length L
  int micro_batches = 4;  // K per optimizer step
  long total_tokens = 0;
  long warmup_steps = 50;
  double decay_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  std::uint64_t seed = 1;
  bool global_parser = true;  // false: per-micro-batch ("Normal") aux loss
  double divergence_factor = 10.0;
  int divergence_patience = 50;
  long max_steps = 0;           // 0 = run the full schedule; >0 stops early
  std::string checkpoint_dir;   // saved at end (and last-good on divergence)
  std::string resume_from;      // resume checkpoint dir
  std::string log_jsonl;        // trajectory sink, optional

  void validate() const;
};

struct TrajectoryRow {
  long step = 0;
  long tokens = 0;
  double loss_ce = 0.0;
  double loss_aux = 0.0;
  double g = 0.0;
  double f = 0.0;
  double realized_r = 0.0;
  double lr = 0.0;
  double wallclock_s = 0.0;

  std::string to_json() const;
};

struct TrainResult {
  std::vector<TrajectoryRow> rows;
  bool diverged = false;
  double final_ce = 0.0;          // mean over the final 5% of steps
  double final_realized_r = 0.0;  // 1 / (mean F over the final 5% of steps)
};

TrainResult train(const TrainConfig& cfg, DlcmModel& model, const std::vector<Document>& corpus);

/// CE-only loop for the token-uniform baseline (profiling comparisons).
TrainResult train_baseline(const TrainConfig& cfg, BaselineModel& model,
                           const std::vector<Document>& corpus);

/// Residual-stream RMS after each transformer block plus the decoder output,
/// measured on one window (no gradients). Used by the coordinate check.
std::vector<double> forward_layer_rms(const DlcmModel& model, const TokenBatch& batch);

}  // namespace dlcm
