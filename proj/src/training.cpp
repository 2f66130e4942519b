#include "dlcm/training.hpp"

#include "dlcm/checkpoint.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

namespace dlcm {

AdamW::AdamW(ParamStore& store, const MuPPlan& plan, double beta1, double beta2,
             double weight_decay)
    : store_(&store), plan_(&plan), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay) {}

void AdamW::step(const std::vector<Matrix>& grads, double lr_mult) {
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bias1 = 1.0 - std::pow(beta1_, t);
  const double bias2 = 1.0 - std::pow(beta2_, t);
  for (int i = 0; i < store_->size(); ++i) {
    if (static_cast<std::size_t>(i) >= grads.size() || grads[static_cast<std::size_t>(i)].size() == 0) {
      continue;
    }
    ParamEntry& e = store_->at(i);
    const Matrix& g = grads[static_cast<std::size_t>(i)];
    if (g.rows() != e.value.rows() || g.cols() != e.value.cols()) {
      throw ShapeError("adamw: grad " + shape_str(g) + " vs param " + e.name);
    }
    const MuPGroup& grp = plan_->group_for(e.kind);
    const double lr = grp.lr * lr_mult;
    if (e.adam_m.size() == 0) {
      e.adam_m = Matrix::Zero(e.value.rows(), e.value.cols());
      e.adam_v = Matrix::Zero(e.value.rows(), e.value.cols());
    }
    e.adam_m = beta1_ * e.adam_m + (1.0 - beta1_) * g;
    e.adam_v = beta2_ * e.adam_v.array() + (1.0 - beta2_) * g.array().square();
    const Matrix m_hat = e.adam_m / bias1;
    const Matrix v_hat = e.adam_v / bias2;
    if (e.decay && weight_decay_ > 0.0) {
      e.value *= (1.0 - lr * weight_decay_);
    }
    e.value.array() -= lr * m_hat.array() / (v_hat.array().sqrt() + grp.adam_eps);
  }
}

double wsd_schedule(long step, long total_steps, long warmup_steps, double decay_fraction) {
  if (total_steps <= 0) throw ConfigError("wsd: total_steps must be positive");
  if (step > total_steps) throw ConfigError("wsd: step beyond schedule");
  if (decay_fraction <= 0.0 || decay_fraction > 1.0) {
    throw ConfigError("wsd: decay fraction must be in (0,1]");
  }
  if (warmup_steps > 0 && step < warmup_steps) {
    return static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const double last = static_cast<double>(total_steps - 1);
  const double decay_start = last * (1.0 - decay_fraction);
  if (last <= 0.0 || static_cast<double>(step) < decay_start) return 1.0;
  const double progress = (static_cast<double>(step) - decay_start) / (last - decay_start);
  return 1.0 - 0.9 * progress;
}

LossParts total_loss(const Matrix& logits, const std::vector<int>& targets,
                     const GlobalStats& stats, double r, double lambda) {
  if (static_cast<Index>(targets.size()) != logits.rows()) {
    throw ShapeError("total_loss: targets vs logits " + shape_str(logits));
  }
  long counted = 0;
  double ce_sum = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const int y = targets[static_cast<std::size_t>(i)];
    if (y < 0) continue;
    ++counted;
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    ce_sum += lse - logits(i, y);
  }
  if (counted == 0) throw NumericError("total_loss: all targets ignored");
  LossParts parts;
  parts.ce = ce_sum / static_cast<double>(counted);
  parts.aux = aux_loss(stats.g(), stats.f(), r);
  parts.total = parts.ce + lambda * parts.aux;
  return parts;
}

void TrainConfig::validate() const {
  model.validate();
  if (window < 2) throw ConfigError("train: window must be >= 2");
  if (micro_batches < 1) throw ConfigError("train: micro_batches must be >= 1");
  if (total_tokens <= 0) throw ConfigError("train: total_tokens must be positive");
  if (decay_fraction <= 0.0 || decay_fraction > 1.0) {
    throw ConfigError("train: decay fraction must be in (0,1]");
  }
}

std::string TrajectoryRow::to_json() const {
  nlohmann::json j;
  j["step"] = step;
  j["tokens"] = tokens;
  j["loss_ce"] = loss_ce;
  j["loss_aux"] = loss_aux;
  j["G"] = g;
  j["F"] = f;
  j["realized_R"] = realized_r;
  j["lr"] = lr;
  j["wallclock_s"] = wallclock_s;
  return j.dump();
}

namespace {

struct WindowOutcome {
  ForwardResult fr;
  WindowOutcome(const ParamStore& store) : fr(store, true) {}
};

}  // namespace

TrainResult train(const TrainConfig& cfg, DlcmModel& model, const std::vector<Document>& corpus) {
  cfg.validate();
  const auto batches = pack_batches(corpus, cfg.window, cfg.seed);
  const long tokens_per_step = static_cast<long>(cfg.window) * cfg.micro_batches;
  const long total_steps = std::max<long>(1, cfg.total_tokens / tokens_per_step);
  const double lambda = cfg.model.seg.lambda_aux;
  const double target_r = cfg.model.seg.target_r;

  AdamW opt(model.params(), model.plan(), cfg.beta1, cfg.beta2, cfg.weight_decay);

  long start_step = 0;
  long tokens_seen = 0;
  if (!cfg.resume_from.empty()) {
    const CheckpointMeta meta =
        load_checkpoint(cfg.resume_from, model.params(), &opt, cfg.model.config_hash());
    start_step = meta.step;
    tokens_seen = meta.tokens_seen;
  }

  std::ofstream log;
  if (!cfg.log_jsonl.empty()) {
    log.open(cfg.log_jsonl, start_step > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("train: cannot open log " + cfg.log_jsonl);
  }

  TrainResult result;
  std::vector<double> recent_losses;
  int divergence_streak = 0;
  bool saved_good = false;
  const auto t0 = std::chrono::steady_clock::now();

  const int workers = std::min(worker_count(), cfg.micro_batches);

  const long stop_step =
      cfg.max_steps > 0 ? std::min(total_steps, start_step + cfg.max_steps) : total_steps;
  for (long step = start_step; step < stop_step; ++step) {
    // deterministic window selection: sequential epochs over the pack order
    std::vector<const TokenBatch*> windows;
    windows.reserve(static_cast<std::size_t>(cfg.micro_batches));
    for (int k = 0; k < cfg.micro_batches; ++k) {
      const std::size_t idx =
          static_cast<std::size_t>((step * cfg.micro_batches + k) % static_cast<long>(batches.size()));
      windows.push_back(&batches[idx]);
    }

    // forward all micro-batches (window-parallel, deterministic per window)
    std::vector<std::unique_ptr<ForwardResult>> results(windows.size());
    auto run_window = [&](std::size_t w) {
      Rng rng(Rng::mix(cfg.seed, Rng::mix(static_cast<std::uint64_t>(step), w)));
      results[w] = std::make_unique<ForwardResult>(
          model.forward(*windows[w], Phase::Train, &rng));
    };
    if (workers > 1 && windows.size() > 1) {
      std::vector<std::thread> pool;
      std::atomic<std::size_t> next{0};
      for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
          for (;;) {
            const std::size_t w = next.fetch_add(1);
            if (w >= windows.size()) return;
            run_window(w);
          }
        });
      }
      for (auto& th : pool) th.join();
    } else {
      for (std::size_t w = 0; w < windows.size(); ++w) run_window(w);
    }

    // merge statistics in ascending micro-batch order
    std::vector<GlobalStats> shards;
    shards.reserve(results.size());
    long ce_count = 0;
    double ce_sum_total = 0.0;
    for (const auto& r : results) {
      shards.push_back(r->stats);
      ce_count += r->ce_count;
      ce_sum_total += r->tape->scalar_value(r->ce_sum);
    }
    if (ce_count == 0) throw NumericError("train: all targets ignored in step");
    const GlobalStats merged = accumulate_global_stats(shards);
    const double g_global = merged.g();
    const double f_global = merged.f();

    double aux_value = 0.0;
    if (cfg.global_parser) {
      aux_value = aux_loss(g_global, f_global, target_r);
    } else {
      for (const auto& r : results) {
        aux_value += aux_loss(r->stats.g(), r->stats.f(), target_r);
      }
      aux_value /= static_cast<double>(results.size());
    }
    const double ce_mean = ce_sum_total / static_cast<double>(ce_count);
    const double loss_total = ce_mean + lambda * aux_value;

    // backward with the arm-appropriate aux coefficient, fold ascending
    std::vector<Matrix> grads;
    for (std::size_t w = 0; w < results.size(); ++w) {
      ForwardResult& fr = *results[w];
      Tape& t = *fr.tape;
      Var root = scale(t, fr.ce_sum, 1.0 / static_cast<double>(ce_count));
      if (lambda != 0.0) {
        double coeff;
        if (cfg.global_parser) {
          coeff = lambda * aux_loss_dg(f_global, target_r) /
                  static_cast<double>(merged.token_count);
        } else {
          coeff = lambda * aux_loss_dg(fr.stats.f(), target_r) /
                  (static_cast<double>(results.size()) * static_cast<double>(fr.stats.token_count));
        }
        root = add(t, root, scale(t, fr.sum_p, coeff));
      }
      t.backward(root);
      fr.binding->accumulate_grads(grads);
    }

    if (!std::isfinite(loss_total)) {
      result.diverged = true;
      break;
    }

    const double lr_mult = wsd_schedule(step, total_steps, cfg.warmup_steps, cfg.decay_fraction);
    opt.step(grads, lr_mult);
    tokens_seen += tokens_per_step;

    TrajectoryRow row;
    row.step = step;
    row.tokens = tokens_seen;
    row.loss_ce = ce_mean;
    row.loss_aux = aux_value;
    row.g = g_global;
    row.f = f_global;
    row.realized_r = f_global > 0.0 ? 1.0 / f_global : 0.0;
    row.lr = lr_mult;
    row.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log.is_open()) log << row.to_json() << "\n";
    result.rows.push_back(row);

    // divergence watchdog: sustained blowup vs the running median
    recent_losses.push_back(loss_total);
    if (recent_losses.size() > 101) recent_losses.erase(recent_losses.begin());
    std::vector<double> sorted = recent_losses;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(sorted.size()) / 2,
                     sorted.end());
    const double median = sorted[sorted.size() / 2];
    if (loss_total > cfg.divergence_factor * median && recent_losses.size() > 10) {
      ++divergence_streak;
    } else {
      divergence_streak = 0;
      if (!cfg.checkpoint_dir.empty() && (step + 1) % 200 == 0) {
        CheckpointMeta meta{cfg.model.config_hash(), step + 1, tokens_seen, cfg.seed,
                            "dlcm", cfg.model.to_json()};
        save_checkpoint(cfg.checkpoint_dir, model.params(), meta, &opt, true);
        saved_good = true;
      }
    }
    if (divergence_streak >= cfg.divergence_patience) {
      result.diverged = true;
      break;
    }
  }

  if (!result.rows.empty()) {
    // end-of-run statistics over the final fifth of steps (noise-robust)
    const std::size_t tail = std::max<std::size_t>(1, result.rows.size() / 5);
    double ce = 0.0;
    double f = 0.0;
    for (std::size_t i = result.rows.size() - tail; i < result.rows.size(); ++i) {
      ce += result.rows[i].loss_ce;
      f += result.rows[i].f;
    }
    result.final_ce = ce / static_cast<double>(tail);
    const double f_mean = f / static_cast<double>(tail);
    result.final_realized_r = f_mean > 0.0 ? 1.0 / f_mean : 0.0;
  }

  if (!cfg.checkpoint_dir.empty() && (!result.diverged || !saved_good)) {
    const long done_steps = start_step + static_cast<long>(result.rows.size());
    CheckpointMeta meta{cfg.model.config_hash(), done_steps, tokens_seen, cfg.seed,
                        "dlcm", cfg.model.to_json()};
    save_checkpoint(cfg.checkpoint_dir, model.params(), meta, &opt, true);
  }
  return result;
}

TrainResult train_baseline(const TrainConfig& cfg, BaselineModel& model,
                           const std::vector<Document>& corpus) {
  cfg.validate();
  const auto batches = pack_batches(corpus, cfg.window, cfg.seed);
  const long tokens_per_step = static_cast<long>(cfg.window) * cfg.micro_batches;
  const long total_steps = std::max<long>(1, cfg.total_tokens / tokens_per_step);
  AdamW opt(model.params(), model.plan(), cfg.beta1, cfg.beta2, cfg.weight_decay);

  std::ofstream log;
  if (!cfg.log_jsonl.empty()) {
    log.open(cfg.log_jsonl, std::ios::trunc);
    if (!log) throw IoError("train_baseline: cannot open log " + cfg.log_jsonl);
  }

  TrainResult result;
  long tokens_seen = 0;
  const auto t0 = std::chrono::steady_clock::now();
  const long stop_step = cfg.max_steps > 0 ? std::min(total_steps, cfg.max_steps) : total_steps;
  for (long step = 0; step < stop_step; ++step) {
    std::vector<Matrix> grads;
    long ce_count = 0;
    double ce_sum = 0.0;
    std::vector<std::unique_ptr<BaselineModel::Result>> results;
    for (int k = 0; k < cfg.micro_batches; ++k) {
      const std::size_t idx = static_cast<std::size_t>(
          (step * cfg.micro_batches + k) % static_cast<long>(batches.size()));
      results.push_back(std::make_unique<BaselineModel::Result>(model.forward(batches[idx])));
      ce_count += results.back()->ce_count;
      ce_sum += results.back()->tape->scalar_value(results.back()->ce_sum);
    }
    if (ce_count == 0) throw NumericError("train_baseline: all targets ignored");
    for (auto& fr : results) {
      Var root = scale(*fr->tape, fr->ce_sum, 1.0 / static_cast<double>(ce_count));
      fr->tape->backward(root);
      fr->binding->accumulate_grads(grads);
    }
    const double ce_mean = ce_sum / static_cast<double>(ce_count);
    if (!std::isfinite(ce_mean)) {
      result.diverged = true;
      break;
    }
    const double lr_mult = wsd_schedule(step, total_steps, cfg.warmup_steps, cfg.decay_fraction);
    opt.step(grads, lr_mult);
    tokens_seen += tokens_per_step;

    TrajectoryRow row;
    row.step = step;
    row.tokens = tokens_seen;
    row.loss_ce = ce_mean;
    row.realized_r = 1.0;
    row.lr = lr_mult;
    row.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log.is_open()) log << row.to_json() << "\n";
    result.rows.push_back(row);
  }
  if (!result.rows.empty()) {
    const std::size_t tail = std::max<std::size_t>(1, result.rows.size() / 20);
    double ce = 0.0;
    for (std::size_t i = result.rows.size() - tail; i < result.rows.size(); ++i) {
      ce += result.rows[i].loss_ce;
    }
    result.final_ce = ce / static_cast<double>(tail);
    result.final_realized_r = 1.0;
  }
  return result;
}

std::vector<double> forward_layer_rms(const DlcmModel& model, const TokenBatch& batch) {
  ForwardResult fr = model.forward(batch, Phase::Infer, nullptr, nullptr, false);
  return fr.layer_rms;
}

}  // namespace dlcm
