#include "dlcm/segmenter.hpp"

#include <algorithm>
#include <cmath>

namespace dlcm {

namespace {

constexpr double kProbClamp = 1e-7;

/// Shared forcing: p_final = p_raw * mask + forced, with mask 0 and forced 1
/// at document starts (no gradient through forced positions).
Var apply_forcing(Tape& t, Var p_raw, const std::vector<int>& doc_offsets, Index rows,
                  std::vector<char>& forced_out) {
  Matrix mask = Matrix::Ones(rows, 1);
  Matrix forced = Matrix::Zero(rows, 1);
  forced_out.assign(static_cast<std::size_t>(rows), 0);
  for (int off : doc_offsets) {
    mask(off, 0) = 0.0;
    forced(off, 0) = 1.0;
    forced_out[static_cast<std::size_t>(off)] = 1;
  }
  return add(t, mul(t, p_raw, t.constant(std::move(mask))), t.constant(std::move(forced)));
}

std::vector<int> prev_index_within_docs(const std::vector<int>& doc_offsets, int length) {
  std::vector<char> is_start(static_cast<std::size_t>(length), 0);
  for (int off : doc_offsets) is_start[static_cast<std::size_t>(off)] = 1;
  std::vector<int> prev(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) {
    prev[static_cast<std::size_t>(t)] = is_start[static_cast<std::size_t>(t)] ? -1 : t - 1;
  }
  return prev;
}

}  // namespace

void SegmenterConfig::validate() const {
  if (temp_sharpen <= 0.0 || temp_sharpen > 1.0) {
    throw ConfigError("segmenter: temp_sharpen must be in (0,1]");
  }
  if (threshold <= 0.0 || threshold >= 1.0) {
    throw ConfigError("segmenter: threshold must be in (0,1)");
  }
  if (target_r <= 1.0) throw ConfigError("segmenter: target_R must be > 1");
}

int SegmenterConfig::resolved_d_scan(int d_token) const {
  if (d_scan > 0) return d_scan;
  return std::min(128, d_token);
}

BoundaryScores boundary_scores(Tape& t, Var h, Var w_q, Var w_k,
                               const std::vector<int>& doc_offsets) {
  const Index L = t.value(h).rows();
  Var q = matmul(t, h, w_q);
  Var k = matmul(t, h, w_k);
  const std::vector<int> prev = prev_index_within_docs(doc_offsets, static_cast<int>(L));
  Var q_prev = gather_rows(t, q, prev);
  Var cos = cosine_rows(t, q_prev, k);
  // p = (1 - cos) / 2
  Var p_raw = scale(t, add_scalar(t, scale(t, cos, -1.0), 1.0), 0.5);

  BoundaryScores out;
  out.p = apply_forcing(t, p_raw, doc_offsets, L, out.forced);

  out.flagged.assign(static_cast<std::size_t>(L), 0);
  const Matrix& qv = t.value(q_prev);
  const Matrix& kv = t.value(k);
  for (Index i = 0; i < L; ++i) {
    if (out.forced[static_cast<std::size_t>(i)]) continue;
    if (qv.row(i).norm() == 0.0 || kv.row(i).norm() == 0.0) {
      out.flagged[static_cast<std::size_t>(i)] = 1;
    }
  }
  return out;
}

BoundaryScores learned_boundary_scores(Tape& t, Var h, Var mlp_w1, Var mlp_b1, Var mlp_w2,
                                       Var mlp_b2, const std::vector<int>& doc_offsets) {
  const Index L = t.value(h).rows();
  const std::vector<int> prev = prev_index_within_docs(doc_offsets, static_cast<int>(L));
  Var x = hcat(t, gather_rows(t, h, prev), h);
  Var hid = silu(t, rowwise_add(t, matmul(t, x, mlp_w1), mlp_b1));
  Var logit = rowwise_add(t, matmul(t, hid, mlp_w2), mlp_b2);
  Var p_raw = sigmoid(t, logit);

  BoundaryScores out;
  out.p = apply_forcing(t, p_raw, doc_offsets, L, out.forced);
  out.flagged.assign(static_cast<std::size_t>(L), 0);
  return out;
}

double sharpen_prob(double p, double alpha) {
  if (alpha <= 0.0) throw ConfigError("sharpen: alpha must be > 0");
  const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  const double logit = std::log(pc / (1.0 - pc));
  return 1.0 / (1.0 + std::exp(-logit / alpha));
}

void sharpen_and_sample(BoundaryScores& scores, Tape& t, const SegmenterConfig& cfg, Phase phase,
                        Rng& rng) {
  if (cfg.temp_sharpen <= 0.0) throw ConfigError("sharpen: alpha must be > 0");
  const Matrix& p = t.value(scores.p);
  const Index L = p.rows();
  scores.p_sharp.resize(static_cast<std::size_t>(L));
  scores.b.resize(static_cast<std::size_t>(L));
  for (Index i = 0; i < L; ++i) {
    const double ps = sharpen_prob(p(i, 0), cfg.temp_sharpen);
    scores.p_sharp[static_cast<std::size_t>(i)] = ps;
    int bi;
    if (scores.forced[static_cast<std::size_t>(i)]) {
      bi = 1;
    } else if (phase == Phase::Train) {
      bi = rng.next_unit() < ps ? 1 : 0;
    } else {
      bi = p(i, 0) >= cfg.threshold ? 1 : 0;
    }
    scores.b[static_cast<std::size_t>(i)] = bi;
  }
}

SegmentMap build_segment_map(const std::vector<int>& b, const std::vector<int>& doc_offsets) {
  const int L = static_cast<int>(b.size());
  if (L == 0) throw ConfigError("segment map: empty boundary vector");
  if (b[0] != 1) throw ConfigError("segment map: b_1 must be 1");
  for (int off : doc_offsets) {
    if (off < 0 || off >= L || b[static_cast<std::size_t>(off)] != 1) {
      throw ConfigError("segment map: b must be 1 at every doc offset");
    }
  }
  std::vector<char> is_start(static_cast<std::size_t>(L), 0);
  for (int off : doc_offsets) is_start[static_cast<std::size_t>(off)] = 1;

  SegmentMap map;
  map.j.resize(static_cast<std::size_t>(L));
  map.seg_start.resize(static_cast<std::size_t>(L));
  map.seg_end.resize(static_cast<std::size_t>(L));
  map.token_first_concept.resize(static_cast<std::size_t>(L));
  int count = 0;
  int cur_start = 0;
  int doc_first_concept = 0;
  for (int t = 0; t < L; ++t) {
    if (b[static_cast<std::size_t>(t)] == 1) {
      if (count > 0) map.lengths.push_back(t - cur_start);
      cur_start = t;
      ++count;
      map.concept_reset.push_back(is_start[static_cast<std::size_t>(t)]);
      if (is_start[static_cast<std::size_t>(t)]) doc_first_concept = count - 1;
    }
    map.j[static_cast<std::size_t>(t)] = count;
    map.seg_start[static_cast<std::size_t>(t)] = cur_start;
    map.token_first_concept[static_cast<std::size_t>(t)] = doc_first_concept;
  }
  map.lengths.push_back(L - cur_start);
  map.concepts = count;

  int seg = 0;
  int pos = 0;
  for (int t = 0; t < L; ++t) {
    if (t == pos + map.lengths[static_cast<std::size_t>(seg)]) {
      pos += map.lengths[static_cast<std::size_t>(seg)];
      ++seg;
    }
    map.seg_end[static_cast<std::size_t>(t)] = pos + map.lengths[static_cast<std::size_t>(seg)] - 1;
  }
  return map;
}

Var pool_concepts(Tape& t, Var h, const SegmentMap& map, Var w_up) {
  const Matrix& H = t.value(h);
  long total = 0;
  for (int len : map.lengths) total += len;
  if (total != H.rows()) {
    throw ShapeError("pool_concepts: map covers " + std::to_string(total) + " tokens vs H " +
                     shape_str(H));
  }
  return matmul(t, mean_pool_rows(t, h, map.lengths), w_up);
}

void GlobalStats::add_token(double p, int b) {
  ++token_count;
  sum_p.add(p);
  sum_b += b;
}

void GlobalStats::merge(const GlobalStats& other) {
  token_count += other.token_count;
  sum_p.merge(other.sum_p);
  sum_b += other.sum_b;
}

double GlobalStats::g() const {
  if (token_count == 0) throw NumericError("GlobalStats: no tokens");
  return sum_p.value() / static_cast<double>(token_count);
}

double GlobalStats::f() const {
  if (token_count == 0) throw NumericError("GlobalStats: no tokens");
  return static_cast<double>(sum_b) / static_cast<double>(token_count);
}

GlobalStats accumulate_global_stats(const std::vector<GlobalStats>& shards) {
  if (shards.empty()) throw ConfigError("accumulate_global_stats: empty shard list");
  GlobalStats out;
  for (const GlobalStats& s : shards) {
    if (s.token_count <= 0) throw ConfigError("accumulate_global_stats: shard with no tokens");
    out.merge(s);
  }
  return out;
}

double aux_loss(double g, double f, double r) {
  // single-quotient form: exactly zero at the F = G = 1/R anchor for dyadic R
  return (r * ((r - 1.0) * f * g + (1.0 - f) * (1.0 - g)) - (r - 1.0)) / (r - 1.0);
}

double aux_loss_dg(double f, double r) {
  return r / (r - 1.0) * ((r - 1.0) * f - (1.0 - f));
}

Var aux_loss_var(Tape& t, Var g, double f, double r) {
  const double a = aux_loss_dg(f, r);
  const double c = r / (r - 1.0) * (1.0 - f) - 1.0;
  return add_scalar(t, scale(t, g, a), c);
}

std::string format_segment_dump(const std::vector<std::string>& token_texts,
                                const SegmentMap& map) {
  if (static_cast<int>(token_texts.size()) != map.tokens()) {
    throw ShapeError("segment dump: token text count vs map tokens");
  }
  std::string out;
  int pos = 0;
  for (std::size_t k = 0; k < map.lengths.size(); ++k) {
    if (k > 0) out += " | ";
    for (int i = 0; i < map.lengths[k]; ++i) {
      out += token_texts[static_cast<std::size_t>(pos + i)];
    }
    pos += map.lengths[k];
  }
  return out;
}

double mean_tokens_per_concept(const SegmentMap& map) {
  if (map.concepts == 0) throw NumericError("mean_tokens_per_concept: empty map");
  return static_cast<double>(map.tokens()) / static_cast<double>(map.concepts);
}

}  // namespace dlcm
