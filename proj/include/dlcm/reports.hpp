#pragma once

#include "dlcm/batching.hpp"
#include "dlcm/model.hpp"

#include <string>
#include <utility>
#include <vector>

namespace dlcm {

/// Mean CE by within-concept position (0-based), for the concept model and a
/// token-uniform baseline evaluated on the same windows. Positions come from
/// the concept model's inferred segment maps.
struct LossByPosition {
  std::vector<double> concept_mean;
  std::vector<double> baseline_mean;
  std::vector<double> delta;       // concept - baseline
  std::vector<long> counts;        // tokens contributing per position
  long eval_tokens_below_max = 0;  // sum of counts

  std::string to_tsv() const;
};

LossByPosition loss_by_concept_position(const DlcmModel& model, const BaselineModel& baseline,
                                        const std::vector<TokenBatch>& eval_batches,
                                        int max_pos = 20);

/// Per-domain mean tokens-per-concept under inferred boundaries, plus
/// segmentation text dumps (" | " separators).
struct SegmentReportRow {
  std::string domain;
  double target_r = 0.0;
  double mean_tokens_per_concept = 0.0;
  long tokens = 0;
  long concepts = 0;
};

struct SegmentReport {
  std::vector<SegmentReportRow> rows;
  std::vector<std::string> dumps;

  std::string to_tsv() const;
};

SegmentReport segment_report(const DlcmModel& model,
                             const std::vector<std::pair<std::string, std::vector<std::string>>>&
                                 corpus_by_domain,
                             int window, std::uint64_t seed, int max_dumps = 3);

}  // namespace dlcm
