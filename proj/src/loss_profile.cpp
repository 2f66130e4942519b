#include "dlcm/reports.hpp"

#include "dlcm/tokenizer.hpp"

#include <sstream>

namespace dlcm {

std::string LossByPosition::to_tsv() const {
  std::ostringstream out;
  out << "position\tconcept_loss\tbaseline_loss\tdelta\tcount\n";
  for (std::size_t i = 0; i < concept_mean.size(); ++i) {
    out << i << "\t" << concept_mean[i] << "\t" << baseline_mean[i] << "\t" << delta[i] << "\t"
        << counts[i] << "\n";
  }
  return out.str();
}

LossByPosition loss_by_concept_position(const DlcmModel& model, const BaselineModel& baseline,
                                        const std::vector<TokenBatch>& eval_batches,
                                        int max_pos) {
  LossByPosition out;
  out.concept_mean.assign(static_cast<std::size_t>(max_pos), 0.0);
  out.baseline_mean.assign(static_cast<std::size_t>(max_pos), 0.0);
  out.delta.assign(static_cast<std::size_t>(max_pos), 0.0);
  out.counts.assign(static_cast<std::size_t>(max_pos), 0);

  for (const TokenBatch& batch : eval_batches) {
    ForwardResult fr = model.forward(batch, Phase::Infer, nullptr, nullptr, false);
    BaselineModel::Result br = baseline.forward(batch, false);
    const Matrix& ce_c = fr.tape->value(fr.ce_rows);
    const Matrix& ce_b = br.tape->value(br.ce_rows);
    for (int t = 0; t < batch.length(); ++t) {
      if (batch.targets[static_cast<std::size_t>(t)] < 0) continue;
      const int pos = t - fr.map.seg_start[static_cast<std::size_t>(t)];
      if (pos >= max_pos) continue;
      out.concept_mean[static_cast<std::size_t>(pos)] += ce_c(t, 0);
      out.baseline_mean[static_cast<std::size_t>(pos)] += ce_b(t, 0);
      ++out.counts[static_cast<std::size_t>(pos)];
    }
  }

  for (int i = 0; i < max_pos; ++i) {
    const long n = out.counts[static_cast<std::size_t>(i)];
    if (n > 0) {
      out.concept_mean[static_cast<std::size_t>(i)] /= static_cast<double>(n);
      out.baseline_mean[static_cast<std::size_t>(i)] /= static_cast<double>(n);
    }
    out.delta[static_cast<std::size_t>(i)] =
        out.concept_mean[static_cast<std::size_t>(i)] - out.baseline_mean[static_cast<std::size_t>(i)];
    out.eval_tokens_below_max += n;
  }
  return out;
}

std::string SegmentReport::to_tsv() const {
  std::ostringstream out;
  out << "domain\ttarget_R\tmean_tokens_per_concept\ttokens\tconcepts\n";
  for (const SegmentReportRow& r : rows) {
    out << r.domain << "\t" << r.target_r << "\t" << r.mean_tokens_per_concept << "\t" << r.tokens
        << "\t" << r.concepts << "\n";
  }
  return out.str();
}

SegmentReport segment_report(const DlcmModel& model,
                             const std::vector<std::pair<std::string, std::vector<std::string>>>&
                                 corpus_by_domain,
                             int window, std::uint64_t seed, int max_dumps) {
  SegmentReport report;
  Vocab vocab;
  for (const auto& [domain, texts] : corpus_by_domain) {
    const auto docs = tokenize_corpus(vocab, texts);
    const auto batches = pack_batches(docs, window, seed);
    long tokens = 0;
    long concepts = 0;
    int dumps_left = max_dumps;
    for (const TokenBatch& batch : batches) {
      ForwardResult fr = model.forward(batch, Phase::Infer, nullptr, nullptr, false);
      const int real = batch.real_tokens();
      tokens += real;
      for (int k = 0, pos = 0; k < fr.map.concepts; ++k) {
        if (pos < real) ++concepts;
        pos += fr.map.lengths[static_cast<std::size_t>(k)];
      }
      if (dumps_left > 0) {
        report.dumps.push_back(domain + ": " +
                               format_segment_dump(vocab.token_strings(batch.ids), fr.map));
        --dumps_left;
      }
    }
    SegmentReportRow row;
    row.domain = domain;
    row.target_r = model.config().seg.target_r;
    row.tokens = tokens;
    row.concepts = concepts;
    row.mean_tokens_per_concept =
        concepts > 0 ? static_cast<double>(tokens) / static_cast<double>(concepts) : 0.0;
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace dlcm
