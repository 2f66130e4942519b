#include "dlcm/smoothing.hpp"

namespace dlcm {

Var smooth_concepts(Tape& t, Var z, Var gate_raw, const SegmentMap& map) {
  const Matrix& Z = t.value(z);
  if (Z.rows() != static_cast<Index>(map.concept_reset.size())) {
    throw ShapeError("smooth_concepts: " + shape_str(Z) + " vs " +
                     std::to_string(map.concept_reset.size()) + " concepts");
  }
  return row_ema(t, z, gate_raw, map.concept_reset);
}

Eigen::RowVectorXd smoothing_gate(const Matrix& gate_raw) {
  return (1.0 / (1.0 + (-gate_raw.row(0).array()).exp())).matrix();
}

}  // namespace dlcm
