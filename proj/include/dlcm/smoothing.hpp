#pragma once

#include "dlcm/autograd.hpp"
#include "dlcm/segmenter.hpp"

namespace dlcm {

/// Causal exponential blend over reasoned concepts, restarting at document
/// boundaries: z~_k = beta (.) z_k + (1-beta) (.) z~_{k-1}, z~ = z at resets.
/// beta = sigmoid(gate_raw) per channel, so it stays in (0,1).
Var smooth_concepts(Tape& t, Var z, Var gate_raw, const SegmentMap& map);

/// The blend gate values implied by a raw gate parameter.
Eigen::RowVectorXd smoothing_gate(const Matrix& gate_raw);

}  // namespace dlcm
