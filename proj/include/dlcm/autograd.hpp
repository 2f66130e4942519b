#pragma once

#include "dlcm/common.hpp"

#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace dlcm {

/// Handle into a Tape. Cheap to copy; only meaningful with its owning tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over dense Eigen matrices.
///
/// A tape is single-owner and single-use: build a graph with the free
/// functions below, call backward() once, read gradients. Scalars are 1x1
/// matrices. Separate tapes may be evaluated concurrently.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Var input(Matrix value, bool needs_grad);
  Var constant(Matrix value) { return input(std::move(value), false); }
  Var scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return input(std::move(m), false);
  }

  const Matrix& value(Var v) const { return node(v.id).value; }
  double scalar_value(Var v) const;
  bool needs_grad(Var v) const { return node(v.id).needs; }

  /// Gradient of the last backward() root w.r.t. v (zeros if untouched).
  Matrix gradient(Var v) const;

  /// Seeds d(root)/d(root) = 1; root must be 1x1.
  void backward(Var root);
  /// Seeds an explicit cotangent for a non-scalar root.
  void backward(Var root, const Matrix& cotangent);

  /// Primitive recording; `backward` may be empty when no input needs grads.
  Var record(const char* op, Matrix value, std::vector<int> inputs, BackwardFn backward);

  Matrix& grad_acc(int id);  // lazily-zeroed accumulation buffer
  const Matrix& value_of(int id) const { return node(id).value; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // empty until touched
    std::vector<int> inputs;
    BackwardFn backward;
    bool needs = false;
    const char* op = "input";
  };

  const Node& node(int id) const;
  Node& node(int id);

  std::deque<Node> nodes_;  // stable element addresses under record()
};

// ---- arithmetic -------------------------------------------------------

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);  // elementwise
Var scale(Tape& t, Var a, double c);
Var add_scalar(Tape& t, Var a, double c);
Var matmul(Tape& t, Var a, Var b);
Var matmul_nt(Tape& t, Var a, Var b);  // A * B^T
Var transpose(Tape& t, Var a);
Var sum_all(Tape& t, Var a);  // 1x1
Var hcat(Tape& t, Var a, Var b);
Var col_block(Tape& t, Var a, Index c0, Index n);
Var rowwise_mul(Tape& t, Var a, Var gain);  // gain is 1 x cols
Var rowwise_add(Tape& t, Var a, Var bias);  // bias is 1 x cols

// ---- activations / normalization --------------------------------------

Var sigmoid(Tape& t, Var a);
Var silu(Tape& t, Var a);
Var rmsnorm_rows(Tape& t, Var a, double eps);

// ---- structured ops ----------------------------------------------------

/// Row gather; idx[i] == -1 yields a zero row.
Var gather_rows(Tape& t, Var a, const std::vector<int>& idx);

/// Row-wise softmax restricted to columns [lo[i], hi[i]] (inclusive);
/// excluded columns get probability 0; hi[i] < lo[i] yields a zero row.
Var softmax_banded(Tape& t, Var scores, const std::vector<int>& lo, const std::vector<int>& hi);
Var softmax_rows(Tape& t, Var scores);

/// Rotary position embedding applied per head block of `head_dim` columns.
Var rope_rows(Tape& t, Var x, const std::vector<int>& positions, int head_dim, double base);

/// Mean over contiguous row runs; sum(lengths) must equal rows(a).
Var mean_pool_rows(Tape& t, Var a, const std::vector<int>& lengths);

/// Inverse expansion of mean_pool_rows: row k of `a` repeated lengths[k] times.
Var repeat_rows(Tape& t, Var a, const std::vector<int>& lengths);

Var embedding_rows(Tape& t, Var table, const std::vector<int>& ids);

/// Per-row CE vs integer targets; target -1 -> 0 loss for that row.
Var cross_entropy_rows(Tape& t, Var logits, const std::vector<int>& targets);

/// Row-wise cosine similarity (L x 1); a zero-norm row on either side -> 0.
Var cosine_rows(Tape& t, Var a, Var b);

/// Causal per-channel EMA with sigmoid(gate_raw) blend, restarting where
/// reset[k] != 0 (those rows pass through unchanged).
Var row_ema(Tape& t, Var z, Var gate_raw, const std::vector<char>& reset);

// ---- generic evaluation / checking ------------------------------------

using ScalarGraph = std::function<Var(Tape&, const std::vector<Var>&)>;

struct EvalResult {
  double loss = 0.0;
  std::vector<Matrix> grads;  // one per parameter, same shapes
};

/// Builds the graph, runs backward from the scalar output, returns loss and
/// per-parameter gradients.
EvalResult evaluate_with_gradients(const ScalarGraph& f, const std::vector<Matrix>& params);

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
};

/// Central finite differences vs analytic gradients;
/// rel err = |analytic - central| / (|analytic| + |central| + 1e-12).
GradCheckResult finite_difference_check(const ScalarGraph& f, const std::vector<Matrix>& params,
                                        const std::vector<std::string>& names, double eps);

}  // namespace dlcm
