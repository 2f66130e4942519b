#include "dlcm/autograd.hpp"

#include <cmath>
#include <limits>

namespace dlcm {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace

const Tape::Node& Tape::node(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw ShapeError("tape: invalid var id " + std::to_string(id));
  }
  return nodes_[static_cast<std::size_t>(id)];
}

Tape::Node& Tape::node(int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw ShapeError("tape: invalid var id " + std::to_string(id));
  }
  return nodes_[static_cast<std::size_t>(id)];
}

Var Tape::input(Matrix value, bool needs_grad) {
  Node n;
  n.value = std::move(value);
  n.needs = needs_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

double Tape::scalar_value(Var v) const {
  const Matrix& m = node(v.id).value;
  check(m.rows() == 1 && m.cols() == 1, "scalar_value: node is " + shape_str(m));
  return m(0, 0);
}

Matrix Tape::gradient(Var v) const {
  const Node& n = node(v.id);
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix& Tape::grad_acc(int id) {
  Node& n = node(id);
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::record(const char* op, Matrix value, std::vector<int> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (int i : inputs) {
    if (node(i).needs) {
      n.needs = true;
      break;
    }
  }
  n.inputs = std::move(inputs);
  if (n.needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var root) {
  const Matrix& v = node(root.id).value;
  check(v.rows() == 1 && v.cols() == 1,
        "backward: scalar root required, got " + shape_str(v) + "; supply a cotangent");
  backward(root, Matrix::Ones(1, 1));
}

void Tape::backward(Var root, const Matrix& cotangent) {
  Node& r = node(root.id);
  check(cotangent.rows() == r.value.rows() && cotangent.cols() == r.value.cols(),
        "backward: cotangent " + shape_str(cotangent) + " vs root " + shape_str(r.value));
  grad_acc(root.id) += cotangent;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, id);
  }
}

// ---- helpers for primitive implementations -----------------------------

namespace {

const Matrix& val(Tape& t, int id) { return t.value_of(id); }

}  // namespace

Var add(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  check(A.rows() == B.rows() && A.cols() == B.cols(),
        "add: " + shape_str(A) + " vs " + shape_str(B));
  return t.record("add", A + B, {a.id, b.id}, [a, b](Tape& tt, int self) {
    const Matrix& g = tt.grad_acc(self);
    if (tt.needs_grad(a)) tt.grad_acc(a.id) += g;
    if (tt.needs_grad(b)) tt.grad_acc(b.id) += g;
  });
}

Var sub(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  check(A.rows() == B.rows() && A.cols() == B.cols(),
        "sub: " + shape_str(A) + " vs " + shape_str(B));
  return t.record("sub", A - B, {a.id, b.id}, [a, b](Tape& tt, int self) {
    const Matrix& g = tt.grad_acc(self);
    if (tt.needs_grad(a)) tt.grad_acc(a.id) += g;
    if (tt.needs_grad(b)) tt.grad_acc(b.id) -= g;
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  check(A.rows() == B.rows() && A.cols() == B.cols(),
        "mul: " + shape_str(A) + " vs " + shape_str(B));
  return t.record("mul", A.cwiseProduct(B), {a.id, b.id}, [a, b](Tape& tt, int self) {
    const Matrix& g = tt.grad_acc(self);
    if (tt.needs_grad(a)) tt.grad_acc(a.id) += g.cwiseProduct(val(tt, b.id));
    if (tt.needs_grad(b)) tt.grad_acc(b.id) += g.cwiseProduct(val(tt, a.id));
  });
}

Var scale(Tape& t, Var a, double c) {
  return t.record("scale", t.value(a) * c, {a.id}, [a, c](Tape& tt, int self) {
    if (tt.needs_grad(a)) tt.grad_acc(a.id) += tt.grad_acc(self) * c;
  });
}

Var add_scalar(Tape& t, Var a, double c) {
  return t.record("add_scalar", t.value(a).array() + c, {a.id}, [a](Tape& tt, int self) {
    if (tt.needs_grad(a)) tt.grad_acc(a.id) += tt.grad_acc(self);
  });
}

Var matmul(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  check(A.cols() == B.rows(), "matmul: " + shape_str(A) + " * " + shape_str(B));
  return t.record("matmul", A * B, {a.id, b.id}, [a, b](Tape& tt, int self) {
    const Matrix& g = tt.grad_acc(self);
    if (tt.needs_grad(a)) tt.grad_acc(a.id).noalias() += g * val(tt, b.id).transpose();
    if (tt.needs_grad(b)) tt.grad_acc(b.id).noalias() += val(tt, a.id).transpose() * g;
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  check(A.cols() == B.cols(), "matmul_nt: " + shape_str(A) + " * " + shape_str(B) + "^T");
  return t.record("matmul_nt", A * B.transpose(), {a.id, b.id}, [a, b](Tape& tt, int self) {
    const Matrix& g = tt.grad_acc(self);
    if (tt.needs_grad(a)) tt.grad_acc(a.id).noalias() += g * val(tt, b.id);
    if (tt.needs_grad(b)) tt.grad_acc(b.id).noalias() += g.transpose() * val(tt, a.id);
  });
}

Var transpose(Tape& t, Var a) {
  return t.record("transpose", t.value(a).transpose(), {a.id}, [a](Tape& tt, int self) {
    if (tt.needs_grad(a)) tt.grad_acc(a.id) += tt.grad_acc(self).transpose();
  });
}

Var sum_all(Tape& t, Var a) {
  Matrix s(1, 1);
  s(0, 0) = t.value(a).sum();
  return t.record("sum_all", std::move(s), {a.id}, [a](Tape& tt, int self) {
    if (tt.needs_grad(a)) {
      tt.grad_acc(a.id).array() += tt.grad_acc(self)(0, 0);
    }
  });
}

Var hcat(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  check(A.rows() == B.rows(), "hcat: " + shape_str(A) + " | " + shape_str(B));
  Matrix out(A.rows(), A.cols() + B.cols());
  out << A, B;
  const Index ca = A.cols();
  return t.record("hcat", std::move(out), {a.id, b.id}, [a, b, ca](Tape& tt, int self) {
    const Matrix& g = tt.grad_acc(self);
    if (tt.needs_grad(a)) tt.grad_acc(a.id) += g.leftCols(ca);
    if (tt.needs_grad(b)) tt.grad_acc(b.id) += g.rightCols(g.cols() - ca);
  });
}

Var col_block(Tape& t, Var a, Index c0, Index n) {
  const Matrix& A = t.value(a);
  check(c0 >= 0 && n >= 0 && c0 + n <= A.cols(),
        "col_block: [" + std::to_string(c0) + "," + std::to_string(c0 + n) + ") of " + shape_str(A));
  return t.record("col_block", A.middleCols(c0, n), {a.id}, [a, c0, n](Tape& tt, int self) {
    if (tt.needs_grad(a)) tt.grad_acc(a.id).middleCols(c0, n) += tt.grad_acc(self);
  });
}

Var rowwise_mul(Tape& t, Var a, Var gain) {
  const Matrix& A = t.value(a);
  const Matrix& G = t.value(gain);
  check(G.rows() == 1 && G.cols() == A.cols(),
        "rowwise_mul: " + shape_str(A) + " by gain " + shape_str(G));
  Matrix out = A.array().rowwise() * G.row(0).array();
  return t.record("rowwise_mul", std::move(out), {a.id, gain.id}, [a, gain](Tape& tt, int self) {
    const Matrix& g = tt.grad_acc(self);
    if (tt.needs_grad(a)) {
      tt.grad_acc(a.id).array() += g.array().rowwise() * val(tt, gain.id).row(0).array();
    }
    if (tt.needs_grad(gain)) {
      tt.grad_acc(gain.id).row(0) += g.cwiseProduct(val(tt, a.id)).colwise().sum();
    }
  });
}

Var rowwise_add(Tape& t, Var a, Var bias) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(bias);
  check(B.rows() == 1 && B.cols() == A.cols(),
        "rowwise_add: " + shape_str(A) + " plus bias " + shape_str(B));
  Matrix out = A.array().rowwise() + B.row(0).array();
  return t.record("rowwise_add", std::move(out), {a.id, bias.id}, [a, bias](Tape& tt, int self) {
    const Matrix& g = tt.grad_acc(self);
    if (tt.needs_grad(a)) tt.grad_acc(a.id) += g;
    if (tt.needs_grad(bias)) tt.grad_acc(bias.id).row(0) += g.colwise().sum();
  });
}

Var sigmoid(Tape& t, Var a) {
  Matrix out = 1.0 / (1.0 + (-t.value(a).array()).exp());
  return t.record("sigmoid", std::move(out), {a.id}, [a](Tape& tt, int self) {
    if (!tt.needs_grad(a)) return;
    const auto y = tt.value_of(self).array();
    tt.grad_acc(a.id).array() += tt.grad_acc(self).array() * y * (1.0 - y);
  });
}

Var silu(Tape& t, Var a) {
  const auto x = t.value(a).array();
  Eigen::ArrayXXd s = 1.0 / (1.0 + (-x).exp());
  Matrix out = x * s;
  return t.record("silu", std::move(out), {a.id}, [a](Tape& tt, int self) {
    if (!tt.needs_grad(a)) return;
    const auto x2 = val(tt, a.id).array();
    Eigen::ArrayXXd s2 = 1.0 / (1.0 + (-x2).exp());
    tt.grad_acc(a.id).array() += tt.grad_acc(self).array() * (s2 * (1.0 + x2 * (1.0 - s2)));
  });
}

Var rmsnorm_rows(Tape& t, Var a, double eps) {
  const Matrix& A = t.value(a);
  check(A.cols() > 0, "rmsnorm_rows: empty rows");
  Eigen::ArrayXd inv_rms =
      ((A.array().square().rowwise().mean()) + eps).sqrt().inverse();
  Matrix out = A.array().colwise() * inv_rms;
  return t.record("rmsnorm_rows", std::move(out), {a.id}, [a, eps](Tape& tt, int self) {
    if (!tt.needs_grad(a)) return;
    const Matrix& X = val(tt, a.id);
    const Matrix& g = tt.grad_acc(self);
    const double d = static_cast<double>(X.cols());
    Eigen::ArrayXd ms = X.array().square().rowwise().mean() + eps;
    Eigen::ArrayXd r = ms.sqrt().inverse();               // (ms)^(-1/2)
    Eigen::ArrayXd xg = (X.array() * g.array()).rowwise().sum();
    // gx = r*g - r^3/d * (x.g) * x
    Matrix gx = (g.array().colwise() * r) - (X.array().colwise() * (r.cube() * xg / d));
    tt.grad_acc(a.id) += gx;
  });
}

Var gather_rows(Tape& t, Var a, const std::vector<int>& idx) {
  const Matrix& A = t.value(a);
  Matrix out = Matrix::Zero(static_cast<Index>(idx.size()), A.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const int s = idx[i];
    if (s < 0) continue;
    check(s < A.rows(), "gather_rows: index " + std::to_string(s) + " of " + shape_str(A));
    out.row(static_cast<Index>(i)) = A.row(s);
  }
  return t.record("gather_rows", std::move(out), {a.id}, [a, idx](Tape& tt, int self) {
    if (!tt.needs_grad(a)) return;
    const Matrix& g = tt.grad_acc(self);
    Matrix& ga = tt.grad_acc(a.id);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= 0) ga.row(idx[i]) += g.row(static_cast<Index>(i));
    }
  });
}

Var softmax_banded(Tape& t, Var scores, const std::vector<int>& lo, const std::vector<int>& hi) {
  const Matrix& S = t.value(scores);
  check(static_cast<Index>(lo.size()) == S.rows() && static_cast<Index>(hi.size()) == S.rows(),
        "softmax_banded: bounds size vs " + shape_str(S));
  Matrix out = Matrix::Zero(S.rows(), S.cols());
  for (Index i = 0; i < S.rows(); ++i) {
    const int a = lo[static_cast<std::size_t>(i)];
    const int b = hi[static_cast<std::size_t>(i)];
    if (b < a) continue;
    check(a >= 0 && b < S.cols(), "softmax_banded: window [" + std::to_string(a) + "," +
                                      std::to_string(b) + "] of " + shape_str(S));
    const Index n = b - a + 1;
    const auto row = S.row(i).segment(a, n);
    const double m = row.maxCoeff();
    Eigen::ArrayXd e = (row.array() - m).exp();
    out.row(i).segment(a, n) = e / e.sum();
  }
  return t.record("softmax_banded", std::move(out), {scores.id},
                  [scores, lo, hi](Tape& tt, int self) {
                    if (!tt.needs_grad(scores)) return;
                    const Matrix& P = tt.value_of(self);
                    const Matrix& g = tt.grad_acc(self);
                    Matrix& gs = tt.grad_acc(scores.id);
                    for (Index i = 0; i < P.rows(); ++i) {
                      const int a = lo[static_cast<std::size_t>(i)];
                      const int b = hi[static_cast<std::size_t>(i)];
                      if (b < a) continue;
                      const Index n = b - a + 1;
                      const auto p = P.row(i).segment(a, n).array();
                      const auto gr = g.row(i).segment(a, n).array();
                      const double dot = (p * gr).sum();
                      gs.row(i).segment(a, n).array() += p * (gr - dot);
                    }
                  });
}

Var softmax_rows(Tape& t, Var scores) {
  const Matrix& S = t.value(scores);
  std::vector<int> lo(static_cast<std::size_t>(S.rows()), 0);
  std::vector<int> hi(static_cast<std::size_t>(S.rows()), static_cast<int>(S.cols()) - 1);
  return softmax_banded(t, scores, lo, hi);
}

Var rope_rows(Tape& t, Var x, const std::vector<int>& positions, int head_dim, double base) {
  const Matrix& X = t.value(x);
  check(head_dim > 0 && head_dim % 2 == 0 && X.cols() % head_dim == 0,
        "rope_rows: head_dim " + std::to_string(head_dim) + " vs " + shape_str(X));
  check(static_cast<Index>(positions.size()) == X.rows(), "rope_rows: positions vs rows");
  const Index heads = X.cols() / head_dim;
  const Index half = head_dim / 2;

  auto rotate = [positions, heads, half, head_dim, base](const Matrix& M, double sign) {
    Matrix out(M.rows(), M.cols());
    for (Index i = 0; i < M.rows(); ++i) {
      const double pos = positions[static_cast<std::size_t>(i)];
      for (Index h = 0; h < heads; ++h) {
        const Index off = h * head_dim;
        for (Index j = 0; j < half; ++j) {
          const double theta =
              pos * std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
          const double c = std::cos(theta);
          const double s = sign * std::sin(theta);
          const double x0 = M(i, off + 2 * j);
          const double x1 = M(i, off + 2 * j + 1);
          out(i, off + 2 * j) = c * x0 - s * x1;
          out(i, off + 2 * j + 1) = s * x0 + c * x1;
        }
      }
    }
    return out;
  };

  return t.record("rope_rows", rotate(X, 1.0), {x.id},
                  [x, rotate](Tape& tt, int self) {
                    if (!tt.needs_grad(x)) return;
                    tt.grad_acc(x.id) += rotate(tt.grad_acc(self), -1.0);
                  });
}

Var mean_pool_rows(Tape& t, Var a, const std::vector<int>& lengths) {
  const Matrix& A = t.value(a);
  Index total = 0;
  for (int len : lengths) {
    check(len >= 1, "mean_pool_rows: nonpositive segment length");
    total += len;
  }
  check(total == A.rows(), "mean_pool_rows: sum(lengths)=" + std::to_string(total) + " vs " +
                               shape_str(A));
  Matrix out(static_cast<Index>(lengths.size()), A.cols());
  Index r = 0;
  for (std::size_t k = 0; k < lengths.size(); ++k) {
    const Index n = lengths[k];
    out.row(static_cast<Index>(k)) = A.middleRows(r, n).colwise().mean();
    r += n;
  }
  return t.record("mean_pool_rows", std::move(out), {a.id}, [a, lengths](Tape& tt, int self) {
    if (!tt.needs_grad(a)) return;
    const Matrix& g = tt.grad_acc(self);
    Matrix& ga = tt.grad_acc(a.id);
    Index r2 = 0;
    for (std::size_t k = 0; k < lengths.size(); ++k) {
      const Index n = lengths[k];
      ga.middleRows(r2, n).rowwise() +=
          (g.row(static_cast<Index>(k)) / static_cast<double>(n)).eval();
      r2 += n;
    }
  });
}

Var repeat_rows(Tape& t, Var a, const std::vector<int>& lengths) {
  const Matrix& A = t.value(a);
  check(static_cast<Index>(lengths.size()) == A.rows(), "repeat_rows: lengths vs " + shape_str(A));
  Index total = 0;
  for (int len : lengths) {
    check(len >= 1, "repeat_rows: nonpositive segment length");
    total += len;
  }
  Matrix out(total, A.cols());
  Index r = 0;
  for (std::size_t k = 0; k < lengths.size(); ++k) {
    out.middleRows(r, lengths[k]).rowwise() = A.row(static_cast<Index>(k));
    r += lengths[k];
  }
  return t.record("repeat_rows", std::move(out), {a.id}, [a, lengths](Tape& tt, int self) {
    if (!tt.needs_grad(a)) return;
    const Matrix& g = tt.grad_acc(self);
    Matrix& ga = tt.grad_acc(a.id);
    Index r2 = 0;
    for (std::size_t k = 0; k < lengths.size(); ++k) {
      ga.row(static_cast<Index>(k)) += g.middleRows(r2, lengths[k]).colwise().sum();
      r2 += lengths[k];
    }
  });
}

Var embedding_rows(Tape& t, Var table, const std::vector<int>& ids) {
  const Matrix& T = t.value(table);
  Matrix out(static_cast<Index>(ids.size()), T.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] >= 0 && ids[i] < T.rows(),
          "embedding_rows: id " + std::to_string(ids[i]) + " of " + shape_str(T));
    out.row(static_cast<Index>(i)) = T.row(ids[i]);
  }
  return t.record("embedding_rows", std::move(out), {table.id}, [table, ids](Tape& tt, int self) {
    if (!tt.needs_grad(table)) return;
    const Matrix& g = tt.grad_acc(self);
    Matrix& gt = tt.grad_acc(table.id);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      gt.row(ids[i]) += g.row(static_cast<Index>(i));
    }
  });
}

Var cross_entropy_rows(Tape& t, Var logits, const std::vector<int>& targets) {
  const Matrix& Z = t.value(logits);
  check(static_cast<Index>(targets.size()) == Z.rows(), "cross_entropy_rows: targets vs rows");
  Matrix out = Matrix::Zero(Z.rows(), 1);
  for (Index i = 0; i < Z.rows(); ++i) {
    const int y = targets[static_cast<std::size_t>(i)];
    if (y < 0) continue;
    check(y < Z.cols(), "cross_entropy_rows: target " + std::to_string(y) + " vs " + shape_str(Z));
    const double m = Z.row(i).maxCoeff();
    const double lse = m + std::log((Z.row(i).array() - m).exp().sum());
    out(i, 0) = lse - Z(i, y);
  }
  return t.record("cross_entropy_rows", std::move(out), {logits.id},
                  [logits, targets](Tape& tt, int self) {
                    if (!tt.needs_grad(logits)) return;
                    const Matrix& Z2 = val(tt, logits.id);
                    const Matrix& g = tt.grad_acc(self);
                    Matrix& gz = tt.grad_acc(logits.id);
                    for (Index i = 0; i < Z2.rows(); ++i) {
                      const int y = targets[static_cast<std::size_t>(i)];
                      if (y < 0) continue;
                      const double gi = g(i, 0);
                      if (gi == 0.0) continue;
                      const double m = Z2.row(i).maxCoeff();
                      Eigen::ArrayXd e = (Z2.row(i).array() - m).exp();
                      Eigen::ArrayXd p = e / e.sum();
                      gz.row(i).array() += gi * p.transpose();
                      gz(i, y) -= gi;
                    }
                  });
}

Var cosine_rows(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  check(A.rows() == B.rows() && A.cols() == B.cols(),
        "cosine_rows: " + shape_str(A) + " vs " + shape_str(B));
  Matrix out(A.rows(), 1);
  for (Index i = 0; i < A.rows(); ++i) {
    const double na = A.row(i).norm();
    const double nb = B.row(i).norm();
    out(i, 0) = (na == 0.0 || nb == 0.0) ? 0.0 : A.row(i).dot(B.row(i)) / (na * nb);
  }
  return t.record("cosine_rows", std::move(out), {a.id, b.id}, [a, b](Tape& tt, int self) {
    const Matrix& A2 = val(tt, a.id);
    const Matrix& B2 = val(tt, b.id);
    const Matrix& C = tt.value_of(self);
    const Matrix& g = tt.grad_acc(self);
    for (Index i = 0; i < A2.rows(); ++i) {
      const double gi = g(i, 0);
      if (gi == 0.0) continue;
      const double na = A2.row(i).norm();
      const double nb = B2.row(i).norm();
      if (na == 0.0 || nb == 0.0) continue;
      const double c = C(i, 0);
      if (tt.needs_grad(a)) {
        tt.grad_acc(a.id).row(i) +=
            gi * (B2.row(i) / (na * nb) - c * A2.row(i) / (na * na));
      }
      if (tt.needs_grad(b)) {
        tt.grad_acc(b.id).row(i) +=
            gi * (A2.row(i) / (na * nb) - c * B2.row(i) / (nb * nb));
      }
    }
  });
}

Var row_ema(Tape& t, Var z, Var gate_raw, const std::vector<char>& reset) {
  const Matrix& Z = t.value(z);
  const Matrix& G = t.value(gate_raw);
  check(G.rows() == 1 && G.cols() == Z.cols(), "row_ema: gate " + shape_str(G) + " vs " + shape_str(Z));
  check(static_cast<Index>(reset.size()) == Z.rows(), "row_ema: reset vs rows");
  check(Z.rows() == 0 || reset[0] != 0, "row_ema: first row must be a reset row");
  Eigen::ArrayXd beta = 1.0 / (1.0 + (-G.row(0).array()).exp());
  Matrix out(Z.rows(), Z.cols());
  for (Index k = 0; k < Z.rows(); ++k) {
    if (reset[static_cast<std::size_t>(k)]) {
      out.row(k) = Z.row(k);
    } else {
      out.row(k).array() = beta.transpose() * Z.row(k).array() +
                           (1.0 - beta.transpose()) * out.row(k - 1).array();
    }
  }
  return t.record("row_ema", std::move(out), {z.id, gate_raw.id},
                  [z, gate_raw, reset](Tape& tt, int self) {
                    const Matrix& Z2 = val(tt, z.id);
                    const Matrix& Y = tt.value_of(self);
                    const Matrix& G2 = val(tt, gate_raw.id);
                    const Matrix& g = tt.grad_acc(self);
                    Eigen::ArrayXd beta2 = 1.0 / (1.0 + (-G2.row(0).array()).exp());
                    Eigen::RowVectorXd carry = Eigen::RowVectorXd::Zero(Z2.cols());
                    Eigen::RowVectorXd gbeta = Eigen::RowVectorXd::Zero(Z2.cols());
                    const bool nz = tt.needs_grad(z);
                    const bool ng = tt.needs_grad(gate_raw);
                    Matrix* gz = nz ? &tt.grad_acc(z.id) : nullptr;
                    for (Index k = Z2.rows() - 1; k >= 0; --k) {
                      Eigen::RowVectorXd gt = g.row(k) + carry;
                      if (reset[static_cast<std::size_t>(k)]) {
                        if (nz) gz->row(k) += gt;
                        carry.setZero();
                      } else {
                        if (nz) gz->row(k).array() += gt.array() * beta2.transpose();
                        if (ng) {
                          gbeta.array() +=
                              gt.array() * (Z2.row(k).array() - Y.row(k - 1).array());
                        }
                        carry.array() = gt.array() * (1.0 - beta2.transpose());
                      }
                    }
                    if (ng) {
                      tt.grad_acc(gate_raw.id).row(0).array() +=
                          gbeta.array() * beta2.transpose() * (1.0 - beta2.transpose());
                    }
                  });
}

// ---- evaluation helpers -------------------------------------------------

EvalResult evaluate_with_gradients(const ScalarGraph& f, const std::vector<Matrix>& params) {
  Tape t;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Matrix& p : params) vars.push_back(t.input(p, true));
  const Var out = f(t, vars);
  EvalResult res;
  res.loss = t.scalar_value(out);
  t.backward(out);
  res.grads.reserve(params.size());
  for (const Var v : vars) res.grads.push_back(t.gradient(v));
  return res;
}

GradCheckResult finite_difference_check(const ScalarGraph& f, const std::vector<Matrix>& params,
                                        const std::vector<std::string>& names, double eps) {
  const EvalResult base = evaluate_with_gradients(f, params);
  if (!std::isfinite(base.loss)) throw NumericError("finite_difference_check: non-finite loss");

  auto eval_at = [&](const std::vector<Matrix>& p, const std::string& pname) {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(p.size());
    for (const Matrix& m : p) vars.push_back(t.input(m, false));
    const double v = t.scalar_value(f(t, vars));
    if (!std::isfinite(v)) {
      throw NumericError("finite_difference_check: non-finite loss perturbing " + pname);
    }
    return v;
  };

  GradCheckResult res;
  std::vector<Matrix> work = params;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const std::string pname = pi < names.size() ? names[pi] : ("param" + std::to_string(pi));
    for (Index i = 0; i < params[pi].rows(); ++i) {
      for (Index j = 0; j < params[pi].cols(); ++j) {
        const double orig = work[pi](i, j);
        work[pi](i, j) = orig + eps;
        const double up = eval_at(work, pname);
        work[pi](i, j) = orig - eps;
        const double dn = eval_at(work, pname);
        work[pi](i, j) = orig;
        const double central = (up - dn) / (2.0 * eps);
        const double analytic = base.grads[pi](i, j);
        const double rel =
            std::abs(analytic - central) / (std::abs(analytic) + std::abs(central) + 1e-12);
        if (rel > res.max_rel_err) {
          res.max_rel_err = rel;
          res.worst_param = pname;
        }
      }
    }
  }
  return res;
}

}  // namespace dlcm
