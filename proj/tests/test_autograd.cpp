#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dlcm/autograd.hpp"
#include "dlcm/common.hpp"

#include <cmath>
#include <vector>

using namespace dlcm;

namespace {

Matrix random_matrix(Rng& rng, Index r, Index c, double scale = 1.0) {
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < c; ++j) m(i, j) = scale * rng.next_normal();
  }
  return m;
}

double fd_check_1(const ScalarGraph& f, const std::vector<Matrix>& params) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < params.size(); ++i) names.push_back("p" + std::to_string(i));
  return finite_difference_check(f, params, names, 1e-5).max_rel_err;
}

}  // namespace

TEST_CASE("sum of squares gradient") {
  Matrix x(1, 2);
  x << 1.0, 2.0;
  const auto f = [](Tape& t, const std::vector<Var>& p) {
    return sum_all(t, mul(t, p[0], p[0]));
  };
  const EvalResult r = evaluate_with_gradients(f, {x});
  CHECK(r.loss == doctest::Approx(5.0));
  CHECK(r.grads[0](0, 0) == doctest::Approx(2.0));
  CHECK(r.grads[0](0, 1) == doctest::Approx(4.0));
}

TEST_CASE("softmax + CE on the symmetric two-class case") {
  Matrix x(1, 2);
  x << 0.0, 0.0;
  const auto f = [](Tape& t, const std::vector<Var>& p) {
    return sum_all(t, cross_entropy_rows(t, p[0], {0}));
  };
  const EvalResult r = evaluate_with_gradients(f, {x});
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(r.grads[0](0, 0) == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(r.grads[0](0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("finite differences: quadratic form") {
  Rng rng(11);
  Matrix A = random_matrix(rng, 4, 4);
  Matrix x = random_matrix(rng, 4, 1);
  const auto f = [&A](Tape& t, const std::vector<Var>& p) {
    Var Av = t.constant(A);
    return sum_all(t, mul(t, p[0], matmul(t, Av, p[0])));
  };
  CHECK(fd_check_1(f, {x}) < 1e-9);
}

TEST_CASE("finite differences: softmax+CE chain") {
  Rng rng(12);
  Matrix W = random_matrix(rng, 6, 5);
  Matrix x = random_matrix(rng, 3, 6);
  const auto f = [&x](Tape& t, const std::vector<Var>& p) {
    Var logits = matmul(t, t.constant(x), p[0]);
    return sum_all(t, cross_entropy_rows(t, logits, {1, 4, 0}));
  };
  CHECK(fd_check_1(f, {W}) < 1e-7);
}

TEST_CASE("every primitive matches central finite differences within 1e-6") {
  Rng rng(42);

  SUBCASE("add/sub/mul/scale/add_scalar") {
    Matrix a = random_matrix(rng, 3, 4), b = random_matrix(rng, 3, 4);
    const auto f = [](Tape& t, const std::vector<Var>& p) {
      Var u = add(t, p[0], p[1]);
      Var v = sub(t, mul(t, u, p[0]), scale(t, p[1], 0.7));
      return sum_all(t, mul(t, add_scalar(t, v, 0.3), v));
    };
    CHECK(fd_check_1(f, {a, b}) < 1e-6);
  }

  SUBCASE("matmul/matmul_nt/transpose") {
    Matrix a = random_matrix(rng, 3, 5), b = random_matrix(rng, 5, 2), c = random_matrix(rng, 3, 2);
    const auto f = [](Tape& t, const std::vector<Var>& p) {
      Var u = matmul(t, p[0], p[1]);          // 3x2
      Var v = matmul_nt(t, u, p[2]);          // 3x3
      Var w = matmul(t, transpose(t, v), v);  // 3x3
      return sum_all(t, mul(t, w, w));
    };
    CHECK(fd_check_1(f, {a, b, c}) < 1e-6);
  }

  SUBCASE("sigmoid/silu/rmsnorm") {
    Matrix a = random_matrix(rng, 4, 6);
    const auto f = [](Tape& t, const std::vector<Var>& p) {
      Var u = silu(t, p[0]);
      Var v = rmsnorm_rows(t, u, 1e-6);
      return sum_all(t, mul(t, sigmoid(t, v), v));
    };
    CHECK(fd_check_1(f, {a}) < 1e-6);
  }

  SUBCASE("rowwise_mul/hcat/col_block") {
    Matrix a = random_matrix(rng, 3, 4), g = random_matrix(rng, 1, 8);
    const auto f = [](Tape& t, const std::vector<Var>& p) {
      Var cat = hcat(t, p[0], p[0]);
      Var scaled = rowwise_mul(t, cat, p[1]);
      Var blk = col_block(t, scaled, 2, 5);
      return sum_all(t, mul(t, blk, blk));
    };
    CHECK(fd_check_1(f, {a, g}) < 1e-6);
  }

  SUBCASE("softmax_banded") {
    Matrix s = random_matrix(rng, 4, 6);
    const std::vector<int> lo{0, 1, 0, 2};
    const std::vector<int> hi{5, 3, -1, 2};  // includes an empty row
    // fixed weighting so the check has nontrivial per-cell cotangents
    Matrix weights = random_matrix(rng, 4, 6);
    const auto f = [&](Tape& t, const std::vector<Var>& p) {
      Var sm = softmax_banded(t, p[0], lo, hi);
      return sum_all(t, mul(t, sm, t.constant(weights)));
    };
    CHECK(fd_check_1(f, {s}) < 1e-6);
  }

  SUBCASE("rope") {
    Matrix x = random_matrix(rng, 5, 8);
    const std::vector<int> pos{0, 1, 2, 0, 1};
    static Matrix weights = random_matrix(rng, 5, 8);
    const auto f = [&](Tape& t, const std::vector<Var>& p) {
      Var y = rope_rows(t, p[0], pos, 4, 10000.0);
      return sum_all(t, mul(t, y, t.constant(weights)));
    };
    CHECK(fd_check_1(f, {x}) < 1e-6);
  }

  SUBCASE("pool/repeat/gather/embedding") {
    Matrix h = random_matrix(rng, 6, 3);
    Matrix table = random_matrix(rng, 9, 3);
    const std::vector<int> lengths{2, 1, 3};
    const std::vector<int> idx{-1, 0, 2, 2, 5};
    const std::vector<int> ids{1, 8, 3, 3};
    static Matrix w1 = random_matrix(rng, 6, 3);
    static Matrix w2 = random_matrix(rng, 5, 3);
    static Matrix w3 = random_matrix(rng, 4, 3);
    const auto f = [&](Tape& t, const std::vector<Var>& p) {
      Var pooled = mean_pool_rows(t, p[0], lengths);
      Var rep = repeat_rows(t, pooled, lengths);
      Var g = gather_rows(t, p[0], idx);
      Var e = embedding_rows(t, p[1], ids);
      Var s1 = sum_all(t, mul(t, rep, t.constant(w1)));
      Var s2 = sum_all(t, mul(t, g, t.constant(w2)));
      Var s3 = sum_all(t, mul(t, e, t.constant(w3)));
      return add(t, add(t, s1, s2), s3);
    };
    CHECK(fd_check_1(f, {h, table}) < 1e-6);
  }

  SUBCASE("cosine") {
    Matrix a = random_matrix(rng, 4, 5), b = random_matrix(rng, 4, 5);
    static Matrix w = random_matrix(rng, 4, 1);
    const auto f = [&](Tape& t, const std::vector<Var>& p) {
      Var c = cosine_rows(t, p[0], p[1]);
      return sum_all(t, mul(t, c, t.constant(w)));
    };
    CHECK(fd_check_1(f, {a, b}) < 1e-6);
  }

  SUBCASE("row_ema") {
    Matrix z = random_matrix(rng, 6, 3);
    Matrix gate = random_matrix(rng, 1, 3);
    const std::vector<char> reset{1, 0, 0, 1, 0, 0};
    static Matrix w = random_matrix(rng, 6, 3);
    const auto f = [&](Tape& t, const std::vector<Var>& p) {
      Var y = row_ema(t, p[0], p[1], reset);
      return sum_all(t, mul(t, y, t.constant(w)));
    };
    CHECK(fd_check_1(f, {z, gate}) < 1e-6);
  }
}

TEST_CASE("softmax rows sum to one within 1e-12") {
  Rng rng(9);
  Matrix s = random_matrix(rng, 20, 13, 3.0);
  Tape t;
  Var v = softmax_rows(t, t.input(s, false));
  const Matrix p = t.value(v);
  for (Index i = 0; i < p.rows(); ++i) {
    CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("pool-then-repeat is linear; adjoint equals scatter-mean (random cotangents)") {
  Rng rng(77);
  const std::vector<int> lengths{3, 1, 4, 2};
  const Index L = 10, d = 5;

  // linearity: op(a x + b y) == a op(x) + b op(y)
  Matrix x = random_matrix(rng, L, d), y = random_matrix(rng, L, d);
  auto apply = [&](const Matrix& m) {
    Tape t;
    Var v = repeat_rows(t, mean_pool_rows(t, t.input(m, false), lengths), lengths);
    return Matrix(t.value(v));
  };
  const Matrix lhs = apply(2.0 * x - 0.5 * y);
  const Matrix rhs = 2.0 * apply(x) - 0.5 * apply(y);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);

  // adjoint identity: <pool(x), u> == <x, pool^T(u)> with pool^T from the tape
  for (int trial = 0; trial < 10; ++trial) {
    Matrix u = random_matrix(rng, static_cast<Index>(lengths.size()), d);
    Tape t;
    Var xv = t.input(x, true);
    Var pooled = mean_pool_rows(t, xv, lengths);
    t.backward(pooled, u);
    const Matrix adj = t.gradient(xv);
    const double lhs2 = (t.value(pooled).cwiseProduct(u)).sum();
    const double rhs2 = (x.cwiseProduct(adj)).sum();
    CHECK(lhs2 == doctest::Approx(rhs2).epsilon(1e-12));
    // scatter-mean structure: each row of adj is u_row(k)/len_k
    Index r = 0;
    for (std::size_t k = 0; k < lengths.size(); ++k) {
      for (int i = 0; i < lengths[k]; ++i) {
        CHECK((adj.row(r + i) - u.row(static_cast<Index>(k)) / lengths[k]).cwiseAbs().maxCoeff() <
              1e-14);
      }
      r += lengths[k];
    }
  }
}

TEST_CASE("shape mismatch raises a structured error naming the primitive") {
  Tape t;
  Var a = t.input(Matrix::Zero(2, 3), false);
  Var b = t.input(Matrix::Zero(3, 3), false);
  try {
    (void)add(t, a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("3x3") != std::string::npos);
  }
  CHECK_THROWS_AS((void)matmul(t, a, a), ShapeError);
}

TEST_CASE("non-scalar backward requires a cotangent") {
  Tape t;
  Var a = t.input(Matrix::Zero(2, 2), true);
  Var y = scale(t, a, 2.0);
  CHECK_THROWS_AS(t.backward(y), ShapeError);
  CHECK_NOTHROW(t.backward(y, Matrix::Ones(2, 2)));
  CHECK(t.gradient(a)(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("finite_difference_check reports the offending parameter on non-finite loss") {
  Matrix x(1, 1);
  x << 2.0;
  const auto f = [](Tape& t, const std::vector<Var>& p) {
    // log of (3 - x): finite at x=2, NaN when x+eps pushes past 3 is not
    // reachable with eps=1e-5, so force NaN through division instead
    Var d = add_scalar(t, p[0], -2.0);  // zero at the base point
    Var inv = mul(t, d, d);
    return sum_all(t, inv);
  };
  // base point is finite; a genuinely non-finite base loss must throw
  Matrix bad(1, 1);
  bad << std::numeric_limits<double>::quiet_NaN();
  const auto g = [](Tape& t, const std::vector<Var>& p) { return sum_all(t, p[0]); };
  CHECK_THROWS_AS(finite_difference_check(g, {bad}, {"w"}, 1e-5), NumericError);
  CHECK_NOTHROW(finite_difference_check(f, {x}, {"w"}, 1e-5));
}
