#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "cvs/error.hpp"
#include "cvs/gradcheck_suite.hpp"
#include "cvs/grad_check.hpp"
#include "cvs/ops.hpp"
#include "cvs/serialize.hpp"
#include "oracles.hpp"

using namespace cvs;

TEST_SUITE("tensor") {

TEST_CASE("matmul matches the triple loop") {
  Rng rng(11);
  for (auto [m, n, p] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 2}, {7, 4, 9}}) {
    const Tensor a = Tensor::randn({m, n}, rng), b = Tensor::randn({n, p}, rng);
    CHECK(max_abs_diff(matmul(a, b), oracle::matmul(a, b)) < 1e-13);
    CHECK(max_abs_diff(matmul_nt(a, transpose(b)), oracle::matmul(a, b)) < 1e-13);
    CHECK(max_abs_diff(matmul_tn(transpose(a), b), oracle::matmul(a, b)) < 1e-13);
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
}

TEST_CASE("2x2 product by hand") {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor b = Tensor::matrix({{5, 6}, {7, 8}});
  CHECK(matmul(a, b) == Tensor::matrix({{19, 22}, {43, 50}}));
}

TEST_CASE("softmax slices sum to one on every axis") {
  Rng rng(3);
  const Tensor x = Tensor::randn({3, 4, 5}, rng, 4.0);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const Tensor y = softmax(x, axis);
    const auto& s = x.shape();
    for (std::size_t i = 0; i < s[0]; ++i)
      for (std::size_t j = 0; j < s[1]; ++j)
        for (std::size_t k = 0; k < s[2]; ++k) {
          std::size_t idx[3] = {i, j, k};
          if (idx[axis] != 0) continue;
          double sum = 0.0;
          for (std::size_t t = 0; t < s[axis]; ++t) {
            idx[axis] = t;
            sum += y.at({idx[0], idx[1], idx[2]});
          }
          CHECK(std::abs(sum - 1.0) < 1e-12);
        }
  }
}

TEST_CASE("softmax survives large logits") {
  const Tensor y = softmax(Tensor::matrix({{1000, 1000, -1000}}), 1);
  CHECK(y.all_finite());
  CHECK(y[0] == doctest::Approx(0.5));
}

TEST_CASE("cross entropy of uniform logits is ln C") {
  for (int c : {2, 4, 12}) {
    const Tensor logits({5, std::size_t(c)}, 0.37);
    const std::vector<int> labels{0, 1, 1, 0, c - 1};
    CHECK(std::abs(cross_entropy(logits, labels).loss - std::log(double(c))) < 1e-12);
  }
}

TEST_CASE("cross entropy skips ignored rows") {
  const Tensor logits = Tensor::matrix({{2, 0}, {0, 2}, {50, -50}});
  const std::vector<int> labels{0, 1, 255};
  const CrossEntropy ce = cross_entropy(logits, labels, 255);
  CHECK(ce.counted == 2);
  CHECK(ce.loss == doctest::Approx(std::log(1.0 + std::exp(-2.0))));
  CHECK(ce.grad.at({2, 0}) == 0.0);
  CHECK(ce.grad.at({2, 1}) == 0.0);
}

TEST_CASE("cross entropy errors") {
  const Tensor logits({2, 3});
  CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{255, 255}, 255), DegenerateError);
  CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{0, 3}), ParameterError);
}

TEST_CASE("forward ops are bit-reproducible") {
  Rng rng(5);
  const Tensor a = Tensor::randn({17, 13}, rng), b = Tensor::randn({13, 11}, rng);
  CHECK(bit_equal(matmul(a, b), matmul(a, b)));
  CHECK(bit_equal(softmax(a, 1), softmax(a, 1)));
}

TEST_CASE("rng streams are reproducible") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a() == b());
  Rng c(7), d(7);
  CHECK(Tensor::randn({8}, c) == Tensor::randn({8}, d));
}

TEST_CASE("grad slot") {
  Tensor t({2, 2});
  CHECK_FALSE(t.has_grad());
  t.grad()[3] = 1.5;
  CHECK(t.grad_tensor().at({1, 1}) == 1.5);
  t.zero_grad();
  CHECK(t.grad()[3] == 0.0);
  CHECK_THROWS_AS(t.reshaped({3}), DimensionError);
}

TEST_CASE("grad_check accepts a correct backward and rejects a wrong one") {
  DifferentiableOp square{"square",
                          [](std::span<const Tensor> in) {
                            Tensor y = in[0];
                            for (std::size_t i = 0; i < y.size(); ++i) y[i] *= y[i];
                            return y;
                          },
                          [](std::span<Tensor> in, const Tensor& g) {
                            auto gx = in[0].grad();
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * in[0][i] * g[i];
                          }};
  Rng rng(9);
  const Tensor x = Tensor::randn({3, 4}, rng);
  CHECK(grad_check(square, {x}, 1e-5, 1e-4).pass);

  DifferentiableOp wrong = square;
  wrong.backward = [](std::span<Tensor> in, const Tensor& g) {
    auto gx = in[0].grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 1.9 * in[0][i] * g[i];
  };
  const GradCheckReport r = grad_check(wrong, {x}, 1e-5, 1e-4);
  CHECK_FALSE(r.pass);
  CHECK(r.max_relative_error > 1e-2);
}

TEST_CASE("grad_check refuses a nondeterministic forward") {
  auto counter = std::make_shared<int>(0);
  DifferentiableOp drift{"drift",
                         [counter](std::span<const Tensor> in) {
                           Tensor y = in[0];
                           y[0] += 1e-3 * ++*counter;
                           return y;
                         },
                         [](std::span<Tensor>, const Tensor&) {}};
  CHECK_THROWS_AS(grad_check(drift, {Tensor({2}, 1.0)}, 1e-5, 1e-4), DeterminismError);
}

TEST_CASE("finite-difference suite for tensor ops") {
  for (const auto& r : run_gradcheck_suite("tensor", 7)) {
    INFO(format_report(r));
    CHECK(r.pass);
  }
}

TEST_CASE("CVST round trip is exact") {
  Rng rng(1);
  Tensor t = Tensor::randn({2, 3, 4}, rng);
  t[0] = -0.0;
  t[1] = std::numbers::pi;
  std::stringstream ss;
  write_tensor(ss, t);
  CHECK(ss.str().substr(0, 4) == "CVST");
  CHECK(ss.str().size() == 4 + 4 + 3 * 8 + t.size() * 8);
  CHECK(bit_equal(read_tensor(ss), t));
}

TEST_CASE("CVST rejects corrupt input") {
  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(read_tensor(bad), IoError);
  std::stringstream full;
  write_tensor(full, Tensor({4}, 1.0));
  std::stringstream truncated(full.str().substr(0, full.str().size() - 3));
  CHECK_THROWS_AS(read_tensor(truncated), IoError);
  CHECK_THROWS_AS(load_tensor("/nonexistent/x.cvst"), IoError);
}

}
