/* Copyright 2026 The VirAAL Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <random>

#include <gtest/gtest.h>

#include "support/gradcheck.hpp"
#include "viraal/autodiff.hpp"

namespace viraal {
namespace {

using testing::numeric_gradient;
using testing::relative_error;

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Checks d/dx sum(W .* op(x...)) for every input against central differences.
void check_op(std::vector<Matrix> inputs,
              const std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>& op,
              double tol = 1e-7) {
  std::mt19937_64 rng(7);
  Matrix weights;
  auto evaluate = [&](bool record, std::vector<Matrix>* grads) {
    ad::Tape tape(record);
    std::vector<ad::Var> vars;
    for (const auto& m : inputs) vars.push_back(tape.leaf(m));
    ad::Var out = op(tape, vars);
    if (weights.size() == 0) weights = random_matrix(tape.value(out).rows(), tape.value(out).cols(), rng);
    ad::Var loss = tape.sum(tape.mul_const(out, weights));
    if (grads) {
      tape.backward(loss);
      for (auto v : vars) grads->push_back(tape.grad(v));
    }
    return tape.value(loss)(0, 0);
  };
  std::vector<Matrix> analytic;
  evaluate(true, &analytic);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto numeric = numeric_gradient(inputs[k], [&] { return evaluate(false, nullptr); });
    std::vector<double> a;
    testing::append(a, analytic[k]);
    EXPECT_LT(relative_error(a, numeric), tol) << "input " << k;
  }
}

TEST(Autodiff, ElementwiseOps) {
  std::mt19937_64 rng(1);
  const Matrix a = random_matrix(3, 4, rng), b = random_matrix(3, 4, rng);
  check_op({a, b}, [](ad::Tape& t, auto& v) { return t.add(v[0], v[1]); });
  check_op({a, b}, [](ad::Tape& t, auto& v) { return t.sub(v[0], v[1]); });
  check_op({a, b}, [](ad::Tape& t, auto& v) { return t.mul(v[0], v[1]); });
  check_op({a}, [](ad::Tape& t, auto& v) { return t.tanh(v[0]); });
  check_op({a}, [](ad::Tape& t, auto& v) { return t.sigmoid(v[0]); });
  check_op({a}, [](ad::Tape& t, auto& v) { return t.scale(v[0], -2.5); });
  check_op({a, random_matrix(1, 4, rng)}, [](ad::Tape& t, auto& v) { return t.add_row(v[0], v[1]); });
}

TEST(Autodiff, MatmulConcatSlice) {
  std::mt19937_64 rng(2);
  check_op({random_matrix(3, 4, rng), random_matrix(4, 2, rng)},
           [](ad::Tape& t, auto& v) { return t.matmul(v[0], v[1]); });
  check_op({random_matrix(3, 2, rng), random_matrix(3, 3, rng)}, [](ad::Tape& t, auto& v) {
    return t.concat_cols(std::span<const ad::Var>(v.data(), 2));
  });
  check_op({random_matrix(3, 5, rng)}, [](ad::Tape& t, auto& v) { return t.slice_cols(v[0], 1, 3); });
}

TEST(Autodiff, BlendSelectsRows) {
  std::mt19937_64 rng(3);
  Vector mask(3);
  mask << 1, 0, 1;
  check_op({random_matrix(3, 2, rng), random_matrix(3, 2, rng)},
           [&](ad::Tape& t, auto& v) { return t.blend(mask, v[0], v[1]); });
  ad::Tape tape;
  const Matrix a = Matrix::Ones(3, 2), b = Matrix::Zero(3, 2);
  const Matrix out = tape.value(tape.blend(mask, tape.constant(a), tape.constant(b)));
  EXPECT_EQ(out.row(0).sum(), 2.0);
  EXPECT_EQ(out.row(1).sum(), 0.0);
}

TEST(Autodiff, LstmCell) {
  std::mt19937_64 rng(4);
  check_op({random_matrix(2, 12, rng), random_matrix(2, 3, rng)},
           [](ad::Tape& t, auto& v) { return t.lstm_cell(v[0], v[1]); });
}

TEST(Autodiff, LstmCellMatchesDefinition) {
  std::mt19937_64 rng(5);
  const Matrix z = random_matrix(1, 8, rng), c0 = random_matrix(1, 2, rng);
  ad::Tape tape(false);
  const Matrix hc = tape.value(tape.lstm_cell(tape.constant(z), tape.constant(c0)));
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  for (int k = 0; k < 2; ++k) {
    const double i = sig(z(0, k)), f = sig(z(0, 2 + k)), g = std::tanh(z(0, 4 + k)), o = sig(z(0, 6 + k));
    const double c = f * c0(0, k) + i * g;
    EXPECT_NEAR(hc(0, 2 + k), c, 1e-14);
    EXPECT_NEAR(hc(0, k), o * std::tanh(c), 1e-14);
  }
}

TEST(Autodiff, AttentionOps) {
  std::mt19937_64 rng(6);
  Matrix mask(2, 3);
  mask << 1, 1, 1, 1, 1, 0;
  check_op({random_matrix(2, 4, rng), random_matrix(2, 4, rng), random_matrix(2, 4, rng),
            random_matrix(2, 4, rng), random_matrix(4, 1, rng)},
           [](ad::Tape& t, auto& v) {
             std::vector<ad::Var> keys = {v[0], v[1], v[2]};
             return t.additive_scores(keys, v[3], v[4]);
           });
  check_op({random_matrix(2, 3, rng)},
           [&](ad::Tape& t, auto& v) { return t.masked_softmax_rows(v[0], mask); });
  check_op({random_matrix(2, 3, rng), random_matrix(2, 2, rng), random_matrix(2, 2, rng),
            random_matrix(2, 2, rng)},
           [](ad::Tape& t, auto& v) {
             std::vector<ad::Var> values = {v[1], v[2], v[3]};
             return t.weighted_sum(v[0], values);
           });
}

TEST(Autodiff, MaskedSoftmaxIgnoresMaskedScores) {
  Matrix mask(1, 3);
  mask << 1, 1, 0;
  Matrix s(1, 3);
  s << 0.3, -1.0, 1e6;
  ad::Tape tape(false);
  const Matrix p = tape.value(tape.masked_softmax_rows(tape.constant(s), mask));
  EXPECT_EQ(p(0, 2), 0.0);
  EXPECT_NEAR(p(0, 0) + p(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(p(0, 0) / p(0, 1), std::exp(1.3), 1e-12);
}

TEST(Autodiff, LogSoftmaxAndLosses) {
  std::mt19937_64 rng(8);
  check_op({random_matrix(3, 4, rng)}, [](ad::Tape& t, auto& v) { return t.log_softmax_rows(v[0]); });
  const std::vector<int> target = {2, -1, 0};
  const std::vector<double> w = {0.5, 1.0, 0.25};
  check_op({random_matrix(3, 4, rng)}, [&](ad::Tape& t, auto& v) {
    return t.weighted_nll(t.log_softmax_rows(v[0]), target, w);
  });
  Matrix logp = random_matrix(3, 4, rng);
  for (Eigen::Index r = 0; r < 3; ++r) {
    logp.row(r).array() -= std::log(logp.row(r).array().exp().sum());
  }
  check_op({random_matrix(3, 4, rng)}, [&](ad::Tape& t, auto& v) {
    return t.weighted_kl(logp, t.log_softmax_rows(v[0]), w);
  });
}

TEST(Autodiff, LogSoftmaxIsStableForLargeLogits) {
  Matrix x(1, 3);
  x << 1000.0, 999.0, -1000.0;
  ad::Tape tape(false);
  const Matrix lp = tape.value(tape.log_softmax_rows(tape.constant(x)));
  EXPECT_TRUE(lp.allFinite());
  EXPECT_NEAR(lp.array().exp().sum(), 1.0, 1e-12);
}

TEST(Autodiff, ParamAndGatherAccumulateBySlot) {
  Matrix table(4, 2);
  table << 0, 0, 1, 2, 3, 4, 5, 6;
  ad::Tape tape;
  const std::vector<int> ids = {1, 3, 1, -1};
  ad::Var rows = tape.gather_rows(0, table, ids, true);
  EXPECT_EQ(tape.value(rows).row(3).squaredNorm(), 0.0);
  ad::Var again = tape.gather_rows(0, table, std::vector<int>{2}, true);
  ad::Var loss = tape.add(tape.sum(rows), tape.sum(again));
  tape.backward(loss);
  const Matrix* g = tape.param_grad(0);
  ASSERT_NE(g, nullptr);
  EXPECT_EQ((*g)(0, 0), 0.0);
  EXPECT_EQ((*g)(1, 0), 2.0);
  EXPECT_EQ((*g)(2, 1), 1.0);
  EXPECT_EQ((*g)(3, 1), 1.0);
}

TEST(Autodiff, FrozenParamsGetNoGradient) {
  ad::Tape tape;
  ad::Var w = tape.param(3, Matrix::Ones(2, 2), false);
  ad::Var x = tape.leaf(Matrix::Ones(1, 2));
  tape.backward(tape.sum(tape.matmul(x, w)));
  EXPECT_EQ(tape.param_grad(3), nullptr);
  EXPECT_FALSE(tape.requires_grad(w));
  EXPECT_EQ(tape.grad(x)(0, 0), 2.0);
}

TEST(Autodiff, NonRecordingTapeMatchesBitwise) {
  std::mt19937_64 rng(9);
  const Matrix a = random_matrix(3, 4, rng), b = random_matrix(4, 5, rng);
  auto run = [&](bool record) {
    ad::Tape tape(record);
    ad::Var y = tape.log_softmax_rows(tape.tanh(tape.matmul(tape.leaf(a), tape.leaf(b))));
    return Matrix(tape.value(y));
  };
  EXPECT_TRUE(run(true) == run(false));
}

}  // namespace
}  // namespace viraal
