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

#ifndef VIRAAL_AUTODIFF_HPP_
#define VIRAAL_AUTODIFF_HPP_

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records every operation applied to its Vars. Values are computed
// eagerly; backward() walks the tape in reverse and accumulates gradients into
// every node that (transitively) depends on a differentiable leaf. A tape
// built with recording disabled only computes values, which is how inference
// passes run; both modes execute the same arithmetic, so values match bitwise.

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace viraal {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using Vector = Eigen::VectorXd;

namespace ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only meaningful for its tape.
class Var {
 public:
  Var() = default;
  bool valid() const { return id_ >= 0; }
  int id() const { return id_; }

 private:
  friend class Tape;
  explicit Var(int id) : id_(id) {}
  int id_ = -1;
};

class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  // Leaves.
  Var constant(Matrix value);
  /// Differentiable input that is not a model parameter (e.g. a perturbation).
  Var leaf(Matrix value);
  /// Trainable parameter. Gradients are reported per `slot` by param_grad().
  /// When `trainable` is false the value participates as a constant.
  Var param(std::size_t slot, const Matrix& value, bool trainable);
  /// Row gather from a parameter table (embedding lookup). Rows whose id is
  /// negative produce zeros. Gradients scatter into param_grad(slot).
  Var gather_rows(std::size_t slot, const Matrix& table, std::span<const int> ids,
                  bool trainable);

  const Matrix& value(Var v) const { return nodes_[v.id_].value; }
  /// Gradient of the last backward() target with respect to `v`. Zero-filled
  /// when nothing flowed into it.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }

  void backward(Var scalar);

  /// Accumulated gradient for a parameter slot, or nullptr if none flowed.
  const Matrix* param_grad(std::size_t slot) const;
  const std::map<std::size_t, Matrix>& param_grads() const { return param_grads_; }

  // Arithmetic.
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  /// a (n x m) + row (1 x m) broadcast over rows.
  Var add_row(Var a, Var row);
  Var mul(Var a, Var b);
  Var mul_const(Var a, const Matrix& c);
  Var scale(Var a, double s);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var concat_cols(std::span<const Var> parts);
  Var slice_cols(Var a, int start, int count);
  /// Row-wise select: mask(b) * a + (1 - mask(b)) * b, mask entries in {0, 1}.
  Var blend(const Vector& mask, Var a, Var b);

  /// Fused LSTM cell. `gates` is B x 4H ordered (input, forget, cell, output);
  /// returns [h | c] as B x 2H.
  Var lstm_cell(Var gates, Var c_prev);

  /// Additive attention scores: out(:, j) = tanh(keys[j] + query) * v.
  /// keys[j], query: B x A; v: A x 1; result B x T.
  Var additive_scores(std::span<const Var> keys, Var query, Var v);
  /// Softmax over each row restricted to mask(b, j) != 0; masked entries are 0.
  Var masked_softmax_rows(Var scores, const Matrix& mask);
  /// sum_j weights(:, j) .* values[j]; weights B x T, values[j] B x D.
  Var weighted_sum(Var weights, std::span<const Var> values);
  Var log_softmax_rows(Var a);

  // Scalar reductions.
  Var sum(Var a);
  /// -sum_b weight[b] * logp(b, target[b]); rows with negative target skipped.
  Var weighted_nll(Var logp, std::span<const int> target, std::span<const double> weight);
  /// sum_b weight[b] * sum_c p(b,c) (logp(b,c) - logq(b,c)) with p = exp(logp)
  /// held constant and 0 log 0 = 0.
  Var weighted_kl(const Matrix& logp, Var logq, std::span<const double> weight);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(Tape&, const Node&)> backward;
  };

  Var push(Matrix value, bool requires_grad,
           std::function<void(Tape&, const Node&)> backward = nullptr);
  bool needs(Var v) const { return nodes_[v.id_].requires_grad; }
  void accumulate(Var v, const Matrix& g);
  template <class Expr>
  void accumulate_expr(Var v, const Expr& g);
  Matrix& scatter_target(std::size_t slot, Eigen::Index rows, Eigen::Index cols);

  bool record_;
  std::vector<Node> nodes_;
  std::map<std::size_t, Matrix> param_grads_;
  std::vector<std::pair<int, std::size_t>> param_nodes_;
};

}  // namespace ad
}  // namespace viraal

#endif  // VIRAAL_AUTODIFF_HPP_
