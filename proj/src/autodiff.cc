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

#include "viraal/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace viraal::ad {

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

}  // namespace

Var Tape::push(Matrix value, bool requires_grad,
               std::function<void(Tape&, const Node&)> backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = record_ && requires_grad;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id_];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

template <class Expr>
void Tape::accumulate_expr(Var v, const Expr& g) {
  Node& n = nodes_[v.id_];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Matrix& Tape::scatter_target(std::size_t slot, Eigen::Index rows, Eigen::Index cols) {
  auto it = param_grads_.find(slot);
  if (it == param_grads_.end()) {
    it = param_grads_.emplace(slot, Matrix::Zero(rows, cols)).first;
  }
  return it->second;
}

Var Tape::constant(Matrix value) { return push(std::move(value), false); }

Var Tape::leaf(Matrix value) { return push(std::move(value), true, [](Tape&, const Node&) {}); }

Var Tape::param(std::size_t slot, const Matrix& value, bool trainable) {
  Var v = push(value, trainable, [](Tape&, const Node&) {});
  if (record_ && trainable) param_nodes_.emplace_back(v.id_, slot);
  return v;
}

Var Tape::gather_rows(std::size_t slot, const Matrix& table, std::span<const int> ids,
                      bool trainable) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0) {
      out.row(static_cast<Eigen::Index>(i)).setZero();
    } else {
      if (ids[i] >= table.rows()) throw std::out_of_range("gather_rows: id out of range");
      out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
    }
  }
  std::vector<int> kept(ids.begin(), ids.end());
  const Eigen::Index rows = table.rows(), cols = table.cols();
  return push(std::move(out), trainable,
              [slot, kept = std::move(kept), rows, cols](Tape& t, const Node& self) {
                Matrix& target = t.scatter_target(slot, rows, cols);
                for (std::size_t i = 0; i < kept.size(); ++i) {
                  if (kept[i] >= 0) target.row(kept[i]) += self.grad.row(static_cast<Eigen::Index>(i));
                }
              });
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id_];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var scalar) {
  if (!record_) throw std::logic_error("backward on a non-recording tape");
  Node& root = nodes_[scalar.id_];
  if (root.value.size() != 1) throw std::invalid_argument("backward target must be scalar");
  if (!root.requires_grad) return;
  root.grad = Matrix::Ones(1, 1);
  for (int id = scalar.id_; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, n);
  }
  for (const auto& [id, slot] : param_nodes_) {
    const Node& n = nodes_[id];
    if (n.grad.size() == 0) continue;
    Matrix& target = scatter_target(slot, n.value.rows(), n.value.cols());
    target += n.grad;
  }
}

const Matrix* Tape::param_grad(std::size_t slot) const {
  auto it = param_grads_.find(slot);
  return it == param_grads_.end() ? nullptr : &it->second;
}

Var Tape::matmul(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  if (A.cols() != B.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix out = A * B;
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    if (t.needs(a)) t.accumulate_expr(a, self.grad * t.value(b).transpose());
    if (t.needs(b)) t.accumulate_expr(b, t.value(a).transpose() * self.grad);
  });
}

Var Tape::add(Var a, Var b) {
  check_same_shape(value(a), value(b), "add");
  return push(value(a) + value(b), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    t.accumulate(a, self.grad);
    t.accumulate(b, self.grad);
  });
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(value(a), value(b), "sub");
  return push(value(a) - value(b), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    t.accumulate(a, self.grad);
    t.accumulate_expr(b, -self.grad);
  });
}

Var Tape::add_row(Var a, Var row) {
  const Matrix& A = value(a);
  const Matrix& r = value(row);
  if (r.rows() != 1 || r.cols() != A.cols()) throw std::invalid_argument("add_row: bad bias shape");
  Matrix out = A.rowwise() + r.row(0);
  return push(std::move(out), needs(a) || needs(row), [a, row](Tape& t, const Node& self) {
    t.accumulate(a, self.grad);
    if (t.needs(row)) t.accumulate_expr(row, self.grad.colwise().sum());
  });
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(value(a), value(b), "mul");
  return push(value(a).cwiseProduct(value(b)), needs(a) || needs(b),
              [a, b](Tape& t, const Node& self) {
                if (t.needs(a)) t.accumulate_expr(a, self.grad.cwiseProduct(t.value(b)));
                if (t.needs(b)) t.accumulate_expr(b, self.grad.cwiseProduct(t.value(a)));
              });
}

Var Tape::mul_const(Var a, const Matrix& c) {
  check_same_shape(value(a), c, "mul_const");
  return push(value(a).cwiseProduct(c), needs(a), [a, c](Tape& t, const Node& self) {
    t.accumulate_expr(a, self.grad.cwiseProduct(c));
  });
}

Var Tape::scale(Var a, double s) {
  return push(value(a) * s, needs(a),
              [a, s](Tape& t, const Node& self) { t.accumulate_expr(a, self.grad * s); });
}

Var Tape::tanh(Var a) {
  Matrix out = value(a).array().tanh().matrix();
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    t.accumulate_expr(a, (self.grad.array() * (1.0 - self.value.array().square())).matrix());
  });
}

Var Tape::sigmoid(Var a) {
  Matrix out = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    t.accumulate_expr(
        a, (self.grad.array() * self.value.array() * (1.0 - self.value.array())).matrix());
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  bool any = false;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += value(p).cols();
    any = any || needs(p);
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (Var p : parts) {
    out.middleCols(offset, value(p).cols()) = value(p);
    offset += value(p).cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return push(std::move(out), any, [inputs = std::move(inputs)](Tape& t, const Node& self) {
    Eigen::Index off = 0;
    for (Var p : inputs) {
      const Eigen::Index c = t.value(p).cols();
      if (t.needs(p)) t.accumulate_expr(p, self.grad.middleCols(off, c));
      off += c;
    }
  });
}

Var Tape::slice_cols(Var a, int start, int count) {
  const Matrix& A = value(a);
  if (start < 0 || count < 0 || start + count > A.cols()) {
    throw std::out_of_range("slice_cols: range out of bounds");
  }
  Matrix out = A.middleCols(start, count);
  return push(std::move(out), needs(a), [a, start, count](Tape& t, const Node& self) {
    Node& n = t.nodes_[a.id_];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.grad.middleCols(start, count) += self.grad;
  });
}

Var Tape::blend(const Vector& mask, Var a, Var b) {
  check_same_shape(value(a), value(b), "blend");
  if (mask.size() != value(a).rows()) throw std::invalid_argument("blend: mask length mismatch");
  Matrix out = value(b);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (mask(i) != 0.0) out.row(i) = value(a).row(i);
  }
  return push(std::move(out), needs(a) || needs(b), [mask, a, b](Tape& t, const Node& self) {
    Matrix ga = self.grad, gb = self.grad;
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      if (mask(i) != 0.0) {
        gb.row(i).setZero();
      } else {
        ga.row(i).setZero();
      }
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

Var Tape::lstm_cell(Var gates, Var c_prev) {
  const Matrix& Z = value(gates);
  const Matrix& C0 = value(c_prev);
  const Eigen::Index H = C0.cols();
  if (Z.cols() != 4 * H || Z.rows() != C0.rows()) throw std::invalid_argument("lstm_cell: shapes");
  const auto sig = [](const auto& x) { return (1.0 / (1.0 + (-x).exp())).eval(); };
  Eigen::ArrayXXd i = sig(Z.middleCols(0, H).array());
  Eigen::ArrayXXd f = sig(Z.middleCols(H, H).array());
  Eigen::ArrayXXd g = Z.middleCols(2 * H, H).array().tanh();
  Eigen::ArrayXXd o = sig(Z.middleCols(3 * H, H).array());
  Eigen::ArrayXXd c = f * C0.array() + i * g;
  Eigen::ArrayXXd tc = c.tanh();
  Matrix out(Z.rows(), 2 * H);
  out.leftCols(H) = (o * tc).matrix();
  out.rightCols(H) = c.matrix();
  return push(std::move(out), needs(gates) || needs(c_prev),
              [gates, c_prev, H, i, f, g, o, tc](Tape& t, const Node& self) {
                const Eigen::ArrayXXd dh = self.grad.leftCols(H).array();
                const Eigen::ArrayXXd dc = self.grad.rightCols(H).array() +
                                           dh * o * (1.0 - tc.square());
                if (t.needs(gates)) {
                  const Eigen::ArrayXXd c0 = t.value(c_prev).array();
                  Matrix dz(self.value.rows(), 4 * H);
                  dz.middleCols(0, H) = (dc * g * i * (1.0 - i)).matrix();
                  dz.middleCols(H, H) = (dc * c0 * f * (1.0 - f)).matrix();
                  dz.middleCols(2 * H, H) = (dc * i * (1.0 - g.square())).matrix();
                  dz.middleCols(3 * H, H) = (dh * tc * o * (1.0 - o)).matrix();
                  t.accumulate(gates, dz);
                }
                if (t.needs(c_prev)) t.accumulate_expr(c_prev, (dc * f).matrix());
              });
}

Var Tape::additive_scores(std::span<const Var> keys, Var query, Var v) {
  const Matrix& Q = value(query);
  const Matrix& V = value(v);
  const Eigen::Index B = Q.rows();
  const Eigen::Index T = static_cast<Eigen::Index>(keys.size());
  if (V.rows() != Q.cols() || V.cols() != 1) throw std::invalid_argument("additive_scores: v shape");
  std::vector<Matrix> activations;
  activations.reserve(keys.size());
  Matrix out(B, T);
  bool any = needs(query) || needs(v);
  for (Eigen::Index j = 0; j < T; ++j) {
    check_same_shape(value(keys[j]), Q, "additive_scores");
    Matrix u = (value(keys[j]) + Q).array().tanh().matrix();
    out.col(j) = u * V;
    activations.push_back(std::move(u));
    any = any || needs(keys[j]);
  }
  std::vector<Var> key_vars(keys.begin(), keys.end());
  return push(std::move(out), any,
              [key_vars = std::move(key_vars), query, v, activations = std::move(activations)](
                  Tape& t, const Node& self) {
                const Matrix& Vv = t.value(v);
                Matrix dq = Matrix::Zero(t.value(query).rows(), t.value(query).cols());
                Matrix dv = Matrix::Zero(Vv.rows(), 1);
                for (std::size_t j = 0; j < key_vars.size(); ++j) {
                  const auto ds = self.grad.col(static_cast<Eigen::Index>(j));
                  const Matrix& u = activations[j];
                  Matrix pre = ((ds * Vv.transpose()).array() * (1.0 - u.array().square())).matrix();
                  dv.noalias() += u.transpose() * ds;
                  dq += pre;
                  t.accumulate(key_vars[j], pre);
                }
                t.accumulate(query, dq);
                t.accumulate(v, dv);
              });
}

Var Tape::masked_softmax_rows(Var scores, const Matrix& mask) {
  const Matrix& S = value(scores);
  check_same_shape(S, mask, "masked_softmax_rows");
  Matrix out = Matrix::Zero(S.rows(), S.cols());
  for (Eigen::Index b = 0; b < S.rows(); ++b) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < S.cols(); ++j) {
      if (mask(b, j) != 0.0) mx = std::max(mx, S(b, j));
    }
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (Eigen::Index j = 0; j < S.cols(); ++j) {
      if (mask(b, j) != 0.0) {
        out(b, j) = std::exp(S(b, j) - mx);
        z += out(b, j);
      }
    }
    out.row(b) /= z;
  }
  return push(std::move(out), needs(scores), [scores](Tape& t, const Node& self) {
    const Matrix& y = self.value;
    Vector dot = (self.grad.cwiseProduct(y)).rowwise().sum();
    Matrix g = (y.array() * (self.grad.colwise() - dot).array()).matrix();
    t.accumulate(scores, g);
  });
}

Var Tape::weighted_sum(Var weights, std::span<const Var> values) {
  const Matrix& W = value(weights);
  if (W.cols() != static_cast<Eigen::Index>(values.size())) {
    throw std::invalid_argument("weighted_sum: weight columns must match value count");
  }
  Matrix out = Matrix::Zero(W.rows(), value(values[0]).cols());
  bool any = needs(weights);
  for (std::size_t j = 0; j < values.size(); ++j) {
    out.array() += value(values[j]).array().colwise() * W.col(static_cast<Eigen::Index>(j)).array();
    any = any || needs(values[j]);
  }
  std::vector<Var> vals(values.begin(), values.end());
  return push(std::move(out), any, [weights, vals = std::move(vals)](Tape& t, const Node& self) {
    const Matrix& Wv = t.value(weights);
    Matrix dw(Wv.rows(), Wv.cols());
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      dw.col(jj) = self.grad.cwiseProduct(t.value(vals[j])).rowwise().sum();
      if (t.needs(vals[j])) {
        t.accumulate_expr(vals[j], (self.grad.array().colwise() * Wv.col(jj).array()).matrix());
      }
    }
    t.accumulate(weights, dw);
  });
}

Var Tape::log_softmax_rows(Var a) {
  const Matrix& A = value(a);
  Matrix out(A.rows(), A.cols());
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    const double mx = A.row(r).maxCoeff();
    const double lse = mx + std::log((A.row(r).array() - mx).exp().sum());
    out.row(r) = A.row(r).array() - lse;
  }
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    const Matrix p = self.value.array().exp().matrix();
    const Vector gsum = self.grad.rowwise().sum();
    Matrix g = self.grad - (p.array().colwise() * gsum.array()).matrix();
    t.accumulate(a, g);
  });
}

Var Tape::sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = value(a).sum();
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    const Matrix& A = t.value(a);
    t.accumulate_expr(a, Matrix::Constant(A.rows(), A.cols(), self.grad(0, 0)));
  });
}

Var Tape::weighted_nll(Var logp, std::span<const int> target, std::span<const double> weight) {
  const Matrix& L = value(logp);
  if (static_cast<Eigen::Index>(target.size()) != L.rows() || target.size() != weight.size()) {
    throw std::invalid_argument("weighted_nll: length mismatch");
  }
  double total = 0.0;
  for (Eigen::Index b = 0; b < L.rows(); ++b) {
    const int y = target[static_cast<std::size_t>(b)];
    if (y < 0) continue;
    if (y >= L.cols()) throw std::out_of_range("weighted_nll: target out of range");
    total -= weight[static_cast<std::size_t>(b)] * L(b, y);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  std::vector<int> tg(target.begin(), target.end());
  std::vector<double> w(weight.begin(), weight.end());
  return push(std::move(out), needs(logp),
              [logp, tg = std::move(tg), w = std::move(w)](Tape& t, const Node& self) {
                const Matrix& Lv = t.value(logp);
                Matrix g = Matrix::Zero(Lv.rows(), Lv.cols());
                for (std::size_t b = 0; b < tg.size(); ++b) {
                  if (tg[b] >= 0) g(static_cast<Eigen::Index>(b), tg[b]) = -w[b] * self.grad(0, 0);
                }
                t.accumulate(logp, g);
              });
}

Var Tape::weighted_kl(const Matrix& logp, Var logq, std::span<const double> weight) {
  const Matrix& Lq = value(logq);
  check_same_shape(logp, Lq, "weighted_kl");
  if (static_cast<Eigen::Index>(weight.size()) != Lq.rows()) {
    throw std::invalid_argument("weighted_kl: weight length mismatch");
  }
  Matrix p = logp.array().exp().matrix();
  double total = 0.0;
  for (Eigen::Index b = 0; b < Lq.rows(); ++b) {
    const double w = weight[static_cast<std::size_t>(b)];
    if (w == 0.0) continue;
    double kl = 0.0;
    for (Eigen::Index c = 0; c < Lq.cols(); ++c) {
      if (p(b, c) > 0.0) kl += p(b, c) * (logp(b, c) - Lq(b, c));
    }
    total += w * kl;
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  std::vector<double> w(weight.begin(), weight.end());
  return push(std::move(out), needs(logq),
              [logq, p = std::move(p), w = std::move(w)](Tape& t, const Node& self) {
                Matrix g = p;
                for (Eigen::Index b = 0; b < g.rows(); ++b) {
                  g.row(b) *= -w[static_cast<std::size_t>(b)] * self.grad(0, 0);
                }
                t.accumulate(logq, g);
              });
}

}  // namespace viraal::ad
