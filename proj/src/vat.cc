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

#include "viraal/vat.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace viraal {

void VatConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("VatConfig: epsilon must be > 0");
  if (!(xi > 0.0)) throw std::invalid_argument("VatConfig: xi must be > 0");
}

nlohmann::json VatConfig::to_json() const {
  return {{"epsilon", epsilon},
          {"xi", xi},
          {"normalize_embeddings", normalize_embeddings},
          {"joint_norm_mode", joint_norm_mode == JointNormMode::kRawGradient
                                  ? "raw-grad"
                                  : "normalize-then-average"},
          {"descent_sign", descent_sign}};
}

VatConfig VatConfig::from_json(const nlohmann::json& j) {
  VatConfig c;
  c.epsilon = j.value("epsilon", c.epsilon);
  c.xi = j.value("xi", c.xi);
  c.normalize_embeddings = j.value("normalize_embeddings", c.normalize_embeddings);
  const auto mode = j.value("joint_norm_mode", std::string("raw-grad"));
  if (mode == "raw-grad") {
    c.joint_norm_mode = JointNormMode::kRawGradient;
  } else if (mode == "normalize-then-average") {
    c.joint_norm_mode = JointNormMode::kNormalizeThenAverage;
  } else {
    throw std::invalid_argument("unknown joint_norm_mode: " + mode);
  }
  c.descent_sign = j.value("descent_sign", c.descent_sign);
  c.validate();
  return c;
}

std::string_view heads_name(VatHeads heads) {
  switch (heads) {
    case VatHeads::kIntent: return "int";
    case VatHeads::kSlot: return "slot";
    case VatHeads::kJoint: return "joint";
  }
  return "joint";
}

VatHeads parse_heads(std::string_view name) {
  if (name == "int") return VatHeads::kIntent;
  if (name == "slot") return VatHeads::kSlot;
  if (name == "joint") return VatHeads::kJoint;
  throw std::invalid_argument("unknown heads: " + std::string(name));
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: dimension mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * (std::log(p[i]) - std::log(std::max(q[i], 1e-12)));
  }
  return std::max(kl, 0.0);
}

VatAnchor anchor_pass(const ModelParams& anchor, const Batch& batch) {
  ad::Tape tape(false);
  ForwardOptions opts;
  opts.conditioning = SlotConditioning::kGreedy;
  auto result = forward(tape, anchor, batch, opts);
  VatAnchor a;
  a.intent_logp = tape.value(result.intent_logp);
  for (auto v : result.slot_logp) a.slot_logp.push_back(tape.value(v));
  a.tags = std::move(result.argmax_tags);
  return a;
}

Divergences divergences(ad::Tape& tape, const ModelParams& model, const Batch& batch,
                        const VatAnchor& anchor, const Perturbation& r, bool perturbation_grad,
                        bool train_params) {
  ForwardOptions opts;
  opts.conditioning = SlotConditioning::kFixedTags;
  opts.fixed_tags = &anchor.tags;
  opts.perturbation = &r;
  opts.perturbation_grad = perturbation_grad;
  opts.train_params = train_params;
  Divergences d;
  d.forward = forward(tape, model, batch, opts);

  const std::size_t B = batch.size();
  const std::vector<double> w_int(B, 1.0 / static_cast<double>(B));
  d.intent = tape.weighted_kl(anchor.intent_logp, d.forward.intent_logp, w_int);

  const double n_tokens = static_cast<double>(batch.token_count());
  ad::Var slot_sum;
  for (int t = 0; t < batch.max_length(); ++t) {
    std::vector<double> w(B);
    for (std::size_t b = 0; b < B; ++b) {
      w[b] = batch.mask(static_cast<Eigen::Index>(b), t) / n_tokens;
    }
    ad::Var term = tape.weighted_kl(anchor.slot_logp[static_cast<std::size_t>(t)],
                                    d.forward.slot_logp[static_cast<std::size_t>(t)], w);
    slot_sum = slot_sum.valid() ? tape.add(slot_sum, term) : term;
  }
  d.slot = slot_sum;
  return d;
}

double d_int(const Batch& batch, const Perturbation& r, const ModelParams& anchor,
             const ModelParams& model) {
  const VatAnchor a = anchor_pass(anchor, batch);
  ad::Tape tape(false);
  const auto d = divergences(tape, model, batch, a, r, false, false);
  return tape.value(d.intent)(0, 0);
}

double d_slot(const Batch& batch, const Perturbation& r, const ModelParams& anchor,
              const ModelParams& model) {
  const VatAnchor a = anchor_pass(anchor, batch);
  ad::Tape tape(false);
  const auto d = divergences(tape, model, batch, a, r, false, false);
  return tape.value(d.slot)(0, 0);
}

Perturbation finalize_direction(const std::vector<Matrix>& gradient, const Matrix& mask,
                                double epsilon, bool descent_sign) {
  Perturbation r;
  r.epsilon = epsilon;
  r.steps = gradient;
  if (gradient.empty()) return r;
  const Eigen::Index B = gradient.front().rows();
  for (std::size_t t = 0; t < r.steps.size(); ++t) {
    for (Eigen::Index b = 0; b < B; ++b) {
      if (mask(b, static_cast<Eigen::Index>(t)) == 0.0) r.steps[t].row(b).setZero();
    }
  }
  for (Eigen::Index b = 0; b < B; ++b) {
    const double norm = r.example_norm(static_cast<std::size_t>(b));
    const double factor = norm > 0.0 ? (descent_sign ? -epsilon : epsilon) / norm : 0.0;
    for (auto& step : r.steps) step.row(b) *= factor;
  }
  return r;
}

Perturbation joint_from_gradients(const std::vector<Matrix>& g_int,
                                  const std::vector<Matrix>& g_slot, const Matrix& mask,
                                  const VatConfig& config) {
  if (g_int.size() != g_slot.size()) throw std::invalid_argument("joint_from_gradients: length");
  Perturbation r;
  if (config.joint_norm_mode == JointNormMode::kRawGradient) {
    std::vector<Matrix> g(g_int.size());
    for (std::size_t t = 0; t < g.size(); ++t) g[t] = 0.5 * (g_int[t] + g_slot[t]);
    r = finalize_direction(g, mask, config.epsilon, config.descent_sign);
  } else {
    const auto r_int = finalize_direction(g_int, mask, config.epsilon, config.descent_sign);
    const auto r_slot = finalize_direction(g_slot, mask, config.epsilon, config.descent_sign);
    std::vector<Matrix> avg(g_int.size());
    for (std::size_t t = 0; t < avg.size(); ++t) avg[t] = 0.5 * (r_int.steps[t] + r_slot.steps[t]);
    // Averaging already carries the sign; re-normalize without flipping again.
    r = finalize_direction(avg, mask, config.epsilon, false);
  }
  r.kind = PerturbationKind::kJoint;
  return r;
}

Perturbation random_start(const Batch& batch, int dim, double xi, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Perturbation d = Perturbation::zeros(batch.size(), batch.max_length(), dim);
  for (std::size_t t = 0; t < d.steps.size(); ++t) {
    for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(batch.size()); ++b) {
      if (batch.mask(b, static_cast<Eigen::Index>(t)) == 0.0) continue;
      for (Eigen::Index c = 0; c < dim; ++c) d.steps[t](b, c) = gauss(rng);
    }
  }
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const double norm = d.example_norm(b);
    if (norm == 0.0) continue;
    for (auto& step : d.steps) step.row(static_cast<Eigen::Index>(b)) *= xi / norm;
  }
  d.epsilon = xi;
  return d;
}

std::vector<Matrix> perturbation_gradient(const Batch& batch, const ModelParams& anchor_params,
                                          const VatAnchor& anchor, const Perturbation& start,
                                          VatHeads heads, bool track_params) {
  ad::Tape tape(true);
  const auto d = divergences(tape, anchor_params, batch, anchor, start, true, track_params);
  ad::Var objective;
  switch (heads) {
    case VatHeads::kIntent: objective = d.intent; break;
    case VatHeads::kSlot: objective = d.slot; break;
    case VatHeads::kJoint: objective = tape.scale(tape.add(d.intent, d.slot), 0.5); break;
  }
  tape.backward(objective);
  std::vector<Matrix> g;
  g.reserve(d.forward.perturbation_leaves.size());
  for (auto leaf : d.forward.perturbation_leaves) g.push_back(tape.grad(leaf));
  return g;
}

Perturbation compute_r_vadv(const Batch& batch, const ModelParams& anchor_params,
                            const VatConfig& config, VatHeads heads, std::mt19937_64& rng,
                            const VatAnchor* anchor, bool track_params) {
  config.validate();
  if (batch.size() == 0) throw std::invalid_argument("compute_r_vadv: empty batch");
  VatAnchor local;
  if (!anchor) {
    local = anchor_pass(anchor_params, batch);
    anchor = &local;
  }
  const Perturbation start = random_start(batch, anchor_params.dims().word_dim, config.xi, rng);
  Perturbation r;
  if (heads == VatHeads::kJoint && config.joint_norm_mode == JointNormMode::kNormalizeThenAverage) {
    const auto g_int = perturbation_gradient(batch, anchor_params, *anchor, start,
                                             VatHeads::kIntent, track_params);
    const auto g_slot = perturbation_gradient(batch, anchor_params, *anchor, start,
                                              VatHeads::kSlot, track_params);
    r = joint_from_gradients(g_int, g_slot, batch.mask, config);
  } else {
    const auto g = perturbation_gradient(batch, anchor_params, *anchor, start, heads, track_params);
    r = finalize_direction(g, batch.mask, config.epsilon, config.descent_sign);
  }
  r.kind = heads == VatHeads::kIntent ? PerturbationKind::kIntent
           : heads == VatHeads::kSlot ? PerturbationKind::kSlot
                                      : PerturbationKind::kJoint;
  return r;
}

ad::Var vat_loss(ad::Tape& tape, const ModelParams& model, const Batch& batch,
                 const VatAnchor& anchor, const Perturbation& r, VatHeads heads,
                 bool train_params) {
  const auto d = divergences(tape, model, batch, anchor, r, false, train_params);
  ad::Var loss;
  switch (heads) {
    case VatHeads::kIntent: loss = d.intent; break;
    case VatHeads::kSlot: loss = d.slot; break;
    case VatHeads::kJoint: loss = tape.scale(tape.add(d.intent, d.slot), 0.5); break;
  }
  const double value = tape.value(loss)(0, 0);
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "vat_loss is not finite (" << value << ") for batch ids [";
    for (std::size_t b = 0; b < batch.size(); ++b) msg << (b ? "," : "") << batch.ids[b];
    msg << "]";
    throw NumericalError(msg.str());
  }
  return loss;
}

double vat_loss_value(const Batch& batch, const ModelParams& anchor_params,
                      const ModelParams& model, const VatConfig& config, VatHeads heads,
                      std::mt19937_64& rng) {
  const VatAnchor anchor = anchor_pass(anchor_params, batch);
  const Perturbation r = compute_r_vadv(batch, anchor_params, config, heads, rng, &anchor);
  ad::Tape tape(false);
  return tape.value(vat_loss(tape, model, batch, anchor, r, heads, false))(0, 0);
}

}  // namespace viraal
