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

#ifndef VIRAAL_VAT_HPP_
#define VIRAAL_VAT_HPP_

// Virtual adversarial training for the joint intent/slot model.
//
// The anchor parameters (a frozen snapshot) produce the clean posteriors and
// the greedy slot tags; both the clean and the perturbed passes condition the
// slot decoder on those tags. Divergences:
//
//   D_int  = 1/B sum_b KL(p_int(x_b; anchor) || p_int(x_b + r_b; model))
//   D_slot = 1/N sum_b sum_t KL(p_slot(x_b)_t || p_slot(x_b + r_b)_t),
//            N = real tokens in the batch
//
// The adversarial direction comes from one power-iteration step started at
// xi * (random unit direction per example), then rescaled to norm epsilon per
// example. The joint perturbation uses the gradient of (D_int + D_slot) / 2.

#include <random>
#include <span>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "viraal/autodiff.hpp"
#include "viraal/model.hpp"

namespace viraal {

enum class VatHeads { kIntent, kSlot, kJoint };

enum class JointNormMode {
  kRawGradient,            // normalize the gradient of (D_int + D_slot) / 2
  kNormalizeThenAverage,   // normalize r_int and r_slot, average, re-normalize
};

struct VatConfig {
  double epsilon = 5.0;
  double xi = 1e-2;
  bool normalize_embeddings = true;
  JointNormMode joint_norm_mode = JointNormMode::kRawGradient;
  /// Use r = -eps g / |g| instead of the ascent direction +eps g / |g|.
  bool descent_sign = false;

  void validate() const;
  nlohmann::json to_json() const;
  static VatConfig from_json(const nlohmann::json& j);
};

std::string_view heads_name(VatHeads heads);
VatHeads parse_heads(std::string_view name);

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// sum_i p_i log(p_i / q_i) with q clamped at 1e-12 and 0 log 0 = 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Clean pass under the anchor parameters.
struct VatAnchor {
  Matrix intent_logp;
  std::vector<Matrix> slot_logp;
  std::vector<std::vector<int>> tags;  // greedy tags used to condition both passes
};

VatAnchor anchor_pass(const ModelParams& anchor, const Batch& batch);

struct Divergences {
  ad::Var intent;
  ad::Var slot;
  ForwardResult forward;
};

/// Records the perturbed pass under `model` and both divergences on `tape`.
Divergences divergences(ad::Tape& tape, const ModelParams& model, const Batch& batch,
                        const VatAnchor& anchor, const Perturbation& r, bool perturbation_grad,
                        bool train_params);

double d_int(const Batch& batch, const Perturbation& r, const ModelParams& anchor,
             const ModelParams& model);
double d_slot(const Batch& batch, const Perturbation& r, const ModelParams& anchor,
              const ModelParams& model);

/// Per-example rescaling to norm `epsilon` (sign applied); zero rows stay zero.
Perturbation finalize_direction(const std::vector<Matrix>& gradient, const Matrix& mask,
                                double epsilon, bool descent_sign);

/// Joint perturbation from per-head gradients under the configured mode.
Perturbation joint_from_gradients(const std::vector<Matrix>& g_int,
                                  const std::vector<Matrix>& g_slot, const Matrix& mask,
                                  const VatConfig& config);

/// xi-scaled random unit direction per example, zero at masked positions.
Perturbation random_start(const Batch& batch, int dim, double xi, std::mt19937_64& rng);

/// Gradient of the requested divergence with respect to the start point.
std::vector<Matrix> perturbation_gradient(const Batch& batch, const ModelParams& anchor_params,
                                          const VatAnchor& anchor, const Perturbation& start,
                                          VatHeads heads, bool track_params = false);

/// Approximate worst-case perturbation. Detached: it never contributes
/// parameter gradients.
Perturbation compute_r_vadv(const Batch& batch, const ModelParams& anchor_params,
                            const VatConfig& config, VatHeads heads, std::mt19937_64& rng,
                            const VatAnchor* anchor = nullptr, bool track_params = false);

/// Divergence for `heads` at x + r under `model` ((D_int + D_slot) / 2 for joint).
ad::Var vat_loss(ad::Tape& tape, const ModelParams& model, const Batch& batch,
                 const VatAnchor& anchor, const Perturbation& r, VatHeads heads,
                 bool train_params = true);

/// compute_r_vadv followed by the divergence at x + r, as a plain value.
double vat_loss_value(const Batch& batch, const ModelParams& anchor_params,
                      const ModelParams& model, const VatConfig& config, VatHeads heads,
                      std::mt19937_64& rng);

}  // namespace viraal

#endif  // VIRAAL_VAT_HPP_
