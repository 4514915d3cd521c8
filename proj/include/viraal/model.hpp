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

#ifndef VIRAAL_MODEL_HPP_
#define VIRAAL_MODEL_HPP_

// Attention-based recurrent network for joint intent detection and slot
// filling.
//
//   word ids -> embeddings (+ optional perturbation) -> BiLSTM encoder h_1..h_T
//   intent:  additive attention over h keyed by h_T -> [c_int ; h_T] -> softmax
//   slots:   for each t, additive attention over h keyed by the previous slot
//            embedding, then an LSTM over [h_t ; c_t ; slot_emb(s_{t-1})]
//            -> softmax over slot tags
//
// h_T concatenates the forward state at the last real token with the backward
// state at the first token. s_0 is a dedicated BOS embedding row.

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "viraal/autodiff.hpp"
#include "viraal/corpus.hpp"

namespace viraal {

struct ModelDims {
  int vocab = 0;
  int word_dim = 300;
  int hidden = 128;  // per direction
  int slot_dim = 128;
  int attention = 128;
  int intents = 0;
  int slots = 0;  // predictable tags; the slot embedding table has slots + 1 rows

  nlohmann::json to_json() const;
  static ModelDims from_json(const nlohmann::json& j);
  bool operator==(const ModelDims&) const = default;
};

ModelDims dims_for(const Vocabulary& vocab, int word_dim = 300);

enum class SlotConditioning {
  kTeacherForced,  // gold s_{t-1}
  kFixedTags,      // caller-supplied s_{t-1}
  kGreedy,         // argmax of the previous step
};

class ModelParams {
 public:
  enum Slot : std::size_t {
    kWordEmbedding,
    kSlotEmbedding,
    kEncoderForwardInput,
    kEncoderForwardRecurrent,
    kEncoderForwardBias,
    kEncoderBackwardInput,
    kEncoderBackwardRecurrent,
    kEncoderBackwardBias,
    kIntentAttentionKey,
    kIntentAttentionQuery,
    kIntentAttentionVector,
    kIntentOutput,
    kIntentBias,
    kSlotAttentionKey,
    kSlotAttentionQuery,
    kSlotAttentionVector,
    kDecoderInput,
    kDecoderRecurrent,
    kDecoderBias,
    kSlotOutput,
    kSlotBias,
    kCount
  };

  ModelParams() = default;

  /// Glorot-uniform weights, zero biases (forget gates at 1). Word embeddings
  /// come from `embeddings` when given, else N(0, 0.1^2).
  static ModelParams initialize(const ModelDims& dims, std::uint64_t seed,
                                const EmbeddingMatrix* embeddings = nullptr);

  const ModelDims& dims() const { return dims_; }
  Matrix& operator[](std::size_t slot) { return tensors_[slot]; }
  const Matrix& operator[](std::size_t slot) const { return tensors_[slot]; }
  std::span<Matrix> tensors() { return tensors_; }
  std::span<const Matrix> tensors() const { return tensors_; }

  static std::string_view name(std::size_t slot);
  static std::size_t slot_of(std::string_view name);

  /// Frozen copy; later updates to *this do not affect it.
  ModelParams snapshot() const { return *this; }
  std::size_t parameter_count() const;
  bool all_finite() const;

  /// Validates every tensor shape against `dims`.
  static ModelParams from_tensors(const ModelDims& dims, std::vector<Matrix> tensors);
  /// Expected (rows, cols) of each slot for `dims`.
  static std::pair<Eigen::Index, Eigen::Index> shape_of(const ModelDims& dims, std::size_t slot);

 private:
  ModelDims dims_;
  std::vector<Matrix> tensors_;
};

/// Padded, id-encoded mini-batch. Row b holds example `ids[b]`.
struct Batch {
  std::vector<int> ids;
  std::vector<std::vector<int>> tokens;  // B x T, PAD beyond length
  std::vector<int> lengths;
  Matrix mask;                           // B x T, 1 for real tokens
  std::vector<int> intents;              // -1 when unlabeled or unknown
  std::vector<std::vector<int>> slots;   // B x T, -1 when unlabeled, unknown or padded

  std::size_t size() const { return ids.size(); }
  int max_length() const { return static_cast<int>(mask.cols()); }
  bool labeled(std::size_t b) const { return intents[b] >= 0; }
  std::size_t token_count() const;
};

Batch make_batch(std::span<const Example* const> examples, const Vocabulary& vocab);
Batch make_batch(std::span<const Example> examples, const Vocabulary& vocab);
/// Sub-batch of the given rows, re-padded to the longest kept row.
Batch select_rows(const Batch& batch, std::span<const std::size_t> rows);

enum class PerturbationKind { kIntent, kSlot, kJoint };

/// Additive noise on embedded inputs, one B x E matrix per time step.
struct Perturbation {
  std::vector<Matrix> steps;
  double epsilon = 0.0;
  PerturbationKind kind = PerturbationKind::kJoint;

  static Perturbation zeros(std::size_t batch, int length, int dim);
  /// L2 norm of example b across all steps and dimensions.
  double example_norm(std::size_t b) const;
};

struct Embedded {
  std::vector<Matrix> steps;  // T entries of B x E
  Matrix mask;                // B x T
};

/// Embedding lookup; padded positions map to zero vectors.
Embedded embed(const Batch& batch, const ModelParams& params);

/// Probability outputs. `slot[t]` is B x |slots|; rows at masked positions are
/// meaningless and must be ignored.
struct Posteriors {
  Matrix intent;
  std::vector<Matrix> slot;
  Matrix mask;

  RowVector slot_row(std::size_t b, int t) const { return slot[static_cast<std::size_t>(t)].row(static_cast<Eigen::Index>(b)); }
};

struct ForwardOptions {
  SlotConditioning conditioning = SlotConditioning::kGreedy;
  const std::vector<std::vector<int>>* fixed_tags = nullptr;  // B x T for kFixedTags
  const Perturbation* perturbation = nullptr;
  bool perturbation_grad = false;  // make the perturbation a differentiable leaf
  bool train_params = false;       // record parameter gradients
  double embedding_dropout = 0.0;
  double classifier_dropout = 0.0;
  std::mt19937_64* rng = nullptr;  // dropout is active only when set
};

struct ForwardResult {
  ad::Var intent_logp;                      // B x I
  std::vector<ad::Var> slot_logp;           // T entries of B x S
  std::vector<ad::Var> perturbation_leaves; // T entries when perturbation_grad
  std::vector<std::vector<int>> argmax_tags;  // B x T per-step argmax (lowest index on ties)
};

ForwardResult forward(ad::Tape& tape, const ModelParams& params, const Batch& batch,
                      const ForwardOptions& options);

Posteriors posteriors(const ad::Tape& tape, const ForwardResult& result, const Batch& batch);

/// Inference pass: no dropout, no gradients.
Posteriors infer(const ModelParams& params, const Batch& batch,
                 SlotConditioning conditioning = SlotConditioning::kGreedy,
                 const std::vector<std::vector<int>>* fixed_tags = nullptr,
                 const Perturbation* perturbation = nullptr);

struct Prediction {
  std::vector<int> intents;               // one per example
  std::vector<std::vector<int>> slots;    // per example, length = utterance length
};

/// Intent argmax and greedy autoregressive slot decoding.
Prediction predict(const ModelParams& params, const Batch& batch);

/// First index of the row maximum.
int argmax(const Eigen::Ref<const RowVector>& row);

}  // namespace viraal

#endif  // VIRAAL_MODEL_HPP_
