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

#ifndef VIRAAL_TRAINER_HPP_
#define VIRAAL_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "viraal/corpus.hpp"
#include "viraal/metrics.hpp"
#include "viraal/model.hpp"
#include "viraal/vat.hpp"

namespace viraal {

enum class LossTerm { kCeIntent, kCeSlot, kVatIntent, kVatSlot, kVatJoint };

std::string_view loss_name(LossTerm term);
LossTerm parse_loss(std::string_view name);

/// Training hyper-parameters. Defaults follow the reference setup: 300-d
/// embeddings, one 128-unit BiLSTM layer, 128-d slot embeddings, dropout 0.5
/// (embedding dropout 0 under VAT), Adam at 1e-3, 100 epochs / batch 16
/// without VAT and 60 epochs / batch 64 with VAT.
struct RunConfig {
  int embedding_size = 300;
  int hidden = 128;
  int layers = 1;
  int slot_embedding = 128;
  int attention = 128;
  double classifier_dropout = 0.5;
  double embedding_dropout = 0.5;
  double embedding_dropout_vat = 0.0;
  std::string optimizer = "adam";
  double learning_rate = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double clip_norm = 5.0;
  int epochs = 100;
  int epochs_vat = 60;
  int batch_size = 16;
  int batch_size_vat = 64;
  std::set<LossTerm> losses = {LossTerm::kCeIntent, LossTerm::kCeSlot};
  VatConfig vat;
  std::uint64_t seed = 0;
  std::string attention_form = "additive";

  bool uses_vat() const;
  int effective_epochs() const { return uses_vat() ? epochs_vat : epochs; }
  int effective_batch_size() const { return uses_vat() ? batch_size_vat : batch_size; }
  double effective_embedding_dropout() const {
    return uses_vat() ? embedding_dropout_vat : embedding_dropout;
  }
  ModelDims dims(const Vocabulary& vocab) const;

  /// Reference defaults for a dataset: SNIPS uses batch 64 for every run.
  static RunConfig defaults_for(std::string_view dataset);
  /// Loss set for a task ("int", "slot", "joint") with or without VAT.
  static std::set<LossTerm> losses_for(std::string_view task, bool vat);

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_json(const nlohmann::json& j, RunConfig base);
};

/// -(1/K) sum_k log p_int(i_k). Rows with gold < 0 are skipped; an empty
/// labeled set yields 0 and sets *empty.
double ce_intent_loss(const Posteriors& posteriors, std::span<const int> gold,
                      bool* empty = nullptr);
/// Per-utterance mean token NLL, averaged over labeled utterances.
double ce_slot_loss(const Posteriors& posteriors, const std::vector<std::vector<int>>& gold,
                    bool* empty = nullptr);

struct LossTerms {
  ad::Var total;
  double ce_intent = 0.0;
  double ce_slot = 0.0;
  double vat = 0.0;
  std::size_t labeled = 0;
};

/// Records the enabled terms on `tape`: CE over the labeled rows (teacher
/// forced, with dropout) and VAT over every row, anchored at `anchor`.
LossTerms total_loss(ad::Tape& tape, const ModelParams& model, const ModelParams& anchor,
                     const Batch& batch, const RunConfig& config, std::mt19937_64& rng);

using Gradients = std::map<std::size_t, Matrix>;

double global_norm(const Gradients& grads);
/// Rescales in place when the global norm exceeds `max_norm`; returns the
/// pre-clip norm.
double clip_global_norm(Gradients& grads, double max_norm);

class Adam {
 public:
  Adam(double learning_rate, double beta1, double beta2, double epsilon);
  void step(ModelParams& params, const Gradients& grads);
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::size_t, Matrix> m_, v_;
};

struct FitOptions {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Write the best parameters here whenever they improve.
  std::filesystem::path checkpoint_path;
};

struct FitResult {
  ModelParams params;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  bool diverged = false;
  std::string diagnostics;
};

/// Trains from scratch. Examples are looked up by id in `corpus`; annotations
/// of `unlabeled` ids are never read. Under VAT each epoch is one shuffled
/// pass over labeled and unlabeled ids; otherwise over labeled ids only. With
/// a validation set, the epoch with the best validation score is returned.
FitResult fit(std::span<const int> labeled, std::span<const int> unlabeled,
              std::span<const Example> corpus, const Vocabulary& vocab,
              const EmbeddingMatrix* embeddings, const RunConfig& config,
              std::span<const Example* const> validation = {}, const FitOptions& options = {});

/// Validation score used for model selection: accuracy, F1/100, or their sum
/// depending on which heads the loss set trains.
double selection_score(const RunConfig& config, const MetricsReport& report);

/// Code revision baked in at build time.
std::string_view code_revision();

nlohmann::json run_manifest(const RunConfig& config, const nlohmann::json& extra = {});
void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history);

}  // namespace viraal

#endif  // VIRAAL_TRAINER_HPP_
