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

#ifndef VIRAAL_METRICS_HPP_
#define VIRAAL_METRICS_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "viraal/corpus.hpp"
#include "viraal/model.hpp"

namespace viraal {

/// Token-level counts over non-"O" tags.
struct SlotCounts {
  std::size_t correct = 0;    // predicted == gold, gold != O
  std::size_t predicted = 0;  // predicted != O
  std::size_t gold = 0;       // gold != O

  SlotCounts& operator+=(const SlotCounts& o);
  double precision() const;
  double recall() const;
  /// Percentage points. 100 when there is nothing to find and nothing predicted.
  double f1() const;
};

SlotCounts count_slots(std::span<const std::string> gold, std::span<const std::string> predicted,
                       std::string_view outside = "O");

struct EpochRecord {
  int epoch = 0;
  double ce_intent = 0.0;
  double ce_slot = 0.0;
  double vat = 0.0;
  double total = 0.0;
  double val_intent_accuracy = 0.0;
  double val_slot_f1 = 0.0;
  bool has_validation = false;
};

struct MetricsReport {
  double intent_accuracy = 0.0;  // fraction in [0, 1]
  double slot_f1 = 0.0;          // percentage points in [0, 100]
  double slot_precision = 0.0;
  double slot_recall = 0.0;
  std::size_t examples = 0;
  std::vector<EpochRecord> history;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

/// Greedy decoding on labeled examples; padding excluded.
MetricsReport evaluate(const ModelParams& params, std::span<const Example> test,
                       const Vocabulary& vocab, std::size_t batch_size = 128);
MetricsReport evaluate(const ModelParams& params, std::span<const Example* const> test,
                       const Vocabulary& vocab, std::size_t batch_size = 128);

}  // namespace viraal

#endif  // VIRAAL_METRICS_HPP_
