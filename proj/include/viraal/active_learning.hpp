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

#ifndef VIRAAL_ACTIVE_LEARNING_HPP_
#define VIRAAL_ACTIVE_LEARNING_HPP_

// Entropy-based query selection.
//
//   conf_int(x)   = -H(p_int(x))
//   conf_slot(x)  = 1/T sum_t -H(p_slot(x)_t)
//   conf_joint(x) = -(E_int(x) / P99(E_int) + E_slot(x) / P99(E_slot))
//
// where E = -conf are entropies and P99 is taken over the scored pool with
// linear interpolation between closest ranks. The lowest confidences are
// queried first.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "viraal/corpus.hpp"
#include "viraal/model.hpp"

namespace viraal {

struct ConfidenceRecord {
  int id = 0;
  double conf_int = 0.0;
  double conf_slot = 0.0;
  std::optional<double> conf_joint;
};

enum class QueryCriterion { kRandom, kEntropyIntent, kEntropySlot, kEntropyJoint };

std::string_view criterion_name(QueryCriterion criterion);
QueryCriterion parse_criterion(std::string_view name);

struct QuerySpec {
  QueryCriterion criterion = QueryCriterion::kEntropyJoint;
  std::size_t budget = 0;
  std::uint64_t seed = 0;
};

enum class JointConfidenceMode {
  kEntropyPercentile,  // normalize entropies by their P99, negate the sum
  kLiteral,            // conf_int / P99(conf_int) + conf_slot / P99(conf_slot)
};

/// -sum p log p with 0 log 0 = 0. Throws on negative entries.
double entropy(std::span<const double> p);

/// Linear interpolation between closest ranks, q in [0, 100].
double percentile(std::vector<double> values, double q);

/// A scored pool item together with the model's greedy suggestion.
struct ScoredExample {
  ConfidenceRecord confidence;
  int intent = 0;
  std::vector<int> slots;
};

std::vector<ScoredExample> score_and_predict(const ModelParams& params,
                                             std::span<const Example* const> pool,
                                             const Vocabulary& vocab,
                                             std::size_t batch_size = 64);

/// Greedy-conditioned inference without dropout; one record per example.
std::vector<ConfidenceRecord> score_pool(const ModelParams& params,
                                         std::span<const Example* const> pool,
                                         const Vocabulary& vocab, std::size_t batch_size = 64);

/// Fills conf_joint over the whole record set. Needs at least two records.
void joint_confidence(std::vector<ConfidenceRecord>& records,
                      JointConfidenceMode mode = JointConfidenceMode::kEntropyPercentile);

/// Confidence used by `criterion` (conf_joint must be set for the joint one).
double criterion_score(const ConfidenceRecord& record, QueryCriterion criterion);

/// S ids. Entropy criteria return them by ascending confidence (ties by id);
/// random draws a uniform sample without replacement under the seed.
std::vector<int> select(std::span<const ConfidenceRecord> records, const QuerySpec& spec);

/// Line-delimited {id, conf_int, conf_slot, conf_joint, rank}; rank is the
/// 1-based position under `criterion` (ascending confidence).
void write_scored_pool(const std::filesystem::path& path,
                       std::span<const ConfidenceRecord> records, QueryCriterion criterion);

}  // namespace viraal

#endif  // VIRAAL_ACTIVE_LEARNING_HPP_
