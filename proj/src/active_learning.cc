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

#include "viraal/active_learning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace viraal {

namespace {

constexpr double kPercentileFloor = 1e-8;

std::vector<std::size_t> ascending_order(std::span<const ConfidenceRecord> records,
                                         QueryCriterion criterion) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> score(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) score[i] = criterion_score(records[i], criterion);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] < score[b];
    return records[a].id < records[b].id;
  });
  return order;
}

}  // namespace

std::string_view criterion_name(QueryCriterion criterion) {
  switch (criterion) {
    case QueryCriterion::kRandom: return "random";
    case QueryCriterion::kEntropyIntent: return "entropy-int";
    case QueryCriterion::kEntropySlot: return "entropy-slot";
    case QueryCriterion::kEntropyJoint: return "entropy-joint";
  }
  return "random";
}

QueryCriterion parse_criterion(std::string_view name) {
  if (name == "random") return QueryCriterion::kRandom;
  if (name == "entropy-int") return QueryCriterion::kEntropyIntent;
  if (name == "entropy-slot") return QueryCriterion::kEntropySlot;
  if (name == "entropy-joint") return QueryCriterion::kEntropyJoint;
  throw std::invalid_argument("unknown criterion: " + std::string(name));
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p) {
    if (x < 0.0) throw std::invalid_argument("entropy: negative probability");
    if (x > 0.0) h -= x * std::log(x);
  }
  return std::max(h, 0.0);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: no values");
  if (q < 0.0 || q > 100.0) throw std::invalid_argument("percentile: q outside [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<ScoredExample> score_and_predict(const ModelParams& params,
                                             std::span<const Example* const> pool,
                                             const Vocabulary& vocab, std::size_t batch_size) {
  if (pool.empty()) throw std::invalid_argument("score_pool: empty pool");
  if (batch_size == 0) batch_size = 64;
  std::vector<ScoredExample> out;
  out.reserve(pool.size());
  for (std::size_t start = 0; start < pool.size(); start += batch_size) {
    const auto chunk = pool.subspan(start, std::min(batch_size, pool.size() - start));
    const Batch batch = make_batch(chunk, vocab);
    ad::Tape tape(false);
    ForwardOptions opts;
    opts.conditioning = SlotConditioning::kGreedy;
    const auto result = forward(tape, params, batch, opts);
    const Matrix p_int = tape.value(result.intent_logp).array().exp().matrix();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto row = static_cast<Eigen::Index>(b);
      ScoredExample s;
      s.confidence.id = batch.ids[b];
      const RowVector pi = p_int.row(row);
      s.confidence.conf_int = -entropy(std::span<const double>(pi.data(), static_cast<std::size_t>(pi.size())));
      double slot_sum = 0.0;
      for (int t = 0; t < batch.lengths[b]; ++t) {
        const RowVector ps = tape.value(result.slot_logp[static_cast<std::size_t>(t)]).row(row).array().exp();
        slot_sum -= entropy(std::span<const double>(ps.data(), static_cast<std::size_t>(ps.size())));
      }
      s.confidence.conf_slot = slot_sum / static_cast<double>(batch.lengths[b]);
      s.intent = argmax(p_int.row(row));
      const auto& tags = result.argmax_tags[b];
      s.slots.assign(tags.begin(), tags.begin() + batch.lengths[b]);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<ConfidenceRecord> score_pool(const ModelParams& params,
                                         std::span<const Example* const> pool,
                                         const Vocabulary& vocab, std::size_t batch_size) {
  const auto scored = score_and_predict(params, pool, vocab, batch_size);
  std::vector<ConfidenceRecord> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back(s.confidence);
  return out;
}

void joint_confidence(std::vector<ConfidenceRecord>& records, JointConfidenceMode mode) {
  if (records.size() < 2) throw std::invalid_argument("joint_confidence: need >= 2 records");
  if (mode == JointConfidenceMode::kEntropyPercentile) {
    std::vector<double> e_int, e_slot;
    for (const auto& r : records) {
      e_int.push_back(-r.conf_int);
      e_slot.push_back(-r.conf_slot);
    }
    const double p_int = std::max(percentile(e_int, 99.0), kPercentileFloor);
    const double p_slot = std::max(percentile(e_slot, 99.0), kPercentileFloor);
    for (auto& r : records) r.conf_joint = -((-r.conf_int) / p_int + (-r.conf_slot) / p_slot);
    return;
  }
  std::vector<double> c_int, c_slot;
  for (const auto& r : records) {
    c_int.push_back(r.conf_int);
    c_slot.push_back(r.conf_slot);
  }
  auto guard = [](double p) { return std::abs(p) < kPercentileFloor ? -kPercentileFloor : p; };
  const double p_int = guard(percentile(c_int, 99.0));
  const double p_slot = guard(percentile(c_slot, 99.0));
  for (auto& r : records) r.conf_joint = r.conf_int / p_int + r.conf_slot / p_slot;
}

double criterion_score(const ConfidenceRecord& record, QueryCriterion criterion) {
  switch (criterion) {
    case QueryCriterion::kEntropyIntent: return record.conf_int;
    case QueryCriterion::kEntropySlot: return record.conf_slot;
    case QueryCriterion::kEntropyJoint:
      if (!record.conf_joint) throw std::logic_error("criterion_score: conf_joint not computed");
      return *record.conf_joint;
    case QueryCriterion::kRandom: return 0.0;
  }
  return 0.0;
}

std::vector<int> select(std::span<const ConfidenceRecord> records, const QuerySpec& spec) {
  if (spec.budget == 0) throw std::invalid_argument("select: budget must be positive");
  if (spec.budget > records.size()) {
    throw std::invalid_argument("select: budget " + std::to_string(spec.budget) +
                                " exceeds pool size " + std::to_string(records.size()));
  }
  std::vector<int> out;
  out.reserve(spec.budget);
  if (spec.criterion == QueryCriterion::kRandom) {
    std::vector<int> ids;
    for (const auto& r : records) ids.push_back(r.id);
    std::sort(ids.begin(), ids.end());
    std::mt19937_64 rng(spec.seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    out.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(spec.budget));
    return out;
  }
  std::vector<ConfidenceRecord> local;
  std::span<const ConfidenceRecord> view = records;
  if (spec.criterion == QueryCriterion::kEntropyJoint &&
      std::any_of(records.begin(), records.end(), [](const auto& r) { return !r.conf_joint; })) {
    local.assign(records.begin(), records.end());
    joint_confidence(local);
    view = local;
  }
  const auto order = ascending_order(view, spec.criterion);
  for (std::size_t i = 0; i < spec.budget; ++i) out.push_back(view[order[i]].id);
  return out;
}

void write_scored_pool(const std::filesystem::path& path,
                       std::span<const ConfidenceRecord> records, QueryCriterion criterion) {
  std::vector<std::size_t> rank(records.size(), 0);
  if (criterion != QueryCriterion::kRandom) {
    const auto order = ascending_order(records, criterion);
    for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i + 1;
  }
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    nlohmann::json rec = {{"id", r.id}, {"conf_int", r.conf_int}, {"conf_slot", r.conf_slot}};
    rec["conf_joint"] = r.conf_joint ? nlohmann::json(*r.conf_joint) : nlohmann::json(nullptr);
    rec["rank"] = rank[i] ? nlohmann::json(rank[i]) : nlohmann::json(nullptr);
    out << rec.dump() << '\n';
  }
}

}  // namespace viraal
