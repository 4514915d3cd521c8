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

#include "viraal/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace viraal {

SlotCounts& SlotCounts::operator+=(const SlotCounts& o) {
  correct += o.correct;
  predicted += o.predicted;
  gold += o.gold;
  return *this;
}

double SlotCounts::precision() const {
  return predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0;
}

double SlotCounts::recall() const {
  return gold ? static_cast<double>(correct) / static_cast<double>(gold) : 0.0;
}

double SlotCounts::f1() const {
  if (gold == 0 && predicted == 0) return 100.0;
  const double p = precision(), r = recall();
  return p + r > 0.0 ? 100.0 * 2.0 * p * r / (p + r) : 0.0;
}

SlotCounts count_slots(std::span<const std::string> gold, std::span<const std::string> predicted,
                       std::string_view outside) {
  if (gold.size() != predicted.size()) throw std::invalid_argument("count_slots: length mismatch");
  SlotCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool g = gold[i] != outside;
    const bool p = predicted[i] != outside;
    c.gold += g;
    c.predicted += p;
    c.correct += g && gold[i] == predicted[i];
  }
  return c;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json h = nlohmann::json::array();
  for (const auto& e : history) {
    h.push_back({{"epoch", e.epoch},
                 {"ce_intent", e.ce_intent},
                 {"ce_slot", e.ce_slot},
                 {"vat", e.vat},
                 {"total", e.total},
                 {"val_intent_accuracy", e.val_intent_accuracy},
                 {"val_slot_f1", e.val_slot_f1},
                 {"has_validation", e.has_validation}});
  }
  return {{"intent_accuracy", intent_accuracy}, {"slot_f1", slot_f1},
          {"slot_precision", slot_precision},   {"slot_recall", slot_recall},
          {"examples", examples},               {"seed", seed},
          {"history", h}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.intent_accuracy = j.value("intent_accuracy", 0.0);
  r.slot_f1 = j.value("slot_f1", 0.0);
  r.slot_precision = j.value("slot_precision", 0.0);
  r.slot_recall = j.value("slot_recall", 0.0);
  r.examples = j.value("examples", std::size_t{0});
  r.seed = j.value("seed", std::uint64_t{0});
  for (const auto& e : j.value("history", nlohmann::json::array())) {
    EpochRecord rec;
    rec.epoch = e.value("epoch", 0);
    rec.ce_intent = e.value("ce_intent", 0.0);
    rec.ce_slot = e.value("ce_slot", 0.0);
    rec.vat = e.value("vat", 0.0);
    rec.total = e.value("total", 0.0);
    rec.has_validation = e.value("has_validation", false);
    rec.val_intent_accuracy = e.value("val_intent_accuracy", 0.0);
    rec.val_slot_f1 = e.value("val_slot_f1", 0.0);
    r.history.push_back(rec);
  }
  return r;
}

MetricsReport evaluate(const ModelParams& params, std::span<const Example* const> test,
                       const Vocabulary& vocab, std::size_t batch_size) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  std::size_t intent_hits = 0;
  SlotCounts counts;
  for (std::size_t start = 0; start < test.size(); start += batch_size) {
    const auto chunk = test.subspan(start, std::min(batch_size, test.size() - start));
    const Batch batch = make_batch(chunk, vocab);
    const Prediction pred = predict(params, batch);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const Example& ex = *chunk[b];
      if (!ex.annotation) throw std::invalid_argument("evaluate: unlabeled test example");
      intent_hits += vocab.intent(pred.intents[b]) == ex.annotation->intent;
      std::vector<std::string> tags;
      for (int id : pred.slots[b]) tags.push_back(vocab.slot(id));
      counts += count_slots(ex.annotation->slots, tags);
    }
  }
  MetricsReport r;
  r.examples = test.size();
  r.intent_accuracy = static_cast<double>(intent_hits) / static_cast<double>(test.size());
  r.slot_f1 = counts.f1();
  r.slot_precision = 100.0 * counts.precision();
  r.slot_recall = 100.0 * counts.recall();
  return r;
}

MetricsReport evaluate(const ModelParams& params, std::span<const Example> test,
                       const Vocabulary& vocab, std::size_t batch_size) {
  std::vector<const Example*> ptrs;
  for (const auto& ex : test) ptrs.push_back(&ex);
  return evaluate(params, std::span<const Example* const>(ptrs), vocab, batch_size);
}

}  // namespace viraal
