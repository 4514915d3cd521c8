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

#include "viraal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "viraal/checkpoint.hpp"

#ifndef VIRAAL_REVISION
#define VIRAAL_REVISION "unknown"
#endif

namespace viraal {

std::string_view loss_name(LossTerm term) {
  switch (term) {
    case LossTerm::kCeIntent: return "ce-int";
    case LossTerm::kCeSlot: return "ce-slot";
    case LossTerm::kVatIntent: return "vat-int";
    case LossTerm::kVatSlot: return "vat-slot";
    case LossTerm::kVatJoint: return "vat-joint";
  }
  return "ce-int";
}

LossTerm parse_loss(std::string_view name) {
  for (auto t : {LossTerm::kCeIntent, LossTerm::kCeSlot, LossTerm::kVatIntent, LossTerm::kVatSlot,
                 LossTerm::kVatJoint}) {
    if (loss_name(t) == name) return t;
  }
  throw std::invalid_argument("unknown loss term: " + std::string(name));
}

bool RunConfig::uses_vat() const {
  return losses.count(LossTerm::kVatIntent) || losses.count(LossTerm::kVatSlot) ||
         losses.count(LossTerm::kVatJoint);
}

ModelDims RunConfig::dims(const Vocabulary& vocab) const {
  ModelDims d = dims_for(vocab, embedding_size);
  d.hidden = hidden;
  d.slot_dim = slot_embedding;
  d.attention = attention;
  return d;
}

RunConfig RunConfig::defaults_for(std::string_view dataset) {
  RunConfig c;
  std::string lower(dataset);
  std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
  if (lower.find("snips") != std::string::npos) c.batch_size = 64;
  return c;
}

std::set<LossTerm> RunConfig::losses_for(std::string_view task, bool vat) {
  if (task == "int") {
    return vat ? std::set{LossTerm::kCeIntent, LossTerm::kVatIntent} : std::set{LossTerm::kCeIntent};
  }
  if (task == "slot") {
    return vat ? std::set{LossTerm::kCeSlot, LossTerm::kVatSlot} : std::set{LossTerm::kCeSlot};
  }
  if (task == "joint") {
    return vat ? std::set{LossTerm::kCeIntent, LossTerm::kCeSlot, LossTerm::kVatJoint}
               : std::set{LossTerm::kCeIntent, LossTerm::kCeSlot};
  }
  throw std::invalid_argument("unknown task: " + std::string(task));
}

nlohmann::json RunConfig::to_json() const {
  std::vector<std::string> names;
  for (auto t : losses) names.emplace_back(loss_name(t));
  return {{"embedding_size", embedding_size},
          {"hidden", hidden},
          {"layers", layers},
          {"slot_embedding", slot_embedding},
          {"attention", attention},
          {"attention_form", attention_form},
          {"classifier_dropout", classifier_dropout},
          {"embedding_dropout", embedding_dropout},
          {"embedding_dropout_vat", embedding_dropout_vat},
          {"optimizer", optimizer},
          {"learning_rate", learning_rate},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_epsilon", adam_epsilon},
          {"clip_norm", clip_norm},
          {"epochs", epochs},
          {"epochs_vat", epochs_vat},
          {"batch_size", batch_size},
          {"batch_size_vat", batch_size_vat},
          {"losses", names},
          {"vat", vat.to_json()},
          {"seed", seed}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) { return from_json(j, RunConfig{}); }

RunConfig RunConfig::from_json(const nlohmann::json& j, RunConfig c) {
  c.embedding_size = j.value("embedding_size", c.embedding_size);
  c.hidden = j.value("hidden", c.hidden);
  c.layers = j.value("layers", c.layers);
  if (c.layers != 1) throw std::invalid_argument("RunConfig: only single-layer encoders are supported");
  c.slot_embedding = j.value("slot_embedding", c.slot_embedding);
  c.attention = j.value("attention", c.attention);
  c.attention_form = j.value("attention_form", c.attention_form);
  if (c.attention_form != "additive") throw std::invalid_argument("RunConfig: attention_form must be additive");
  c.classifier_dropout = j.value("classifier_dropout", c.classifier_dropout);
  c.embedding_dropout = j.value("embedding_dropout", c.embedding_dropout);
  c.embedding_dropout_vat = j.value("embedding_dropout_vat", c.embedding_dropout_vat);
  c.optimizer = j.value("optimizer", c.optimizer);
  if (c.optimizer != "adam") throw std::invalid_argument("RunConfig: optimizer must be adam");
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.epochs = j.value("epochs", c.epochs);
  c.epochs_vat = j.value("epochs_vat", c.epochs_vat);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.batch_size_vat = j.value("batch_size_vat", c.batch_size_vat);
  if (j.contains("losses")) {
    c.losses.clear();
    for (const auto& n : j.at("losses")) c.losses.insert(parse_loss(n.get<std::string>()));
  }
  if (j.contains("vat")) c.vat = VatConfig::from_json(j.at("vat"));
  c.seed = j.value("seed", c.seed);
  if (c.batch_size < 1 || c.batch_size_vat < 1 || c.epochs < 0 || c.epochs_vat < 0) {
    throw std::invalid_argument("RunConfig: batch sizes must be positive and epochs non-negative");
  }
  return c;
}

double ce_intent_loss(const Posteriors& posteriors, std::span<const int> gold, bool* empty) {
  if (static_cast<Eigen::Index>(gold.size()) != posteriors.intent.rows()) {
    throw std::invalid_argument("ce_intent_loss: batch size mismatch");
  }
  double total = 0.0;
  std::size_t k = 0;
  for (std::size_t b = 0; b < gold.size(); ++b) {
    if (gold[b] < 0) continue;
    total -= std::log(posteriors.intent(static_cast<Eigen::Index>(b), gold[b]));
    ++k;
  }
  if (empty) *empty = k == 0;
  return k ? total / static_cast<double>(k) : 0.0;
}

double ce_slot_loss(const Posteriors& posteriors, const std::vector<std::vector<int>>& gold,
                    bool* empty) {
  if (static_cast<Eigen::Index>(gold.size()) != posteriors.mask.rows()) {
    throw std::invalid_argument("ce_slot_loss: batch size mismatch");
  }
  double total = 0.0;
  std::size_t k = 0;
  for (std::size_t b = 0; b < gold.size(); ++b) {
    double nll = 0.0;
    int tokens = 0;
    for (std::size_t t = 0; t < gold[b].size() && t < posteriors.slot.size(); ++t) {
      if (posteriors.mask(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(t)) == 0.0) continue;
      ++tokens;
      if (gold[b][t] >= 0) nll -= std::log(posteriors.slot[t](static_cast<Eigen::Index>(b), gold[b][t]));
    }
    const bool labeled = std::any_of(gold[b].begin(), gold[b].end(), [](int g) { return g >= 0; });
    if (!labeled || tokens == 0) continue;
    total += nll / tokens;
    ++k;
  }
  if (empty) *empty = k == 0;
  return k ? total / static_cast<double>(k) : 0.0;
}

LossTerms total_loss(ad::Tape& tape, const ModelParams& model, const ModelParams& anchor,
                     const Batch& batch, const RunConfig& config, std::mt19937_64& rng) {
  LossTerms terms;
  auto add_term = [&](ad::Var v) { terms.total = terms.total.valid() ? tape.add(terms.total, v) : v; };

  const bool ce_int = config.losses.count(LossTerm::kCeIntent) > 0;
  const bool ce_slot = config.losses.count(LossTerm::kCeSlot) > 0;
  std::vector<std::size_t> labeled_rows;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch.labeled(b)) labeled_rows.push_back(b);
  }
  terms.labeled = labeled_rows.size();

  if ((ce_int || ce_slot) && !labeled_rows.empty()) {
    const Batch sub = select_rows(batch, labeled_rows);
    ForwardOptions opts;
    opts.conditioning = SlotConditioning::kTeacherForced;
    opts.train_params = true;
    opts.embedding_dropout = config.effective_embedding_dropout();
    opts.classifier_dropout = config.classifier_dropout;
    opts.rng = &rng;
    const auto out = forward(tape, model, sub, opts);
    const double k = static_cast<double>(sub.size());
    if (ce_int) {
      const std::vector<double> w(sub.size(), 1.0 / k);
      ad::Var v = tape.weighted_nll(out.intent_logp, sub.intents, w);
      terms.ce_intent = tape.value(v)(0, 0);
      add_term(v);
    }
    if (ce_slot) {
      ad::Var acc;
      for (int t = 0; t < sub.max_length(); ++t) {
        std::vector<int> target(sub.size(), -1);
        std::vector<double> w(sub.size(), 0.0);
        for (std::size_t b = 0; b < sub.size(); ++b) {
          if (sub.mask(static_cast<Eigen::Index>(b), t) == 0.0) continue;
          target[b] = sub.slots[b][static_cast<std::size_t>(t)];
          w[b] = 1.0 / (k * sub.lengths[b]);
        }
        ad::Var v = tape.weighted_nll(out.slot_logp[static_cast<std::size_t>(t)], target, w);
        acc = acc.valid() ? tape.add(acc, v) : v;
      }
      terms.ce_slot = tape.value(acc)(0, 0);
      add_term(acc);
    }
  }

  for (auto [term, heads] : {std::pair{LossTerm::kVatIntent, VatHeads::kIntent},
                             std::pair{LossTerm::kVatSlot, VatHeads::kSlot},
                             std::pair{LossTerm::kVatJoint, VatHeads::kJoint}}) {
    if (!config.losses.count(term)) continue;
    const VatAnchor anchor_out = anchor_pass(anchor, batch);
    const Perturbation r = compute_r_vadv(batch, anchor, config.vat, heads, rng, &anchor_out);
    ad::Var v = vat_loss(tape, model, batch, anchor_out, r, heads, true);
    terms.vat += tape.value(v)(0, 0);
    add_term(v);
  }

  if (!terms.total.valid()) terms.total = tape.constant(Matrix::Zero(1, 1));
  const double total = tape.value(terms.total)(0, 0);
  if (!std::isfinite(total)) {
    std::ostringstream msg;
    msg << "non-finite loss (ce_int=" << terms.ce_intent << ", ce_slot=" << terms.ce_slot
        << ", vat=" << terms.vat << ") for batch ids [";
    for (std::size_t b = 0; b < batch.size(); ++b) msg << (b ? "," : "") << batch.ids[b];
    msg << "]";
    throw NumericalError(msg.str());
  }
  return terms;
}

double global_norm(const Gradients& grads) {
  double s = 0.0;
  for (const auto& [slot, g] : grads) s += g.squaredNorm();
  return std::sqrt(s);
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [slot, g] : grads) g *= f;
  }
  return norm;
}

Adam::Adam(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

void Adam::step(ModelParams& params, const Gradients& grads) {
  if (grads.empty()) return;
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [slot, g] : grads) {
    auto [mit, m_new] = m_.try_emplace(slot, Matrix::Zero(g.rows(), g.cols()));
    auto [vit, v_new] = v_.try_emplace(slot, Matrix::Zero(g.rows(), g.cols()));
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    params[slot].array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }
  params[ModelParams::kWordEmbedding].row(Vocabulary::kPad).setZero();
}

double selection_score(const RunConfig& config, const MetricsReport& report) {
  const bool intent = config.losses.count(LossTerm::kCeIntent) || config.losses.count(LossTerm::kVatIntent);
  const bool slot = config.losses.count(LossTerm::kCeSlot) || config.losses.count(LossTerm::kVatSlot);
  if (intent && !slot) return report.intent_accuracy;
  if (slot && !intent) return report.slot_f1 / 100.0;
  return report.intent_accuracy + report.slot_f1 / 100.0;
}

FitResult fit(std::span<const int> labeled, std::span<const int> unlabeled,
              std::span<const Example> corpus, const Vocabulary& vocab,
              const EmbeddingMatrix* embeddings, const RunConfig& config,
              std::span<const Example* const> validation, const FitOptions& options) {
  if (labeled.empty()) throw std::invalid_argument("fit: labeled set is empty");
  std::unordered_map<int, const Example*> index;
  for (const auto& ex : corpus) index.emplace(ex.utterance.id, &ex);
  auto lookup = [&](int id) {
    auto it = index.find(id);
    if (it == index.end()) throw std::invalid_argument("fit: unknown example id " + std::to_string(id));
    return it->second;
  };

  std::vector<std::pair<const Example*, bool>> items;
  for (int id : labeled) {
    const Example* ex = lookup(id);
    if (!ex->annotation) throw std::invalid_argument("fit: labeled id without annotation");
    items.emplace_back(ex, true);
  }
  if (config.uses_vat()) {
    for (int id : unlabeled) items.emplace_back(lookup(id), false);
  }

  std::mt19937_64 rng(config.seed);
  FitResult result;
  result.params = ModelParams::initialize(config.dims(vocab), config.seed * 0x9E3779B97F4A7C15ull + 1,
                                          embeddings);
  Adam adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon);
  ModelParams& params = result.params;
  ModelParams last_good = params;
  std::optional<ModelParams> best;
  double best_score = -1.0;
  const auto batch_size = static_cast<std::size_t>(config.effective_batch_size());

  for (int epoch = 1; epoch <= config.effective_epochs(); ++epoch) {
    std::shuffle(items.begin(), items.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    try {
      for (std::size_t start = 0; start < items.size(); start += batch_size) {
        const std::size_t end = std::min(items.size(), start + batch_size);
        std::vector<const Example*> ptrs;
        for (std::size_t i = start; i < end; ++i) ptrs.push_back(items[i].first);
        Batch batch = make_batch(std::span<const Example* const>(ptrs), vocab);
        for (std::size_t i = start; i < end; ++i) {
          if (items[i].second) continue;
          batch.intents[i - start] = -1;
          std::fill(batch.slots[i - start].begin(), batch.slots[i - start].end(), -1);
        }
        ad::Tape tape(true);
        const LossTerms terms = total_loss(tape, params, params, batch, config, rng);
        tape.backward(terms.total);
        Gradients grads = tape.param_grads();
        clip_global_norm(grads, config.clip_norm);
        adam.step(params, grads);
        if (!params.all_finite()) throw NumericalError("parameters became non-finite");
        rec.ce_intent += terms.ce_intent;
        rec.ce_slot += terms.ce_slot;
        rec.vat += terms.vat;
        rec.total += tape.value(terms.total)(0, 0);
        ++batches;
      }
    } catch (const NumericalError& e) {
      result.diverged = true;
      result.diagnostics = "epoch " + std::to_string(epoch) + ": " + e.what();
      params = best ? *best : last_good;
      return result;
    }
    if (batches) {
      const double n = static_cast<double>(batches);
      rec.ce_intent /= n;
      rec.ce_slot /= n;
      rec.vat /= n;
      rec.total /= n;
    }
    if (!validation.empty()) {
      const MetricsReport val = evaluate(params, validation, vocab);
      rec.has_validation = true;
      rec.val_intent_accuracy = val.intent_accuracy;
      rec.val_slot_f1 = val.slot_f1;
      const double score = selection_score(config, val);
      if (score > best_score) {
        best_score = score;
        best = params;
        result.best_epoch = epoch;
        if (!options.checkpoint_path.empty()) {
          save_checkpoint(options.checkpoint_path, Checkpoint{params, vocab, config.to_json()});
        }
      }
    }
    last_good = params;
    result.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  if (best) {
    params = std::move(*best);
  } else {
    result.best_epoch = config.effective_epochs();
    if (!options.checkpoint_path.empty()) {
      save_checkpoint(options.checkpoint_path, Checkpoint{params, vocab, config.to_json()});
    }
  }
  return result;
}

std::string_view code_revision() { return VIRAAL_REVISION; }

nlohmann::json run_manifest(const RunConfig& config, const nlohmann::json& extra) {
  nlohmann::json m = {{"revision", code_revision()},
                      {"seed", config.seed},
                      {"config", config.to_json()},
                      {"attention", "single-head additive: v^T tanh(W_k h_j + W_q key)"}};
  if (extra.is_object()) {
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  }
  return m;
}

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  out << "epoch,ce_intent,ce_slot,vat,total,val_intent_accuracy,val_slot_f1\n";
  out << std::setprecision(10);
  for (const auto& e : history) {
    out << e.epoch << ',' << e.ce_intent << ',' << e.ce_slot << ',' << e.vat << ',' << e.total
        << ',';
    if (e.has_validation) {
      out << e.val_intent_accuracy << ',' << e.val_slot_f1;
    } else {
      out << ',';
    }
    out << '\n';
  }
}

}  // namespace viraal
