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

#include "viraal/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace viraal {

namespace {

constexpr std::array<std::string_view, ModelParams::kCount> kSlotNames = {
    "word_embedding",         "slot_embedding",
    "encoder_fw_input",       "encoder_fw_recurrent",   "encoder_fw_bias",
    "encoder_bw_input",       "encoder_bw_recurrent",   "encoder_bw_bias",
    "intent_attention_key",   "intent_attention_query", "intent_attention_vector",
    "intent_output",          "intent_bias",
    "slot_attention_key",     "slot_attention_query",   "slot_attention_vector",
    "decoder_input",          "decoder_recurrent",      "decoder_bias",
    "slot_output",            "slot_bias"};

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = keep(rng) ? scale : 0.0;
  }
  return m;
}

}  // namespace

nlohmann::json ModelDims::to_json() const {
  return {{"vocab", vocab},         {"word_dim", word_dim},   {"hidden", hidden},
          {"slot_dim", slot_dim},   {"attention", attention}, {"intents", intents},
          {"slots", slots}};
}

ModelDims ModelDims::from_json(const nlohmann::json& j) {
  ModelDims d;
  d.vocab = j.at("vocab");
  d.word_dim = j.at("word_dim");
  d.hidden = j.at("hidden");
  d.slot_dim = j.at("slot_dim");
  d.attention = j.at("attention");
  d.intents = j.at("intents");
  d.slots = j.at("slots");
  return d;
}

ModelDims dims_for(const Vocabulary& vocab, int word_dim) {
  ModelDims d;
  d.vocab = static_cast<int>(vocab.word_count());
  d.word_dim = word_dim;
  d.intents = static_cast<int>(vocab.intent_count());
  d.slots = static_cast<int>(vocab.slot_count());
  return d;
}

std::string_view ModelParams::name(std::size_t slot) { return kSlotNames.at(slot); }

std::size_t ModelParams::slot_of(std::string_view name) {
  for (std::size_t i = 0; i < kSlotNames.size(); ++i) {
    if (kSlotNames[i] == name) return i;
  }
  throw std::invalid_argument("unknown parameter: " + std::string(name));
}

std::pair<Eigen::Index, Eigen::Index> ModelParams::shape_of(const ModelDims& d, std::size_t slot) {
  const Eigen::Index E = d.word_dim, H = d.hidden, A = d.attention, S = d.slots, D = d.slot_dim;
  switch (slot) {
    case kWordEmbedding: return {d.vocab, E};
    case kSlotEmbedding: return {S + 1, D};
    case kEncoderForwardInput:
    case kEncoderBackwardInput: return {E, 4 * H};
    case kEncoderForwardRecurrent:
    case kEncoderBackwardRecurrent:
    case kDecoderRecurrent: return {H, 4 * H};
    case kEncoderForwardBias:
    case kEncoderBackwardBias:
    case kDecoderBias: return {1, 4 * H};
    case kIntentAttentionKey:
    case kIntentAttentionQuery:
    case kSlotAttentionKey: return {2 * H, A};
    case kSlotAttentionQuery: return {D, A};
    case kIntentAttentionVector:
    case kSlotAttentionVector: return {A, 1};
    case kIntentOutput: return {4 * H, d.intents};
    case kIntentBias: return {1, d.intents};
    case kDecoderInput: return {4 * H + D, 4 * H};
    case kSlotOutput: return {H, S};
    case kSlotBias: return {1, S};
    default: throw std::out_of_range("parameter slot");
  }
}

ModelParams ModelParams::initialize(const ModelDims& dims, std::uint64_t seed,
                                    const EmbeddingMatrix* embeddings) {
  if (dims.vocab < 2 || dims.intents < 1 || dims.slots < 1 || dims.word_dim < 1 ||
      dims.hidden < 1 || dims.slot_dim < 1 || dims.attention < 1) {
    throw std::invalid_argument("ModelParams::initialize: invalid dimensions");
  }
  ModelParams p;
  p.dims_ = dims;
  p.tensors_.resize(kCount);
  std::mt19937_64 rng(seed);
  for (std::size_t s = 0; s < kCount; ++s) {
    const auto [rows, cols] = shape_of(dims, s);
    Matrix& m = p.tensors_[s];
    m = Matrix::Zero(rows, cols);
    const bool bias = s == kEncoderForwardBias || s == kEncoderBackwardBias || s == kDecoderBias ||
                      s == kIntentBias || s == kSlotBias;
    if (bias) {
      if (s != kIntentBias && s != kSlotBias) m.middleCols(dims.hidden, dims.hidden).setOnes();
      continue;
    }
    if (s == kWordEmbedding || s == kSlotEmbedding) {
      std::normal_distribution<double> gauss(0.0, 0.1);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = gauss(rng);
      }
      continue;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> uni(-limit, limit);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = uni(rng);
    }
  }
  if (embeddings) {
    if (embeddings->vectors.rows() != dims.vocab || embeddings->vectors.cols() != dims.word_dim) {
      throw std::invalid_argument("ModelParams::initialize: embedding matrix shape mismatch");
    }
    p.tensors_[kWordEmbedding] = embeddings->vectors;
  }
  p.tensors_[kWordEmbedding].row(Vocabulary::kPad).setZero();
  return p;
}

ModelParams ModelParams::from_tensors(const ModelDims& dims, std::vector<Matrix> tensors) {
  if (tensors.size() != kCount) throw std::invalid_argument("from_tensors: wrong tensor count");
  for (std::size_t s = 0; s < kCount; ++s) {
    const auto [rows, cols] = shape_of(dims, s);
    if (tensors[s].rows() != rows || tensors[s].cols() != cols) {
      throw std::invalid_argument("from_tensors: bad shape for " + std::string(name(s)));
    }
  }
  ModelParams p;
  p.dims_ = dims;
  p.tensors_ = std::move(tensors);
  return p;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

bool ModelParams::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(),
                     [](const Matrix& m) { return m.allFinite(); });
}

std::size_t Batch::token_count() const {
  std::size_t n = 0;
  for (int l : lengths) n += static_cast<std::size_t>(l);
  return n;
}

Batch make_batch(std::span<const Example* const> examples, const Vocabulary& vocab) {
  if (examples.empty()) throw std::invalid_argument("make_batch: empty batch");
  Batch b;
  std::size_t T = 0;
  for (const Example* ex : examples) T = std::max(T, ex->utterance.length());
  const auto B = examples.size();
  b.mask = Matrix::Zero(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(T));
  for (std::size_t i = 0; i < B; ++i) {
    const Example& ex = *examples[i];
    if (ex.utterance.length() == 0) throw std::invalid_argument("make_batch: empty utterance");
    b.ids.push_back(ex.utterance.id);
    b.lengths.push_back(static_cast<int>(ex.utterance.length()));
    std::vector<int> toks(T, Vocabulary::kPad), tags(T, -1);
    for (std::size_t t = 0; t < ex.utterance.length(); ++t) {
      toks[t] = vocab.word_id(ex.utterance.tokens[t]);
      b.mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = 1.0;
    }
    int intent = -1;
    if (ex.annotation) {
      intent = vocab.intent_id(ex.annotation->intent);
      for (std::size_t t = 0; t < ex.utterance.length(); ++t) {
        tags[t] = vocab.slot_id(ex.annotation->slots.at(t));
      }
    }
    b.tokens.push_back(std::move(toks));
    b.slots.push_back(std::move(tags));
    b.intents.push_back(intent);
  }
  return b;
}

Batch make_batch(std::span<const Example> examples, const Vocabulary& vocab) {
  std::vector<const Example*> ptrs;
  ptrs.reserve(examples.size());
  for (const auto& ex : examples) ptrs.push_back(&ex);
  return make_batch(std::span<const Example* const>(ptrs), vocab);
}

Batch select_rows(const Batch& batch, std::span<const std::size_t> rows) {
  if (rows.empty()) throw std::invalid_argument("select_rows: no rows");
  int T = 0;
  for (auto r : rows) T = std::max(T, batch.lengths.at(r));
  Batch out;
  out.mask = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), T);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    out.ids.push_back(batch.ids[r]);
    out.lengths.push_back(batch.lengths[r]);
    out.intents.push_back(batch.intents[r]);
    out.tokens.emplace_back(batch.tokens[r].begin(), batch.tokens[r].begin() + T);
    out.slots.emplace_back(batch.slots[r].begin(), batch.slots[r].begin() + T);
    out.mask.row(static_cast<Eigen::Index>(i)) =
        batch.mask.row(static_cast<Eigen::Index>(r)).leftCols(T);
  }
  return out;
}

Perturbation Perturbation::zeros(std::size_t batch, int length, int dim) {
  Perturbation p;
  p.steps.assign(static_cast<std::size_t>(length),
                 Matrix::Zero(static_cast<Eigen::Index>(batch), dim));
  return p;
}

double Perturbation::example_norm(std::size_t b) const {
  double s = 0.0;
  for (const auto& m : steps) s += m.row(static_cast<Eigen::Index>(b)).squaredNorm();
  return std::sqrt(s);
}

Embedded embed(const Batch& batch, const ModelParams& params) {
  const Matrix& table = params[ModelParams::kWordEmbedding];
  Embedded out;
  out.mask = batch.mask;
  const int T = batch.max_length();
  for (int t = 0; t < T; ++t) {
    Matrix step(static_cast<Eigen::Index>(batch.size()), table.cols());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const int id = batch.tokens[b][static_cast<std::size_t>(t)];
      if (id < 0 || id >= table.rows()) throw std::out_of_range("embed: token id out of range");
      if (batch.mask(static_cast<Eigen::Index>(b), t) == 0.0) {
        step.row(static_cast<Eigen::Index>(b)).setZero();
      } else {
        step.row(static_cast<Eigen::Index>(b)) = table.row(id);
      }
    }
    out.steps.push_back(std::move(step));
  }
  return out;
}

int argmax(const Eigen::Ref<const RowVector>& row) {
  int best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i) {
    if (row(i) > row(best)) best = static_cast<int>(i);
  }
  return best;
}

ForwardResult forward(ad::Tape& tape, const ModelParams& params, const Batch& batch,
                      const ForwardOptions& options) {
  using P = ModelParams;
  const ModelDims& dims = params.dims();
  const auto B = static_cast<Eigen::Index>(batch.size());
  const int T = batch.max_length();
  const int H = dims.hidden;
  const bool train = options.train_params;
  const bool dropout = options.rng != nullptr;

  if (options.perturbation) {
    const auto& steps = options.perturbation->steps;
    bool ok = static_cast<int>(steps.size()) == T;
    for (const auto& m : steps) ok = ok && m.rows() == B && m.cols() == dims.word_dim;
    if (!ok) throw std::invalid_argument("forward: perturbation shape does not match batch");
  }
  if (options.conditioning == SlotConditioning::kFixedTags) {
    if (!options.fixed_tags || options.fixed_tags->size() != batch.size()) {
      throw std::invalid_argument("forward: fixed tags missing or misaligned");
    }
    for (const auto& row : *options.fixed_tags) {
      if (static_cast<int>(row.size()) < T) throw std::invalid_argument("forward: fixed tags too short");
    }
  }

  auto param = [&](std::size_t slot) { return tape.param(slot, params[slot], train); };
  ForwardResult result;

  // Embeddings, dropout, perturbation.
  std::vector<ad::Var> inputs;
  inputs.reserve(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    std::vector<int> ids(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const int id = batch.tokens[b][static_cast<std::size_t>(t)];
      if (id < 0 || id >= dims.vocab) throw std::out_of_range("forward: token id out of range");
      ids[b] = batch.mask(static_cast<Eigen::Index>(b), t) != 0.0 ? id : -1;
    }
    ad::Var x = tape.gather_rows(P::kWordEmbedding, params[P::kWordEmbedding], ids, train);
    if (dropout && options.embedding_dropout > 0.0) {
      x = tape.mul_const(x, dropout_mask(B, dims.word_dim, options.embedding_dropout, *options.rng));
    }
    if (options.perturbation) {
      Matrix r = options.perturbation->steps[static_cast<std::size_t>(t)];
      for (Eigen::Index b = 0; b < B; ++b) {
        if (batch.mask(b, t) == 0.0) r.row(b).setZero();
      }
      ad::Var rv = options.perturbation_grad ? tape.leaf(std::move(r)) : tape.constant(std::move(r));
      if (options.perturbation_grad) result.perturbation_leaves.push_back(rv);
      x = tape.add(x, rv);
    }
    inputs.push_back(x);
  }

  // Bidirectional encoder. Padded steps carry the previous state unchanged,
  // so the backward direction effectively starts at each row's last token.
  auto run_lstm = [&](std::size_t wx_slot, std::size_t wh_slot, std::size_t b_slot, bool reverse) {
    ad::Var wx = param(wx_slot), wh = param(wh_slot), bias = param(b_slot);
    ad::Var h = tape.constant(Matrix::Zero(B, H));
    ad::Var c = tape.constant(Matrix::Zero(B, H));
    std::vector<ad::Var> outs(static_cast<std::size_t>(T));
    for (int k = 0; k < T; ++k) {
      const int t = reverse ? T - 1 - k : k;
      ad::Var z = tape.add_row(tape.add(tape.matmul(inputs[static_cast<std::size_t>(t)], wx),
                                        tape.matmul(h, wh)),
                               bias);
      ad::Var hc = tape.lstm_cell(z, c);
      const Vector m = batch.mask.col(t);
      h = tape.blend(m, tape.slice_cols(hc, 0, H), h);
      c = tape.blend(m, tape.slice_cols(hc, H, H), c);
      outs[static_cast<std::size_t>(t)] = h;
    }
    return std::make_pair(outs, h);
  };
  auto [fw, fw_last] = run_lstm(P::kEncoderForwardInput, P::kEncoderForwardRecurrent,
                                P::kEncoderForwardBias, false);
  auto [bw, bw_first] = run_lstm(P::kEncoderBackwardInput, P::kEncoderBackwardRecurrent,
                                 P::kEncoderBackwardBias, true);
  std::vector<ad::Var> enc(static_cast<std::size_t>(T));
  for (std::size_t t = 0; t < enc.size(); ++t) {
    const std::array<ad::Var, 2> parts = {fw[t], bw[t]};
    enc[t] = tape.concat_cols(parts);
  }
  const std::array<ad::Var, 2> last_parts = {fw_last, bw_first};
  ad::Var h_last = tape.concat_cols(last_parts);

  // Intent head.
  {
    ad::Var wk = param(P::kIntentAttentionKey);
    std::vector<ad::Var> keys(enc.size());
    for (std::size_t t = 0; t < enc.size(); ++t) keys[t] = tape.matmul(enc[t], wk);
    ad::Var query = tape.matmul(h_last, param(P::kIntentAttentionQuery));
    ad::Var scores = tape.additive_scores(keys, query, param(P::kIntentAttentionVector));
    ad::Var alpha = tape.masked_softmax_rows(scores, batch.mask);
    ad::Var context = tape.weighted_sum(alpha, enc);
    const std::array<ad::Var, 2> feat_parts = {context, h_last};
    ad::Var feat = tape.concat_cols(feat_parts);
    if (dropout && options.classifier_dropout > 0.0) {
      feat = tape.mul_const(feat, dropout_mask(B, 4 * H, options.classifier_dropout, *options.rng));
    }
    ad::Var logits = tape.add_row(tape.matmul(feat, param(P::kIntentOutput)), param(P::kIntentBias));
    result.intent_logp = tape.log_softmax_rows(logits);
  }

  // Slot decoder.
  {
    ad::Var wk = param(P::kSlotAttentionKey);
    std::vector<ad::Var> keys(enc.size());
    for (std::size_t t = 0; t < enc.size(); ++t) keys[t] = tape.matmul(enc[t], wk);
    ad::Var wq = param(P::kSlotAttentionQuery), va = param(P::kSlotAttentionVector);
    ad::Var wx = param(P::kDecoderInput), wh = param(P::kDecoderRecurrent), bias = param(P::kDecoderBias);
    ad::Var wo = param(P::kSlotOutput), bo = param(P::kSlotBias);
    ad::Var d = tape.constant(Matrix::Zero(B, H));
    ad::Var c = tape.constant(Matrix::Zero(B, H));
    result.argmax_tags.assign(batch.size(), std::vector<int>(static_cast<std::size_t>(T), -1));
    std::vector<int> prev(batch.size(), dims.slots);  // BOS
    for (int t = 0; t < T; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      if (t > 0) {
        for (std::size_t b = 0; b < batch.size(); ++b) {
          int tag = dims.slots;
          switch (options.conditioning) {
            case SlotConditioning::kTeacherForced: tag = batch.slots[b][ts - 1]; break;
            case SlotConditioning::kFixedTags: tag = (*options.fixed_tags)[b][ts - 1]; break;
            case SlotConditioning::kGreedy: tag = result.argmax_tags[b][ts - 1]; break;
          }
          // Unknown or padded conditioning tags fall back to BOS.
          prev[b] = (tag >= 0 && tag < dims.slots) ? tag : dims.slots;
        }
      }
      ad::Var s_prev = tape.gather_rows(P::kSlotEmbedding, params[P::kSlotEmbedding], prev, train);
      ad::Var scores = tape.additive_scores(keys, tape.matmul(s_prev, wq), va);
      ad::Var alpha = tape.masked_softmax_rows(scores, batch.mask);
      ad::Var context = tape.weighted_sum(alpha, enc);
      const std::array<ad::Var, 3> in_parts = {enc[ts], context, s_prev};
      ad::Var input = tape.concat_cols(in_parts);
      ad::Var z = tape.add_row(tape.add(tape.matmul(input, wx), tape.matmul(d, wh)), bias);
      ad::Var hc = tape.lstm_cell(z, c);
      const Vector m = batch.mask.col(t);
      d = tape.blend(m, tape.slice_cols(hc, 0, H), d);
      c = tape.blend(m, tape.slice_cols(hc, H, H), c);
      ad::Var out = d;
      if (dropout && options.classifier_dropout > 0.0) {
        out = tape.mul_const(out, dropout_mask(B, H, options.classifier_dropout, *options.rng));
      }
      ad::Var logp = tape.log_softmax_rows(tape.add_row(tape.matmul(out, wo), bo));
      const Matrix& lp = tape.value(logp);
      for (std::size_t b = 0; b < batch.size(); ++b) {
        result.argmax_tags[b][ts] = argmax(lp.row(static_cast<Eigen::Index>(b)));
      }
      result.slot_logp.push_back(logp);
    }
  }
  return result;
}

Posteriors posteriors(const ad::Tape& tape, const ForwardResult& result, const Batch& batch) {
  Posteriors p;
  p.intent = tape.value(result.intent_logp).array().exp().matrix();
  for (const auto& v : result.slot_logp) p.slot.push_back(tape.value(v).array().exp().matrix());
  p.mask = batch.mask;
  return p;
}

Posteriors infer(const ModelParams& params, const Batch& batch, SlotConditioning conditioning,
                 const std::vector<std::vector<int>>* fixed_tags, const Perturbation* perturbation) {
  ad::Tape tape(false);
  ForwardOptions opts;
  opts.conditioning = conditioning;
  opts.fixed_tags = fixed_tags;
  opts.perturbation = perturbation;
  const auto result = forward(tape, params, batch, opts);
  return posteriors(tape, result, batch);
}

Prediction predict(const ModelParams& params, const Batch& batch) {
  if (!params.all_finite()) throw std::invalid_argument("predict: non-finite parameters");
  ad::Tape tape(false);
  ForwardOptions opts;
  opts.conditioning = SlotConditioning::kGreedy;
  const auto result = forward(tape, params, batch, opts);
  Prediction pred;
  const Matrix& lp = tape.value(result.intent_logp);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    pred.intents.push_back(argmax(lp.row(static_cast<Eigen::Index>(b))));
    const auto& tags = result.argmax_tags[b];
    pred.slots.emplace_back(tags.begin(), tags.begin() + batch.lengths[b]);
  }
  return pred;
}

}  // namespace viraal
