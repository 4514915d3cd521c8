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

#include "viraal/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace viraal {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  // A trailing empty line is a file terminator, not an utterance.
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ' ';
    out += parts[i];
  }
  return out;
}

std::uint64_t hash_strings(const std::vector<std::string>& items) {
  std::uint64_t h = fnv1a("");
  for (const auto& s : items) {
    h = fnv1a(s, h);
    h = fnv1a(std::string_view("\0", 1), h);
  }
  return h;
}

Example make_example(int id, std::vector<std::string> tokens, std::vector<std::string> slots,
                     std::string intent, Split split, const std::string& file, std::size_t line) {
  if (tokens.empty()) throw CorpusError(file + ":" + std::to_string(line) + ": empty utterance");
  if (tokens.size() != slots.size()) throw AlignmentError(file, line, tokens.size(), slots.size());
  if (intent.empty()) throw CorpusError(file + ":" + std::to_string(line) + ": missing intent");
  Example ex;
  ex.utterance.id = id;
  ex.utterance.tokens = std::move(tokens);
  ex.annotation = Annotation{std::move(intent), std::move(slots)};
  ex.split = split;
  return ex;
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev" || name == "valid") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split: " + std::string(name));
}

AlignmentError::AlignmentError(const std::string& file, std::size_t line, std::size_t tokens,
                               std::size_t slots)
    : CorpusError(file + ":" + std::to_string(line) + ": " + std::to_string(tokens) +
                  " tokens but " + std::to_string(slots) + " slot tags"),
      line_(line) {}

std::vector<Example> load_split(const fs::path& path, Split split, int first_id) {
  std::vector<Example> out;
  if (fs::is_directory(path)) {
    const auto in_path = path / "seq.in";
    const auto words = read_lines(in_path);
    const auto tags = read_lines(path / "seq.out");
    const auto labels = read_lines(path / "label");
    if (words.size() != tags.size() || words.size() != labels.size()) {
      throw CorpusError(path.string() + ": line counts differ (seq.in " +
                        std::to_string(words.size()) + ", seq.out " + std::to_string(tags.size()) +
                        ", label " + std::to_string(labels.size()) + ")");
    }
    out.reserve(words.size());
    for (std::size_t i = 0; i < words.size(); ++i) {
      out.push_back(make_example(first_id + static_cast<int>(i), split_ws(words[i]),
                                 split_ws(tags[i]), trim(labels[i]), split, in_path.string(),
                                 i + 1));
    }
    return out;
  }
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<std::string> fields;
    std::stringstream ss(lines[i]);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 3) {
      throw CorpusError(path.string() + ":" + std::to_string(i + 1) +
                        ": expected 3 tab-separated fields");
    }
    out.push_back(make_example(first_id + static_cast<int>(i), split_ws(fields[0]),
                               split_ws(fields[1]), trim(fields[2]), split, path.string(), i + 1));
  }
  return out;
}

void save_split(const fs::path& dir, std::span<const Example> examples) {
  fs::create_directories(dir);
  std::ofstream in(dir / "seq.in"), out(dir / "seq.out"), label(dir / "label");
  if (!in || !out || !label) throw std::ios_base::failure("cannot write " + dir.string());
  for (const auto& ex : examples) {
    if (!ex.annotation) throw CorpusError("save_split: example without annotation");
    in << join(ex.utterance.tokens) << '\n';
    out << join(ex.annotation->slots) << '\n';
    label << ex.annotation->intent << '\n';
  }
}

std::vector<Example> carve_dev(std::vector<Example>& train, std::size_t count,
                               std::uint64_t seed) {
  if (count > train.size()) throw std::invalid_argument("carve_dev: count exceeds train size");
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> take(train.size(), false);
  for (std::size_t i = 0; i < count; ++i) take[order[i]] = true;
  std::vector<Example> keep, dev;
  for (std::size_t i = 0; i < train.size(); ++i) {
    Example ex = std::move(train[i]);
    if (take[i]) {
      ex.split = Split::kDev;
      dev.push_back(std::move(ex));
    } else {
      keep.push_back(std::move(ex));
    }
  }
  train = std::move(keep);
  return dev;
}

Dataset load_dataset(const fs::path& root, std::size_t dev_extract, std::uint64_t seed) {
  Dataset ds;
  ds.name = root.filename().string();
  if (ds.name.empty()) ds.name = root.parent_path().filename().string();
  ds.train = load_split(root / "train", Split::kTrain, 0);
  int next = static_cast<int>(ds.train.size());
  fs::path dev_dir;
  for (const char* name : {"dev", "valid"}) {
    if (fs::exists(root / name)) dev_dir = root / name;
  }
  if (!dev_dir.empty()) {
    ds.dev = load_split(dev_dir, Split::kDev, next);
  } else if (dev_extract > 0) {
    ds.dev = carve_dev(ds.train, dev_extract, seed);
  }
  next += static_cast<int>(ds.dev.size());
  ds.test = load_split(root / "test", Split::kTest, next);

  std::uint64_t h = fnv1a("");
  for (const auto* part : {&ds.train, &ds.dev, &ds.test}) {
    for (const auto& ex : *part) {
      h = fnv1a(join(ex.utterance.tokens), h);
      h = fnv1a(join(ex.annotation->slots), h);
      h = fnv1a(ex.annotation->intent, h);
    }
  }
  ds.content_hash = h;
  return ds;
}

Vocabulary::Vocabulary() {
  add_word("<pad>");
  add_word("<unk>");
}

int Vocabulary::add_word(std::string_view word) {
  auto [it, inserted] = word_index_.emplace(std::string(word), static_cast<int>(words_.size()));
  if (inserted) words_.emplace_back(word);
  return it->second;
}

int Vocabulary::add_slot(std::string_view tag) {
  auto [it, inserted] = slot_index_.emplace(std::string(tag), static_cast<int>(slots_.size()));
  if (inserted) slots_.emplace_back(tag);
  return it->second;
}

int Vocabulary::add_intent(std::string_view intent) {
  auto [it, inserted] =
      intent_index_.emplace(std::string(intent), static_cast<int>(intents_.size()));
  if (inserted) intents_.emplace_back(intent);
  return it->second;
}

int Vocabulary::word_id(std::string_view word) const {
  auto it = word_index_.find(std::string(word));
  return it == word_index_.end() ? kUnk : it->second;
}

int Vocabulary::slot_id(std::string_view tag) const {
  auto it = slot_index_.find(std::string(tag));
  return it == slot_index_.end() ? -1 : it->second;
}

int Vocabulary::intent_id(std::string_view intent) const {
  auto it = intent_index_.find(std::string(intent));
  return it == intent_index_.end() ? -1 : it->second;
}

std::uint64_t Vocabulary::word_hash() const { return hash_strings(words_); }
std::uint64_t Vocabulary::slot_hash() const { return hash_strings(slots_); }
std::uint64_t Vocabulary::intent_hash() const { return hash_strings(intents_); }

nlohmann::json Vocabulary::to_json() const {
  return {{"words", words_}, {"slots", slots_}, {"intents", intents_}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  const auto words = j.at("words").get<std::vector<std::string>>();
  if (words.size() < 2 || words[0] != "<pad>" || words[1] != "<unk>") {
    throw CorpusError("vocabulary: reserved word ids missing");
  }
  for (std::size_t i = 2; i < words.size(); ++i) v.add_word(words[i]);
  for (const auto& s : j.at("slots")) v.add_slot(s.get<std::string>());
  for (const auto& s : j.at("intents")) v.add_intent(s.get<std::string>());
  return v;
}

bool Vocabulary::operator==(const Vocabulary& other) const {
  return words_ == other.words_ && slots_ == other.slots_ && intents_ == other.intents_;
}

Vocabulary build_vocab(std::span<const Example> examples) {
  if (examples.empty()) throw std::invalid_argument("build_vocab: no examples");
  Vocabulary v;
  for (const auto& ex : examples) {
    for (const auto& w : ex.utterance.tokens) v.add_word(w);
  }
  extend_labels(v, examples);
  return v;
}

void extend_labels(Vocabulary& vocab, std::span<const Example> examples) {
  for (const auto& ex : examples) {
    if (!ex.annotation) continue;
    for (const auto& s : ex.annotation->slots) vocab.add_slot(s);
    vocab.add_intent(ex.annotation->intent);
  }
}

EmbeddingMatrix random_embeddings(const Vocabulary& vocab, int dim, std::uint64_t seed,
                                  bool normalize) {
  EmbeddingMatrix m;
  m.vectors = Matrix::Zero(static_cast<Eigen::Index>(vocab.word_count()), dim);
  m.pretrained.assign(vocab.word_count(), false);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.1);
  for (Eigen::Index r = 1; r < m.vectors.rows(); ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) m.vectors(r, c) = gauss(rng);
  }
  if (normalize) normalize_embeddings(m);
  return m;
}

EmbeddingMatrix load_pretrained(const fs::path& path, const Vocabulary& vocab, bool normalize,
                                std::uint64_t seed, int dim) {
  EmbeddingMatrix m = random_embeddings(vocab, dim, seed, false);
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto fields = split_ws(line);
    if (fields.empty()) continue;
    if (lineno == 1 && fields.size() == 2) continue;  // "count dim" header
    if (static_cast<int>(fields.size()) != dim + 1) {
      throw CorpusError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(dim) + " values, found " +
                        std::to_string(fields.size() - 1));
    }
    const int id = vocab.word_id(fields[0]);
    if (id == Vocabulary::kUnk && fields[0] != "<unk>") continue;
    if (id == Vocabulary::kPad) continue;
    m.pretrained[static_cast<std::size_t>(id)] = true;
    for (int c = 0; c < dim; ++c) {
      const auto& f = fields[static_cast<std::size_t>(c) + 1];
      double value = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw CorpusError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + f +
                          "'");
      }
      m.vectors(id, c) = value;
    }
  }
  if (normalize) normalize_embeddings(m);
  return m;
}

EmbeddingMatrix reseed_missing(const EmbeddingMatrix& raw, std::uint64_t seed, bool normalize) {
  if (raw.normalized) throw std::invalid_argument("reseed_missing: embeddings already normalized");
  EmbeddingMatrix m = raw;
  m.pretrained.resize(static_cast<std::size_t>(m.vectors.rows()), false);
  // Same draw order as random_embeddings, so the result equals a fresh load under `seed`.
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.1);
  for (Eigen::Index r = 1; r < m.vectors.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.vectors.cols(); ++c) {
      const double v = gauss(rng);
      if (!m.pretrained[static_cast<std::size_t>(r)]) m.vectors(r, c) = v;
    }
  }
  m.vectors.row(Vocabulary::kPad).setZero();
  if (normalize) normalize_embeddings(m);
  return m;
}

void normalize_embeddings(EmbeddingMatrix& embeddings) {
  Matrix& v = embeddings.vectors;
  const Eigen::Index n = v.rows() - 1;
  if (n <= 0) return;
  auto body = v.bottomRows(n);
  const RowVector mean = body.colwise().mean();
  body.rowwise() -= mean;
  RowVector var = body.array().square().colwise().sum() / static_cast<double>(n);
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    const double sd = std::sqrt(var(c));
    if (sd > 0.0) body.col(c) /= sd;
  }
  v.row(Vocabulary::kPad).setZero();
  embeddings.normalized = true;
}

RegimeSample sample_covering(std::span<const Example> train, std::size_t count,
                             std::uint64_t seed) {
  if (count > train.size()) throw std::invalid_argument("sample_covering: count exceeds train size");
  std::map<std::string, std::vector<std::size_t>> by_intent;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (!train[i].annotation) {
      throw std::invalid_argument("sample_covering: train example without annotation");
    }
    by_intent[train[i].annotation->intent].push_back(i);
  }
  if (count < by_intent.size()) {
    throw std::invalid_argument("sample_covering: " + std::to_string(count) +
                                " labeled examples cannot cover " +
                                std::to_string(by_intent.size()) + " intents");
  }
  std::mt19937_64 rng(seed);
  std::vector<bool> chosen(train.size(), false);
  for (const auto& [intent, members] : by_intent) {
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    chosen[members[pick(rng)]] = true;
  }
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (!chosen[i]) rest.push_back(i);
  }
  std::shuffle(rest.begin(), rest.end(), rng);
  for (std::size_t i = 0; i < count - by_intent.size(); ++i) chosen[rest[i]] = true;

  RegimeSample s;
  for (std::size_t i = 0; i < train.size(); ++i) {
    (chosen[i] ? s.labeled : s.unlabeled).push_back(train[i].utterance.id);
  }
  std::sort(s.labeled.begin(), s.labeled.end());
  std::sort(s.unlabeled.begin(), s.unlabeled.end());
  return s;
}

RegimeSample sample_regime(std::span<const Example> train, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 100.0)) {
    throw std::invalid_argument("sample_regime: fraction must be in (0, 100]");
  }
  const auto count = static_cast<std::size_t>(
      std::llround(fraction / 100.0 * static_cast<double>(train.size())));
  return sample_covering(train, count, seed);
}

void write_regime_manifest(const fs::path& path, std::span<const Example> examples,
                           const RegimeSample& sample, std::uint64_t seed, double fraction) {
  std::set<int> labeled(sample.labeled.begin(), sample.labeled.end());
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  for (const auto& ex : examples) {
    nlohmann::json rec = {{"id", ex.utterance.id},
                          {"split", split_name(ex.split)},
                          {"labeled", labeled.count(ex.utterance.id) > 0},
                          {"seed", seed},
                          {"fraction", fraction}};
    out << rec.dump() << '\n';
  }
}

}  // namespace viraal
