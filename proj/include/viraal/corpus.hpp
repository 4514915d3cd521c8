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

#ifndef VIRAAL_CORPUS_HPP_
#define VIRAAL_CORPUS_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "viraal/autodiff.hpp"

namespace viraal {

enum class Split { kTrain, kDev, kTest };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct Utterance {
  int id = 0;
  std::vector<std::string> tokens;

  std::size_t length() const { return tokens.size(); }
};

struct Annotation {
  std::string intent;
  std::vector<std::string> slots;  // aligned with Utterance::tokens
};

struct Example {
  Utterance utterance;
  std::optional<Annotation> annotation;
  Split split = Split::kTrain;

  bool labeled() const { return annotation.has_value(); }
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A line whose token and slot counts differ. `line` is 1-based.
class AlignmentError : public CorpusError {
 public:
  AlignmentError(const std::string& file, std::size_t line, std::size_t tokens, std::size_t slots);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Reads a split. `path` is either a directory holding `seq.in`, `seq.out` and
/// `label`, or a single file of `tokens \t slots \t intent` lines. Example ids
/// are assigned sequentially from `first_id`.
std::vector<Example> load_split(const std::filesystem::path& path, Split split, int first_id = 0);

/// Writes annotated examples in the three-file layout.
void save_split(const std::filesystem::path& dir, std::span<const Example> examples);

struct Dataset {
  std::string name;
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
  std::uint64_t content_hash = 0;
};

/// Loads `train/`, `dev/` (or `valid/`) and `test/` below `root`. When no dev
/// directory exists, `dev_extract` examples are carved from train with `seed`.
Dataset load_dataset(const std::filesystem::path& root, std::size_t dev_extract = 500,
                     std::uint64_t seed = 0);

/// Removes `count` random examples from `train` and returns them as dev.
std::vector<Example> carve_dev(std::vector<Example>& train, std::size_t count, std::uint64_t seed);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary();

  int add_word(std::string_view word);
  int add_slot(std::string_view tag);
  int add_intent(std::string_view intent);

  /// kUnk for unknown words.
  int word_id(std::string_view word) const;
  /// -1 when absent.
  int slot_id(std::string_view tag) const;
  int intent_id(std::string_view intent) const;

  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::string& slot(int id) const { return slots_.at(static_cast<std::size_t>(id)); }
  const std::string& intent(int id) const { return intents_.at(static_cast<std::size_t>(id)); }

  /// Including PAD and UNK.
  std::size_t word_count() const { return words_.size(); }
  /// Predictable slot classes; the BOS conditioning id sits right after them.
  std::size_t slot_count() const { return slots_.size(); }
  std::size_t intent_count() const { return intents_.size(); }
  int bos_slot() const { return static_cast<int>(slots_.size()); }

  std::uint64_t word_hash() const;
  std::uint64_t slot_hash() const;
  std::uint64_t intent_hash() const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  bool operator==(const Vocabulary& other) const;

 private:
  std::vector<std::string> words_, slots_, intents_;
  std::unordered_map<std::string, int> word_index_, slot_index_, intent_index_;
};

/// Indexes every word, slot tag and intent in corpus order.
Vocabulary build_vocab(std::span<const Example> examples);
/// Adds slot tags and intents (but no words) seen in `examples`.
void extend_labels(Vocabulary& vocab, std::span<const Example> examples);

struct EmbeddingMatrix {
  Matrix vectors;  // word_count x dim; PAD row is zero
  bool normalized = false;
  std::vector<bool> pretrained;  // rows read from a vector file

  Eigen::Index dim() const { return vectors.cols(); }
};

/// Reads `word v1 ... vD` rows. Words absent from the file get N(0, 0.1^2)
/// draws under `seed`. A leading `count dim` header line is tolerated.
EmbeddingMatrix load_pretrained(const std::filesystem::path& path, const Vocabulary& vocab,
                                bool normalize, std::uint64_t seed, int dim = 300);
/// Gaussian N(0, 0.1^2) rows for every word except PAD.
EmbeddingMatrix random_embeddings(const Vocabulary& vocab, int dim, std::uint64_t seed,
                                  bool normalize = false);
/// Per-dimension zero mean and unit variance over the non-PAD rows.
void normalize_embeddings(EmbeddingMatrix& embeddings);
/// Copy of unnormalized `raw` with every non-pretrained row redrawn under `seed`.
EmbeddingMatrix reseed_missing(const EmbeddingMatrix& raw, std::uint64_t seed, bool normalize);

struct RegimeSample {
  std::vector<int> labeled;    // example ids, ascending
  std::vector<int> unlabeled;  // example ids, ascending
};

/// Labels round(fraction / 100 * |train|) examples with at least one example
/// of every intent; the rest form the unlabeled pool.
RegimeSample sample_regime(std::span<const Example> train, double fraction, std::uint64_t seed);
/// Same construction with an explicit labeled count.
RegimeSample sample_covering(std::span<const Example> train, std::size_t count,
                             std::uint64_t seed);

/// One JSON object per line: {id, split, labeled, seed, fraction}.
void write_regime_manifest(const std::filesystem::path& path, std::span<const Example> examples,
                           const RegimeSample& sample, std::uint64_t seed, double fraction);

/// FNV-1a over bytes, used for dataset and vocabulary fingerprints.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 14695981039346656037ull);

}  // namespace viraal

#endif  // VIRAAL_CORPUS_HPP_
