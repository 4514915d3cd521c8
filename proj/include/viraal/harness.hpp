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

#ifndef VIRAAL_HARNESS_HPP_
#define VIRAAL_HARNESS_HPP_

// Experiment driver: regime sweeps, two-round active learning, Small/Medium
// comparisons and aggregation over seeds.
//
// Every experiment is a list of independent cells, one per
// (experiment, dataset, variant, fraction, seed). A finished cell is a JSON
// file under <out>/cells; rerunning an experiment skips cells whose file
// reports success.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "viraal/active_learning.hpp"
#include "viraal/corpus.hpp"
#include "viraal/metrics.hpp"
#include "viraal/trainer.hpp"

namespace viraal {

/// Dataset, vocabulary and (optionally) raw pretrained vectors shared by all
/// cells of an experiment.
struct ExperimentContext {
  Dataset dataset;
  Vocabulary vocab;
  std::optional<EmbeddingMatrix> pretrained;  // unnormalized; OOV rows redrawn per seed
  RunConfig base;

  /// Embeddings for one run: pretrained rows plus seeded OOV draws, or fully
  /// random rows when no vector file was given.
  EmbeddingMatrix embeddings(std::uint64_t seed) const;
};

/// Vocabulary from every train utterance plus the label inventories of dev
/// and test.
Vocabulary experiment_vocab(const Dataset& dataset);

ExperimentContext make_context(Dataset dataset, RunConfig base,
                               const std::optional<std::filesystem::path>& vectors = std::nullopt);

/// Loads `root` (see load_dataset) and applies the dataset's reference defaults
/// underneath `config_overrides`.
ExperimentContext load_context(const std::filesystem::path& root,
                               const nlohmann::json& config_overrides = nlohmann::json::object(),
                               const std::optional<std::filesystem::path>& vectors = std::nullopt);

enum class ExperimentKind { kRegime, kActiveLearning, kSmallMedium };

std::string_view experiment_name(ExperimentKind kind);
ExperimentKind parse_experiment(std::string_view name);

struct Cell {
  ExperimentKind kind = ExperimentKind::kRegime;
  std::string dataset;
  /// Regime: "<ce|vat>-<int|slot|joint>". AL: "<ce|vat>-<random|ent>-<task>".
  /// Small/Medium: baseline, vat-joint, viraal-joint-entropy,
  /// viraal-individual-entropy.
  std::string variant;
  /// Labeled percentage (regime), total budget X (AL); 0 for Small/Medium.
  double fraction = 0.0;
  /// "small" or "medium" for Small/Medium cells, empty otherwise.
  std::string split;
  std::uint64_t seed = 0;

  std::string id() const;
  nlohmann::json to_json() const;
  static Cell from_json(const nlohmann::json& j);
};

struct CellOutcome {
  Cell cell;
  bool ok = false;
  std::string error;
  MetricsReport report;
  nlohmann::json details = nlohmann::json::object();
  nlohmann::json manifest = nlohmann::json::object();

  nlohmann::json to_json() const;
  static CellOutcome from_json(const nlohmann::json& j);
};

/// Reference fraction grids: ATIS 5 and multiples of 10; SNIPS 1..10 and
/// multiples of 10.
std::vector<double> default_fractions(std::string_view dataset);
/// Reference AL budgets X: ATIS {10,20,40,50,60}, SNIPS {2,4,6,8,10,20,40}.
std::vector<double> default_budgets(std::string_view dataset);
/// Small/Medium labeled sizes: ATIS 129/515, SNIPS 327/1308.
std::size_t small_medium_size(std::string_view dataset, std::string_view split);

std::vector<Cell> regime_cells(std::string_view dataset, std::span<const double> fractions,
                               std::span<const std::string> variants,
                               std::span<const std::uint64_t> seeds);
std::vector<Cell> al_cells(std::string_view dataset, std::span<const double> budgets,
                           std::span<const std::string> variants,
                           std::span<const std::uint64_t> seeds);
std::vector<Cell> small_medium_cells(std::string_view dataset, std::span<const std::string> splits,
                                     std::span<const std::string> methods,
                                     std::span<const std::uint64_t> seeds);

std::vector<std::string> all_regime_variants();
std::vector<std::string> all_al_variants();
std::vector<std::string> all_small_medium_methods();

/// Deterministic seed mixing for derived random streams.
std::uint64_t derive_seed(std::string_view tag, std::string_view dataset, double fraction,
                          std::uint64_t seed);

/// Training ids, validation ids carved from the labeled set, and pool ids.
struct LabeledSplit {
  std::vector<int> labeled;
  std::vector<int> validation;
  std::vector<int> pool;

  /// Fingerprint of labeled + validation, used to prove initial-set sharing.
  std::uint64_t hash() const;
};

/// Carves a validation set of round(|labeled| * dev_size / |train|) ids (at
/// least one when possible) out of `sample.labeled`, never taking the
/// lowest-id example of any intent so training keeps full intent coverage.
LabeledSplit with_validation(const RegimeSample& sample, std::span<const Example> train,
                             std::size_t dev_size, std::uint64_t seed);

/// Initial set of an AL run: X/2 percent of train, derived from
/// (dataset, X, seed) only so every method starts from the same ids.
LabeledSplit al_initial_split(std::span<const Example> train, std::string_view dataset,
                              double budget_percent, std::uint64_t seed, std::size_t dev_size);

/// Number of ids queried in round two: round(X/2 percent of train).
std::size_t al_round_budget(std::size_t train_size, double budget_percent);

/// One query round: score `pool` with `params`, select by `spec`. `ids` and
/// `scored` are in query order (ascending confidence for entropy criteria).
struct RoundSelection {
  std::vector<int> ids;
  std::vector<ScoredExample> scored;
  std::vector<ConfidenceRecord> pool_records;  // every pool item, joint confidence filled
};

RoundSelection query_round(const ModelParams& params, std::span<const Example> corpus,
                           std::span<const int> pool, const Vocabulary& vocab,
                           const QuerySpec& spec);

/// Criterion used by the entropy variants for a task ("int", "slot", "joint").
QueryCriterion entropy_criterion_for(std::string_view task);

struct HarnessOptions {
  std::filesystem::path out_dir;
  int jobs = 1;
  /// Batch sizes tried for Small/Medium fits.
  std::vector<int> tune_batch_sizes = {4, 8, 16, 32, 64};
  /// Save round-one checkpoints of AL cells under <out>/checkpoints.
  bool keep_checkpoints = false;
  std::function<void(const std::string&)> log;
};

CellOutcome run_cell(const Cell& cell, const ExperimentContext& context,
                     const HarnessOptions& options);

struct RunSummary {
  std::vector<CellOutcome> outcomes;
  std::size_t computed = 0;
  std::size_t reused = 0;
  std::size_t failed = 0;
};

/// Runs every missing cell (in `jobs` worker processes when jobs > 1) and
/// returns all outcomes, including the ones reused from earlier runs.
RunSummary run_cells(std::span<const Cell> cells, const ExperimentContext& context,
                     const HarnessOptions& options);

std::filesystem::path cell_path(const std::filesystem::path& out_dir, const Cell& cell);
/// Outcome stored for `cell`, if a file exists.
std::optional<CellOutcome> load_cell(const std::filesystem::path& out_dir, const Cell& cell);
/// Every stored outcome below <out>/cells.
std::vector<CellOutcome> load_cells(const std::filesystem::path& out_dir);

struct Stats {
  double mean = 0.0;
  double std = 0.0;  // population convention (divide by n)
  std::size_t n = 0;
};

Stats mean_std(std::span<const double> values);

struct AggregateRow {
  std::string experiment;
  std::string dataset;
  std::string variant;
  std::string split;
  double fraction = 0.0;
  Stats intent_accuracy;  // percentage points
  Stats slot_f1;
  std::size_t failed = 0;
  std::vector<std::string> sources;  // cell ids
};

std::vector<AggregateRow> aggregate(std::span<const CellOutcome> outcomes);

/// summary.csv plus one plot-data CSV per figure panel under <out>/plots.
void write_reports(const std::filesystem::path& out_dir, std::span<const AggregateRow> rows);

}  // namespace viraal

#endif  // VIRAAL_HARNESS_HPP_
