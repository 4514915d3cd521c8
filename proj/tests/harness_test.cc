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

#include "viraal/harness.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "support/experiment.hpp"
#include "support/tempdir.hpp"

namespace viraal {
namespace {

using testing::TempDir;

TEST(Aggregate, ConstantScoresHaveZeroSpread) {
  const std::vector<double> v(8, 1.0);
  const Stats s = mean_std(v);
  EXPECT_EQ(s.mean, 1.0);
  EXPECT_EQ(s.std, 0.0);
  EXPECT_EQ(s.n, 8u);
}

TEST(Aggregate, PopulationConvention) {
  const std::vector<double> v = {0.0, 2.0};
  const Stats s = mean_std(v);
  EXPECT_EQ(s.mean, 1.0);
  EXPECT_EQ(s.std, 1.0);
}

TEST(Aggregate, MatchesMomentFormula) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(50.0, 100.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(8);
    for (auto& x : v) x = u(rng);
    long double sum = 0, sq = 0;
    for (double x : v) {
      sum += x;
      sq += static_cast<long double>(x) * x;
    }
    const long double mean = sum / 8;
    const double std_oracle = static_cast<double>(std::sqrt(sq / 8 - mean * mean));
    const Stats s = mean_std(v);
    EXPECT_NEAR(s.mean, static_cast<double>(mean), 1e-12);
    EXPECT_NEAR(s.std, std_oracle, 1e-9);
  }
}

TEST(Aggregate, EmptyInput) {
  const Stats s = mean_std({});
  EXPECT_EQ(s.n, 0u);
  EXPECT_EQ(s.mean, 0.0);
}

CellOutcome outcome(const std::string& variant, double fraction, std::uint64_t seed, double acc,
                    double f1, bool ok = true) {
  CellOutcome o;
  o.cell = {ExperimentKind::kRegime, "atis", variant, fraction, "", seed};
  o.ok = ok;
  o.report.intent_accuracy = acc;
  o.report.slot_f1 = f1;
  if (!ok) o.error = "boom";
  return o;
}

TEST(Aggregate, GroupsCellsAndCountsFailures) {
  std::vector<CellOutcome> outs = {outcome("ce-joint", 10, 0, 0.80, 70), outcome("ce-joint", 10, 1, 0.90, 80),
                                   outcome("ce-joint", 10, 2, 0, 0, false), outcome("vat-joint", 10, 0, 0.5, 50),
                                   outcome("ce-joint", 20, 0, 1.0, 90)};
  const auto rows = aggregate(outs);
  ASSERT_EQ(rows.size(), 3u);
  const AggregateRow& r = rows[0];
  EXPECT_EQ(r.variant, "ce-joint");
  EXPECT_EQ(r.fraction, 10.0);
  EXPECT_EQ(r.intent_accuracy.n, 2u);
  EXPECT_NEAR(r.intent_accuracy.mean, 85.0, 1e-12);
  EXPECT_NEAR(r.intent_accuracy.std, 5.0, 1e-12);
  EXPECT_NEAR(r.slot_f1.mean, 75.0, 1e-12);
  EXPECT_EQ(r.failed, 1u);
  EXPECT_EQ(r.sources, (std::vector<std::string>{outs[0].cell.id(), outs[1].cell.id()}));
  EXPECT_EQ(rows[1].fraction, 20.0);
  EXPECT_EQ(rows[2].variant, "vat-joint");
}

TEST(Aggregate, SingleCellGivesOneRow) {
  const std::vector<CellOutcome> outs = {outcome("vat-int", 30, 4, 0.7, 60)};
  const auto rows = aggregate(outs);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].intent_accuracy.std, 0.0);
}

TEST(Aggregate, ReportsTraceEveryNumberToCells) {
  TempDir dir;
  std::vector<CellOutcome> outs = {outcome("ce-joint", 10, 0, 0.8, 70), outcome("ce-int", 10, 0, 0.6, 0)};
  write_reports(dir.path(), aggregate(outs));
  const std::string summary = testing::read_file(dir / "summary.csv");
  EXPECT_NE(summary.find("experiment,dataset,variant,fraction"), std::string::npos);
  EXPECT_NE(summary.find(outs[0].cell.id()), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "plots/regime_atis_joint.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "plots/regime_atis_int.csv"));
  const std::string panel = testing::read_file(dir / "plots/regime_atis_joint.csv");
  EXPECT_NE(panel.find("ce-joint,10,,1,0,80,0,70,0"), std::string::npos) << panel;
}

TEST(Grid, ReferenceFractionsAndBudgets) {
  EXPECT_EQ(default_fractions("ATIS"), (std::vector<double>{5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100}));
  const auto snips = default_fractions("snips");
  EXPECT_EQ(snips.size(), 19u);
  EXPECT_EQ(snips.front(), 1.0);
  EXPECT_EQ(snips[9], 10.0);
  EXPECT_EQ(snips.back(), 100.0);
  EXPECT_EQ(default_budgets("atis"), (std::vector<double>{10, 20, 40, 50, 60}));
  EXPECT_EQ(default_budgets("SNIPS"), (std::vector<double>{2, 4, 6, 8, 10, 20, 40}));
  EXPECT_EQ(small_medium_size("atis", "small"), 129u);
  EXPECT_EQ(small_medium_size("atis", "medium"), 515u);
  EXPECT_EQ(small_medium_size("snips", "small"), 327u);
  EXPECT_EQ(small_medium_size("snips", "medium"), 1308u);
  EXPECT_THROW(small_medium_size("atis", "large"), std::invalid_argument);
}

TEST(Grid, OneCellPerFractionVariantSeed) {
  const std::vector<double> f = {5, 10};
  const auto variants = all_regime_variants();
  const std::vector<std::uint64_t> seeds = {0, 1, 2};
  const auto cells = regime_cells("atis", f, variants, seeds);
  EXPECT_EQ(cells.size(), 2u * 6u * 3u);
  std::set<std::string> ids;
  for (const auto& c : cells) ids.insert(c.id());
  EXPECT_EQ(ids.size(), cells.size());
  EXPECT_EQ(all_al_variants().size(), 12u);
  const std::vector<double> bad = {0.0};
  EXPECT_THROW(regime_cells("atis", bad, variants, seeds), std::invalid_argument);
}

TEST(Grid, CellJsonRoundTrip) {
  const Cell c{ExperimentKind::kSmallMedium, "snips", "vat-joint", 0.0, "medium", 7};
  const Cell back = Cell::from_json(c.to_json());
  EXPECT_EQ(back.id(), c.id());
  EXPECT_EQ(back.split, "medium");
  EXPECT_EQ(back.seed, 7u);
}

TEST(Split, ValidationCarvedFromLabeledKeepsIntentCoverage) {
  const auto train = testing::synthetic_corpus(400, 2);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const RegimeSample s = sample_regime(train, 10, seed);
    const LabeledSplit split = with_validation(s, train, 100, seed);
    EXPECT_EQ(split.validation.size(), 10u);  // round(40 * 100 / 400)
    EXPECT_EQ(split.labeled.size() + split.validation.size(), s.labeled.size());
    std::vector<int> all = split.labeled;
    all.insert(all.end(), split.validation.begin(), split.validation.end());
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, s.labeled);
    std::set<std::string> intents;
    for (int id : split.labeled) intents.insert(train[static_cast<std::size_t>(id)].annotation->intent);
    EXPECT_EQ(intents.size(), 5u);
    EXPECT_EQ(split.pool, s.unlabeled);
  }
}

TEST(Split, TinyLabeledSetStillGetsOneValidationExample) {
  const auto train = testing::synthetic_corpus(400, 2);
  const RegimeSample s = sample_covering(train, 7, 1);
  const LabeledSplit split = with_validation(s, train, 10, 1);
  EXPECT_EQ(split.validation.size(), 1u);
  const LabeledSplit none = with_validation(s, train, 0, 1);
  EXPECT_TRUE(none.validation.empty());
}

TEST(Split, InitialSetDependsOnlyOnDatasetBudgetAndSeed) {
  const auto train = testing::synthetic_corpus(400, 2);
  const LabeledSplit a = al_initial_split(train, "snips", 10, 3, 50);
  const LabeledSplit b = al_initial_split(train, "snips", 10, 3, 50);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.labeled.size() + a.validation.size(), 20u);  // X/2 = 5% of 400
  EXPECT_NE(al_initial_split(train, "snips", 10, 4, 50).hash(), a.hash());
  EXPECT_NE(al_initial_split(train, "snips", 20, 3, 50).hash(), a.hash());
  EXPECT_NE(al_initial_split(train, "atis", 10, 3, 50).hash(), a.hash());
}

TEST(Split, RoundBudget) {
  EXPECT_EQ(al_round_budget(13084, 2), 131u);
  EXPECT_EQ(al_round_budget(4478, 10), 224u);
  EXPECT_EQ(al_round_budget(100, 1), 1u);  // 0.5 rounds away from zero
}

TEST(Query, SelectionMatchesScoringOracle) {
  const ExperimentContext ctx = testing::synthetic_context();
  const ModelParams params = ModelParams::initialize(ctx.base.dims(ctx.vocab), 4);
  std::vector<int> pool;
  for (int i = 0; i < 60; ++i) pool.push_back(i * 3);
  for (auto criterion : {QueryCriterion::kEntropyIntent, QueryCriterion::kEntropySlot,
                         QueryCriterion::kEntropyJoint, QueryCriterion::kRandom}) {
    const QuerySpec spec{criterion, 12, 9};
    const RoundSelection sel = query_round(params, ctx.dataset.train, pool, ctx.vocab, spec);
    std::vector<const Example*> ptrs;
    for (int id : pool) ptrs.push_back(&ctx.dataset.train[static_cast<std::size_t>(id)]);
    auto records = score_pool(params, ptrs, ctx.vocab);
    joint_confidence(records);
    EXPECT_EQ(sel.ids, select(records, spec));
    ASSERT_EQ(sel.scored.size(), 12u);
    for (std::size_t i = 0; i < sel.ids.size(); ++i) EXPECT_EQ(sel.scored[i].confidence.id, sel.ids[i]);
    if (criterion != QueryCriterion::kRandom) {
      for (std::size_t i = 1; i < sel.scored.size(); ++i) {
        EXPECT_LE(criterion_score(sel.scored[i - 1].confidence, criterion),
                  criterion_score(sel.scored[i].confidence, criterion));
      }
    }
  }
}

TEST(Query, SingleItemPool) {
  const ExperimentContext ctx = testing::synthetic_context();
  const ModelParams params = ModelParams::initialize(ctx.base.dims(ctx.vocab), 4);
  const std::vector<int> pool = {5};
  const RoundSelection sel = query_round(params, ctx.dataset.train, pool, ctx.vocab, {QueryCriterion::kEntropyJoint, 1, 0});
  EXPECT_EQ(sel.ids, pool);
  EXPECT_NEAR(*sel.scored[0].confidence.conf_joint, -2.0, 1e-12);
  EXPECT_THROW(query_round(params, ctx.dataset.train, {}, ctx.vocab, {}), std::invalid_argument);
}

class HarnessRun : public ::testing::Test {
 protected:
  ExperimentContext ctx = testing::synthetic_context();
  TempDir dir;
  HarnessOptions options() const {
    HarnessOptions o;
    o.out_dir = dir.path();
    o.tune_batch_sizes = {8, 32};
    return o;
  }
};

TEST_F(HarnessRun, RegimeCellProducesReportAndManifest) {
  const Cell c{ExperimentKind::kRegime, "atis-synthetic", "vat-joint", 20, "", 1};
  const CellOutcome o = run_cell(c, ctx, options());
  ASSERT_TRUE(o.ok) << o.error;
  EXPECT_EQ(o.report.examples, ctx.dataset.test.size());
  EXPECT_EQ(o.report.history.size(), 3u);
  EXPECT_EQ(o.details["labeled"].get<std::size_t>() + o.details["validation"].get<std::size_t>(), 40u);
  EXPECT_EQ(o.details["unlabeled"], 160);
  EXPECT_EQ(o.manifest["cell"], c.id());
  EXPECT_EQ(o.manifest["config"]["losses"], (nlohmann::json{"ce-int", "ce-slot", "vat-joint"}));
  EXPECT_TRUE(o.manifest.contains("dataset_hash"));
  EXPECT_TRUE(o.manifest.contains("revision"));
}

TEST_F(HarnessRun, AlMethodsShareTheInitialSet) {
  std::map<std::string, std::string> hashes;
  std::map<std::string, nlohmann::json> selected;
  for (const char* v : {"ce-random-joint", "ce-ent-joint", "vat-random-joint", "vat-ent-joint"}) {
    const Cell c{ExperimentKind::kActiveLearning, "atis-synthetic", v, 20, "", 2};
    const CellOutcome o = run_cell(c, ctx, options());
    ASSERT_TRUE(o.ok) << o.error;
    hashes[v] = o.details["initial_hash"];
    selected[v] = o.details["selected"];
    EXPECT_EQ(o.details["query_budget"], 20);  // X/2 = 10% of 200
    EXPECT_EQ(o.details["final_labeled"].get<std::size_t>(), o.details["initial_labeled"].get<std::size_t>() + 20);
  }
  for (const auto& [v, h] : hashes) EXPECT_EQ(h, hashes.begin()->second) << v;
  // Random queries share their seed, so both random methods pick the same ids.
  EXPECT_EQ(selected["ce-random-joint"], selected["vat-random-joint"]);
  EXPECT_NE(selected["ce-ent-joint"], selected["ce-random-joint"]);
}

TEST_F(HarnessRun, AlCriterionFollowsTheTask) {
  for (const auto& [task, name] : std::vector<std::pair<std::string, std::string>>{
           {"int", "entropy-int"}, {"slot", "entropy-slot"}, {"joint", "entropy-joint"}}) {
    const Cell c{ExperimentKind::kActiveLearning, "atis-synthetic", "ce-ent-" + task, 10, "", 0};
    const CellOutcome o = run_cell(c, ctx, options());
    ASSERT_TRUE(o.ok) << o.error;
    EXPECT_EQ(o.details["criterion"], name);
  }
}

TEST_F(HarnessRun, SmallMediumMethods) {
  for (const auto& m : all_small_medium_methods()) {
    const Cell c{ExperimentKind::kSmallMedium, "atis-synthetic", m, 0, "small", 0};
    const CellOutcome o = run_cell(c, ctx, options());
    ASSERT_TRUE(o.ok) << m << ": " << o.error;
    EXPECT_GE(o.report.intent_accuracy, 0.0);
    EXPECT_LE(o.report.slot_f1, 100.0);
  }
  const Cell ind{ExperimentKind::kSmallMedium, "atis-synthetic", "viraal-individual-entropy", 0, "small", 0};
  const CellOutcome o = run_cell(ind, ctx, options());
  EXPECT_EQ(o.details["intent_model"]["criterion"], "entropy-int");
  EXPECT_EQ(o.details["slot_model"]["criterion"], "entropy-slot");
  EXPECT_EQ(o.details["intent_model"]["trials"].size(), 2u);
  EXPECT_EQ(o.report.intent_accuracy, o.details["intent_model"]["intent_accuracy"].get<double>());
  EXPECT_EQ(o.report.slot_f1, o.details["slot_model"]["slot_f1"].get<double>());
  const Cell medium{ExperimentKind::kSmallMedium, "atis-synthetic", "baseline", 0, "medium", 0};
  EXPECT_THROW(run_cell(medium, ctx, options()), std::invalid_argument);  // 515 > 200 utterances
}

TEST_F(HarnessRun, SeededCellsAreReproducible) {
  const Cell c{ExperimentKind::kActiveLearning, "atis-synthetic", "vat-ent-joint", 20, "", 3};
  const CellOutcome a = run_cell(c, ctx, options());
  const CellOutcome b = run_cell(c, ctx, options());
  EXPECT_EQ(a.report.to_json(), b.report.to_json());
  EXPECT_EQ(a.details, b.details);
}

TEST_F(HarnessRun, RerunComputesOnlyMissingCells) {
  const std::vector<double> f = {10, 30};
  const std::vector<std::string> v = {"ce-int"};
  const std::vector<std::uint64_t> seeds = {0, 1};
  const auto cells = regime_cells("atis-synthetic", f, v, seeds);
  const RunSummary first = run_cells(cells, ctx, options());
  EXPECT_EQ(first.computed, 4u);
  EXPECT_EQ(first.failed, 0u);
  const std::string kept = testing::read_file(cell_path(dir.path(), cells[0]));
  std::filesystem::remove(cell_path(dir.path(), cells[3]));
  const RunSummary second = run_cells(cells, ctx, options());
  EXPECT_EQ(second.computed, 1u);
  EXPECT_EQ(second.reused, 3u);
  EXPECT_EQ(testing::read_file(cell_path(dir.path(), cells[0])), kept);
  ASSERT_EQ(second.outcomes.size(), 4u);
  EXPECT_EQ(second.outcomes[3].report.to_json(), first.outcomes[3].report.to_json());
}

TEST_F(HarnessRun, FailedCellsAreRecordedAndRetried) {
  std::vector<Cell> cells = {{ExperimentKind::kRegime, "atis-synthetic", "ce-int", 10, "", 0},
                             {ExperimentKind::kRegime, "atis-synthetic", "bogus-int", 10, "", 0}};
  const RunSummary first = run_cells(cells, ctx, options());
  EXPECT_EQ(first.failed, 1u);
  EXPECT_TRUE(first.outcomes[0].ok);
  EXPECT_FALSE(first.outcomes[1].ok);
  EXPECT_NE(first.outcomes[1].error.find("bogus"), std::string::npos);
  const auto stored = load_cell(dir.path(), cells[1]);
  ASSERT_TRUE(stored);
  EXPECT_FALSE(stored->ok);
  const RunSummary second = run_cells(cells, ctx, options());
  EXPECT_EQ(second.reused, 1u);
  EXPECT_EQ(second.computed, 1u);
  const auto rows = aggregate(second.outcomes);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].failed, 1u);  // "bogus-int" sorts first
}

TEST_F(HarnessRun, WorkerProcessesMatchInProcessRuns) {
  const std::vector<double> f = {20};
  const std::vector<std::string> v = {"ce-joint", "vat-slot"};
  const std::vector<std::uint64_t> seeds = {0, 1};
  const auto cells = regime_cells("atis-synthetic", f, v, seeds);
  HarnessOptions parallel = options();
  parallel.jobs = 3;
  const RunSummary forked = run_cells(cells, ctx, parallel);
  EXPECT_EQ(forked.failed, 0u);
  TempDir other;
  HarnessOptions serial = options();
  serial.out_dir = other.path();
  const RunSummary inproc = run_cells(cells, ctx, serial);
  ASSERT_EQ(forked.outcomes.size(), inproc.outcomes.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    EXPECT_EQ(forked.outcomes[i].report.to_json(), inproc.outcomes[i].report.to_json()) << cells[i].id();
  }
}

TEST_F(HarnessRun, PretrainedRowsAreSharedAcrossSeeds) {
  TempDir vec;
  std::string text;
  for (const char* w : {"flights", "weather", "play"}) text += std::string(w) + " 1 2 3 4 5 6 7 8\n";
  testing::write_file(vec / "v.txt", text);
  RunConfig raw = ctx.base;
  raw.vat.normalize_embeddings = false;
  const ExperimentContext with = make_context(ctx.dataset, raw, vec / "v.txt");
  ASSERT_TRUE(with.pretrained);
  const EmbeddingMatrix a = with.embeddings(1), b = with.embeddings(2);
  const auto row = with.vocab.word_id("weather");
  const auto oov = with.vocab.word_id("denver");
  EXPECT_TRUE(a.vectors.row(row) == b.vectors.row(row));
  EXPECT_EQ(a.vectors(row, 0), 1.0);
  EXPECT_FALSE(a.vectors.row(oov) == b.vectors.row(oov));
  EXPECT_TRUE(with.embeddings(1).vectors == a.vectors);
}

}  // namespace
}  // namespace viraal
