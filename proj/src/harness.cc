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

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>
#include <unordered_map>

#include "viraal/checkpoint.hpp"

namespace viraal {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), ::tolower);
  return out;
}

bool is_snips(std::string_view dataset) { return lower(dataset).find("snips") != std::string::npos; }

std::vector<std::string> split_dash(std::string_view s) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == '-') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

void check_task(const std::string& task) {
  if (task != "int" && task != "slot" && task != "joint") {
    throw std::invalid_argument("unknown task: " + task);
  }
}

bool parse_loss_kind(const std::string& s) {
  if (s == "ce") return false;
  if (s == "vat") return true;
  throw std::invalid_argument("unknown loss kind: " + s);
}

std::vector<const Example*> pointers(std::span<const Example> examples) {
  std::vector<const Example*> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(&ex);
  return out;
}

std::vector<const Example*> lookup(std::span<const Example> corpus, std::span<const int> ids) {
  std::unordered_map<int, const Example*> index;
  for (const auto& ex : corpus) index.emplace(ex.utterance.id, &ex);
  std::vector<const Example*> out;
  out.reserve(ids.size());
  for (int id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw std::invalid_argument("unknown example id " + std::to_string(id));
    out.push_back(it->second);
  }
  return out;
}

std::vector<int> difference(std::span<const int> from, std::span<const int> remove) {
  const std::set<int> drop(remove.begin(), remove.end());
  std::vector<int> out;
  for (int id : from) {
    if (!drop.count(id)) out.push_back(id);
  }
  return out;
}

std::vector<int> sorted_union(std::span<const int> a, std::span<const int> b) {
  std::vector<int> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::uint64_t hash_ids(std::span<const int> ids, std::uint64_t h = 14695981039346656037ull) {
  for (int id : ids) h = fnv1a(std::to_string(id) + ",", h);
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void log(const HarnessOptions& options, const std::string& message) {
  if (options.log) options.log(message);
}

struct TrainedRun {
  FitResult fit;
  MetricsReport report;
  int batch_size = 0;
};

// One fit on `labeled` plus evaluation on the test split.
TrainedRun train_and_test(const ExperimentContext& ctx, const RunConfig& config,
                          const EmbeddingMatrix& embeddings, std::span<const int> labeled,
                          std::span<const int> unlabeled, std::span<const Example* const> validation,
                          const fs::path& checkpoint = {}) {
  TrainedRun run;
  FitOptions opts;
  opts.checkpoint_path = checkpoint;
  run.fit = fit(labeled, unlabeled, ctx.dataset.train, ctx.vocab, &embeddings, config, validation, opts);
  run.report = evaluate(run.fit.params, ctx.dataset.test, ctx.vocab);
  run.report.history = run.fit.history;
  run.report.seed = config.seed;
  run.batch_size = config.effective_batch_size();
  return run;
}

double best_validation(const RunConfig& config, const FitResult& fit) {
  double best = -1.0;
  for (const auto& e : fit.history) {
    if (!e.has_validation) continue;
    MetricsReport r;
    r.intent_accuracy = e.val_intent_accuracy;
    r.slot_f1 = e.val_slot_f1;
    best = std::max(best, selection_score(config, r));
  }
  return best;
}

// Fits once per candidate batch size and keeps the best validation score;
// epochs are tuned by best-epoch selection inside each fit.
TrainedRun tuned_train(const ExperimentContext& ctx, RunConfig config,
                       const EmbeddingMatrix& embeddings, std::span<const int> labeled,
                       std::span<const int> unlabeled, std::span<const Example* const> validation,
                       const HarnessOptions& options, json& trials) {
  std::vector<int> sizes = options.tune_batch_sizes;
  if (sizes.empty()) sizes.push_back(config.effective_batch_size());
  std::optional<TrainedRun> best;
  double best_score = -2.0;
  for (int bs : sizes) {
    config.batch_size = bs;
    config.batch_size_vat = bs;
    TrainedRun run = train_and_test(ctx, config, embeddings, labeled, unlabeled, validation);
    const double score = best_validation(config, run.fit);
    trials.push_back({{"batch_size", bs},
                      {"validation_score", score},
                      {"best_epoch", run.fit.best_epoch},
                      {"diverged", run.fit.diverged}});
    if (!best || score > best_score) {
      best_score = score;
      best = std::move(run);
    }
  }
  return std::move(*best);
}

json fit_details(const TrainedRun& run) {
  return {{"best_epoch", run.fit.best_epoch},
          {"diverged", run.fit.diverged},
          {"diagnostics", run.fit.diagnostics},
          {"batch_size", run.batch_size},
          {"intent_accuracy", run.report.intent_accuracy},
          {"slot_f1", run.report.slot_f1}};
}

RunConfig config_for(const ExperimentContext& ctx, const std::string& task, bool vat,
                     std::uint64_t seed) {
  RunConfig c = ctx.base;
  c.losses = RunConfig::losses_for(task, vat);
  c.seed = seed;
  return c;
}

CellOutcome run_regime_cell(const Cell& cell, const ExperimentContext& ctx, CellOutcome out) {
  const auto parts = split_dash(cell.variant);
  if (parts.size() != 2) throw std::invalid_argument("regime variant must be <ce|vat>-<task>");
  const bool vat = parse_loss_kind(parts[0]);
  check_task(parts[1]);
  const auto& train = ctx.dataset.train;
  const RegimeSample sample =
      sample_regime(train, cell.fraction, derive_seed("regime", cell.dataset, cell.fraction, cell.seed));
  const LabeledSplit split = with_validation(sample, train, ctx.dataset.dev.size(),
                                             derive_seed("validation", cell.dataset, cell.fraction, cell.seed));
  const RunConfig config = config_for(ctx, parts[1], vat, cell.seed);
  const EmbeddingMatrix emb = ctx.embeddings(cell.seed);
  const auto val = lookup(train, split.validation);
  const TrainedRun run = train_and_test(ctx, config, emb, split.labeled, split.pool, val);
  out.report = run.report;
  out.details = fit_details(run);
  out.details["labeled"] = split.labeled.size();
  out.details["validation"] = split.validation.size();
  out.details["unlabeled"] = split.pool.size();
  out.details["labeled_hash"] = hex(split.hash());
  out.manifest = run_manifest(config, out.manifest);
  return out;
}

CellOutcome run_al_cell(const Cell& cell, const ExperimentContext& ctx,
                        const HarnessOptions& options, CellOutcome out) {
  const auto parts = split_dash(cell.variant);
  if (parts.size() != 3) throw std::invalid_argument("al variant must be <ce|vat>-<random|ent>-<task>");
  const bool vat = parse_loss_kind(parts[0]);
  if (parts[1] != "random" && parts[1] != "ent") {
    throw std::invalid_argument("unknown query kind: " + parts[1]);
  }
  check_task(parts[2]);
  const auto& train = ctx.dataset.train;
  const LabeledSplit init =
      al_initial_split(train, cell.dataset, cell.fraction, cell.seed, ctx.dataset.dev.size());
  const RunConfig config = config_for(ctx, parts[2], vat, cell.seed);
  const EmbeddingMatrix emb = ctx.embeddings(cell.seed);
  const auto val = lookup(train, init.validation);

  fs::path ckpt;
  if (options.keep_checkpoints && !options.out_dir.empty()) {
    fs::create_directories(options.out_dir / "checkpoints");
    ckpt = options.out_dir / "checkpoints" / (cell.id() + "-round1.ckpt");
  }
  const TrainedRun first = train_and_test(ctx, config, emb, init.labeled, init.pool, val, ckpt);

  QuerySpec spec;
  spec.criterion = parts[1] == "random" ? QueryCriterion::kRandom : entropy_criterion_for(parts[2]);
  spec.budget = std::min(al_round_budget(train.size(), cell.fraction), init.pool.size());
  spec.seed = derive_seed("query", cell.dataset, cell.fraction, cell.seed);
  const RoundSelection selection = query_round(first.fit.params, train, init.pool, ctx.vocab, spec);

  const std::vector<int> labeled = sorted_union(init.labeled, selection.ids);
  const std::vector<int> pool = difference(init.pool, selection.ids);
  const TrainedRun second = train_and_test(ctx, config, emb, labeled, pool, val);

  out.report = second.report;
  out.details = fit_details(second);
  out.details["initial_hash"] = hex(init.hash());
  out.details["initial_labeled"] = init.labeled.size();
  out.details["validation"] = init.validation.size();
  out.details["criterion"] = criterion_name(spec.criterion);
  out.details["query_budget"] = spec.budget;
  out.details["selected"] = selection.ids;
  out.details["final_labeled"] = labeled.size();
  out.details["final_labeled_hash"] = hex(hash_ids(labeled));
  out.details["round1"] = fit_details(first);
  if (!ckpt.empty()) out.details["round1_checkpoint"] = ckpt.string();
  out.manifest = run_manifest(config, out.manifest);
  return out;
}

CellOutcome run_small_medium_cell(const Cell& cell, const ExperimentContext& ctx,
                                  const HarnessOptions& options, CellOutcome out) {
  const auto& train = ctx.dataset.train;
  const std::size_t size = small_medium_size(cell.dataset, cell.split);
  if (size > train.size()) throw std::invalid_argument("train split smaller than " + cell.split + " size");
  const auto dev = pointers(ctx.dataset.dev);
  const EmbeddingMatrix emb = ctx.embeddings(cell.seed);
  const double key = static_cast<double>(size);
  json trials = json::array();

  if (cell.variant == "baseline" || cell.variant == "vat-joint") {
    const bool vat = cell.variant == "vat-joint";
    const RegimeSample s = sample_covering(train, size, derive_seed("small-medium", cell.dataset, key, cell.seed));
    const RunConfig config = config_for(ctx, "joint", vat, cell.seed);
    const TrainedRun run = tuned_train(ctx, config, emb, s.labeled, s.unlabeled, dev, options, trials);
    out.report = run.report;
    out.details = fit_details(run);
    out.details["labeled"] = s.labeled.size();
    out.details["labeled_hash"] = hex(hash_ids(s.labeled));
    out.details["trials"] = trials;
    out.manifest = run_manifest(config, out.manifest);
    return out;
  }

  if (cell.variant != "viraal-joint-entropy" && cell.variant != "viraal-individual-entropy") {
    throw std::invalid_argument("unknown small/medium method: " + cell.variant);
  }
  // Half of the budget labeled at random, the other half queried by entropy.
  const std::size_t initial = size / 2;
  const RegimeSample s =
      sample_covering(train, initial, derive_seed("small-medium-initial", cell.dataset, key, cell.seed));
  const RunConfig config = config_for(ctx, "joint", true, cell.seed);
  const TrainedRun first = train_and_test(ctx, config, emb, s.labeled, s.unlabeled, dev);
  out.details["initial_hash"] = hex(hash_ids(s.labeled));
  out.details["round1"] = fit_details(first);

  auto refine = [&](QueryCriterion criterion, json& record) {
    QuerySpec spec;
    spec.criterion = criterion;
    spec.budget = std::min(size - initial, s.unlabeled.size());
    spec.seed = derive_seed("small-medium-query", cell.dataset, key, cell.seed);
    const RoundSelection sel = query_round(first.fit.params, train, s.unlabeled, ctx.vocab, spec);
    const auto labeled = sorted_union(s.labeled, sel.ids);
    const auto pool = difference(s.unlabeled, sel.ids);
    json t = json::array();
    TrainedRun run = tuned_train(ctx, config, emb, labeled, pool, dev, options, t);
    record = fit_details(run);
    record["criterion"] = criterion_name(criterion);
    record["selected"] = sel.ids;
    record["trials"] = t;
    return run;
  };

  if (cell.variant == "viraal-joint-entropy") {
    json rec;
    const TrainedRun run = refine(QueryCriterion::kEntropyJoint, rec);
    out.report = run.report;
    out.details["final"] = rec;
  } else {
    json rec_int, rec_slot;
    const TrainedRun by_int = refine(QueryCriterion::kEntropyIntent, rec_int);
    const TrainedRun by_slot = refine(QueryCriterion::kEntropySlot, rec_slot);
    out.report = by_int.report;
    out.report.slot_f1 = by_slot.report.slot_f1;
    out.report.slot_precision = by_slot.report.slot_precision;
    out.report.slot_recall = by_slot.report.slot_recall;
    out.details["intent_model"] = rec_int;
    out.details["slot_model"] = rec_slot;
  }
  out.manifest = run_manifest(config, out.manifest);
  return out;
}

void write_atomic(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::ios_base::failure("cannot write " + tmp.string());
    f << text;
    if (!f.flush()) throw std::ios_base::failure("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void store(const fs::path& out_dir, const CellOutcome& outcome) {
  write_atomic(cell_path(out_dir, outcome.cell), outcome.to_json().dump(2) + "\n");
}

CellOutcome guarded_run(const Cell& cell, const ExperimentContext& ctx, const HarnessOptions& options) {
  try {
    return run_cell(cell, ctx, options);
  } catch (const std::exception& e) {
    CellOutcome out;
    out.cell = cell;
    out.error = e.what();
    return out;
  }
}

std::string panel_of(const AggregateRow& row) {
  if (row.experiment == experiment_name(ExperimentKind::kSmallMedium)) return row.split;
  const auto parts = split_dash(row.variant);
  return parts.back();
}

}  // namespace

EmbeddingMatrix ExperimentContext::embeddings(std::uint64_t seed) const {
  const bool normalize = base.vat.normalize_embeddings;
  if (pretrained) return reseed_missing(*pretrained, seed, normalize);
  return random_embeddings(vocab, base.embedding_size, seed, normalize);
}

Vocabulary experiment_vocab(const Dataset& dataset) {
  Vocabulary v = build_vocab(dataset.train);
  extend_labels(v, dataset.dev);
  extend_labels(v, dataset.test);
  return v;
}

ExperimentContext make_context(Dataset dataset, RunConfig base,
                               const std::optional<fs::path>& vectors) {
  ExperimentContext ctx;
  ctx.dataset = std::move(dataset);
  ctx.vocab = experiment_vocab(ctx.dataset);
  ctx.base = std::move(base);
  if (vectors) {
    ctx.pretrained = load_pretrained(*vectors, ctx.vocab, false, 0, ctx.base.embedding_size);
  }
  return ctx;
}

ExperimentContext load_context(const fs::path& root, const json& config_overrides,
                               const std::optional<fs::path>& vectors) {
  Dataset d = load_dataset(root);
  if (d.name.empty()) d.name = root.filename().string();
  RunConfig base = RunConfig::from_json(config_overrides, RunConfig::defaults_for(d.name));
  return make_context(std::move(d), std::move(base), vectors);
}

std::string_view experiment_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kRegime: return "regime";
    case ExperimentKind::kActiveLearning: return "al";
    case ExperimentKind::kSmallMedium: return "small-medium";
  }
  return "unknown";
}

ExperimentKind parse_experiment(std::string_view name) {
  if (name == "regime") return ExperimentKind::kRegime;
  if (name == "al") return ExperimentKind::kActiveLearning;
  if (name == "small-medium") return ExperimentKind::kSmallMedium;
  throw std::invalid_argument("unknown experiment: " + std::string(name));
}

std::string Cell::id() const {
  std::string s = std::string(experiment_name(kind)) + "__" + lower(dataset) + "__" + variant + "__";
  s += kind == ExperimentKind::kSmallMedium ? split : "f" + format_number(fraction);
  s += "__s" + std::to_string(seed);
  return s;
}

json Cell::to_json() const {
  return {{"experiment", experiment_name(kind)}, {"dataset", dataset}, {"variant", variant},
          {"fraction", fraction},                {"split", split},     {"seed", seed}};
}

Cell Cell::from_json(const json& j) {
  Cell c;
  c.kind = parse_experiment(j.at("experiment").get<std::string>());
  c.dataset = j.at("dataset").get<std::string>();
  c.variant = j.at("variant").get<std::string>();
  c.fraction = j.value("fraction", 0.0);
  c.split = j.value("split", std::string());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json CellOutcome::to_json() const {
  return {{"id", cell.id()},
          {"cell", cell.to_json()},
          {"status", ok ? "ok" : "failed"},
          {"error", error},
          {"report", report.to_json()},
          {"details", details},
          {"manifest", manifest}};
}

CellOutcome CellOutcome::from_json(const json& j) {
  CellOutcome o;
  o.cell = Cell::from_json(j.at("cell"));
  o.ok = j.at("status") == "ok";
  o.error = j.value("error", std::string());
  o.report = MetricsReport::from_json(j.at("report"));
  o.details = j.value("details", json::object());
  o.manifest = j.value("manifest", json::object());
  return o;
}

std::vector<double> default_fractions(std::string_view dataset) {
  std::vector<double> f;
  if (is_snips(dataset)) {
    for (int i = 1; i <= 10; ++i) f.push_back(i);
  } else {
    f.push_back(5);
    f.push_back(10);
  }
  for (int i = 20; i <= 100; i += 10) f.push_back(i);
  return f;
}

std::vector<double> default_budgets(std::string_view dataset) {
  if (is_snips(dataset)) return {2, 4, 6, 8, 10, 20, 40};
  return {10, 20, 40, 50, 60};
}

std::size_t small_medium_size(std::string_view dataset, std::string_view split) {
  const bool snips = is_snips(dataset);
  if (split == "small") return snips ? 327 : 129;
  if (split == "medium") return snips ? 1308 : 515;
  throw std::invalid_argument("unknown split: " + std::string(split));
}

std::vector<Cell> regime_cells(std::string_view dataset, std::span<const double> fractions,
                               std::span<const std::string> variants,
                               std::span<const std::uint64_t> seeds) {
  std::vector<Cell> cells;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 100.0)) throw std::invalid_argument("fraction outside (0, 100]");
    for (const auto& v : variants) {
      for (auto s : seeds) cells.push_back({ExperimentKind::kRegime, std::string(dataset), v, f, "", s});
    }
  }
  return cells;
}

std::vector<Cell> al_cells(std::string_view dataset, std::span<const double> budgets,
                           std::span<const std::string> variants,
                           std::span<const std::uint64_t> seeds) {
  std::vector<Cell> cells;
  for (double x : budgets) {
    if (!(x > 0.0 && x <= 100.0)) throw std::invalid_argument("budget outside (0, 100]");
    for (const auto& v : variants) {
      for (auto s : seeds) cells.push_back({ExperimentKind::kActiveLearning, std::string(dataset), v, x, "", s});
    }
  }
  return cells;
}

std::vector<Cell> small_medium_cells(std::string_view dataset, std::span<const std::string> splits,
                                     std::span<const std::string> methods,
                                     std::span<const std::uint64_t> seeds) {
  std::vector<Cell> cells;
  for (const auto& split : splits) {
    small_medium_size(dataset, split);
    for (const auto& m : methods) {
      for (auto s : seeds) cells.push_back({ExperimentKind::kSmallMedium, std::string(dataset), m, 0.0, split, s});
    }
  }
  return cells;
}

std::vector<std::string> all_regime_variants() {
  std::vector<std::string> v;
  for (const char* loss : {"ce", "vat"}) {
    for (const char* task : {"int", "slot", "joint"}) v.push_back(std::string(loss) + "-" + task);
  }
  return v;
}

std::vector<std::string> all_al_variants() {
  std::vector<std::string> v;
  for (const char* task : {"int", "slot", "joint"}) {
    for (const char* loss : {"ce", "vat"}) {
      for (const char* query : {"random", "ent"}) {
        v.push_back(std::string(loss) + "-" + query + "-" + task);
      }
    }
  }
  return v;
}

std::vector<std::string> all_small_medium_methods() {
  return {"baseline", "vat-joint", "viraal-joint-entropy", "viraal-individual-entropy"};
}

std::uint64_t derive_seed(std::string_view tag, std::string_view dataset, double fraction,
                          std::uint64_t seed) {
  return fnv1a(std::string(tag) + "|" + lower(dataset) + "|" + format_number(fraction) + "|" +
               std::to_string(seed));
}

std::uint64_t LabeledSplit::hash() const {
  return hash_ids(validation, fnv1a("|", hash_ids(labeled)));
}

LabeledSplit with_validation(const RegimeSample& sample, std::span<const Example> train,
                             std::size_t dev_size, std::uint64_t seed) {
  LabeledSplit out;
  out.pool = sample.unlabeled;
  if (train.empty() || dev_size == 0) {
    out.labeled = sample.labeled;
    return out;
  }
  std::map<std::string, int> first_of_intent;
  const auto examples = lookup(train, sample.labeled);
  for (const Example* ex : examples) {
    const std::string& intent = ex->annotation->intent;
    auto it = first_of_intent.find(intent);
    if (it == first_of_intent.end() || ex->utterance.id < it->second) {
      first_of_intent[intent] = ex->utterance.id;
    }
  }
  std::set<int> keep;
  for (const auto& [intent, id] : first_of_intent) keep.insert(id);
  std::vector<int> candidates;
  for (int id : sample.labeled) {
    if (!keep.count(id)) candidates.push_back(id);
  }
  const double share = static_cast<double>(sample.labeled.size()) * static_cast<double>(dev_size) /
                       static_cast<double>(train.size());
  const std::size_t want = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(share)));
  const std::size_t take = std::min(want, candidates.size());
  std::mt19937_64 rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  out.validation.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take));
  std::sort(out.validation.begin(), out.validation.end());
  out.labeled = difference(sample.labeled, out.validation);
  return out;
}

LabeledSplit al_initial_split(std::span<const Example> train, std::string_view dataset,
                              double budget_percent, std::uint64_t seed, std::size_t dev_size) {
  const RegimeSample sample =
      sample_regime(train, budget_percent / 2.0, derive_seed("al-initial", dataset, budget_percent, seed));
  return with_validation(sample, train, dev_size,
                         derive_seed("al-validation", dataset, budget_percent, seed));
}

std::size_t al_round_budget(std::size_t train_size, double budget_percent) {
  return static_cast<std::size_t>(
      std::llround(budget_percent / 2.0 / 100.0 * static_cast<double>(train_size)));
}

RoundSelection query_round(const ModelParams& params, std::span<const Example> corpus,
                           std::span<const int> pool, const Vocabulary& vocab,
                           const QuerySpec& spec) {
  if (pool.empty()) throw std::invalid_argument("query_round: empty pool");
  const auto examples = lookup(corpus, pool);
  std::vector<ScoredExample> scored = score_and_predict(params, examples, vocab);
  RoundSelection out;
  for (const auto& s : scored) out.pool_records.push_back(s.confidence);
  if (out.pool_records.size() == 1) {
    // P99 of a single value is the value itself.
    out.pool_records.push_back(out.pool_records.front());
    joint_confidence(out.pool_records);
    out.pool_records.pop_back();
  } else {
    joint_confidence(out.pool_records);
  }
  for (std::size_t i = 0; i < scored.size(); ++i) scored[i].confidence = out.pool_records[i];
  out.ids = select(out.pool_records, spec);
  std::unordered_map<int, std::size_t> at;
  for (std::size_t i = 0; i < scored.size(); ++i) at.emplace(scored[i].confidence.id, i);
  for (int id : out.ids) out.scored.push_back(scored[at.at(id)]);
  return out;
}

QueryCriterion entropy_criterion_for(std::string_view task) {
  if (task == "int") return QueryCriterion::kEntropyIntent;
  if (task == "slot") return QueryCriterion::kEntropySlot;
  if (task == "joint") return QueryCriterion::kEntropyJoint;
  throw std::invalid_argument("unknown task: " + std::string(task));
}

CellOutcome run_cell(const Cell& cell, const ExperimentContext& context,
                     const HarnessOptions& options) {
  CellOutcome out;
  out.cell = cell;
  out.manifest = {{"cell", cell.id()},
                  {"dataset", context.dataset.name},
                  {"dataset_hash", hex(context.dataset.content_hash)},
                  {"word_hash", hex(context.vocab.word_hash())},
                  {"slot_hash", hex(context.vocab.slot_hash())},
                  {"intent_hash", hex(context.vocab.intent_hash())},
                  {"pretrained_vectors", context.pretrained.has_value()}};
  if (context.dataset.test.empty()) throw std::invalid_argument("dataset has no test split");
  log(options, "run " + cell.id());
  switch (cell.kind) {
    case ExperimentKind::kRegime: out = run_regime_cell(cell, context, std::move(out)); break;
    case ExperimentKind::kActiveLearning: out = run_al_cell(cell, context, options, std::move(out)); break;
    case ExperimentKind::kSmallMedium: out = run_small_medium_cell(cell, context, options, std::move(out)); break;
  }
  out.ok = true;
  return out;
}

fs::path cell_path(const fs::path& out_dir, const Cell& cell) {
  return out_dir / "cells" / (cell.id() + ".json");
}

std::optional<CellOutcome> load_cell(const fs::path& out_dir, const Cell& cell) {
  const fs::path p = cell_path(out_dir, cell);
  if (!fs::exists(p)) return std::nullopt;
  try {
    std::ifstream f(p);
    return CellOutcome::from_json(json::parse(f));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::vector<CellOutcome> load_cells(const fs::path& out_dir) {
  std::vector<CellOutcome> out;
  const fs::path dir = out_dir / "cells";
  if (!fs::exists(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    std::ifstream f(p);
    out.push_back(CellOutcome::from_json(json::parse(f)));
  }
  return out;
}

RunSummary run_cells(std::span<const Cell> cells, const ExperimentContext& context,
                     const HarnessOptions& options) {
  if (options.out_dir.empty()) throw std::invalid_argument("run_cells: out_dir is required");
  fs::create_directories(options.out_dir / "cells");
  RunSummary summary;
  std::vector<const Cell*> pending;
  std::set<std::string> seen;
  for (const auto& c : cells) {
    if (!seen.insert(c.id()).second) continue;
    const auto prior = load_cell(options.out_dir, c);
    if (prior && prior->ok) {
      ++summary.reused;
      continue;
    }
    pending.push_back(&c);
  }
  log(options, std::to_string(pending.size()) + " cells to run, " + std::to_string(summary.reused) +
                   " reused");

  if (options.jobs <= 1) {
    for (const Cell* c : pending) store(options.out_dir, guarded_run(*c, context, options));
  } else {
    std::map<pid_t, const Cell*> running;
    std::size_t next = 0;
    auto reap = [&] {
      int status = 0;
      const pid_t pid = ::waitpid(-1, &status, 0);
      if (pid <= 0) throw std::runtime_error("waitpid failed");
      const Cell* c = running.at(pid);
      running.erase(pid);
      const auto stored = load_cell(options.out_dir, *c);
      if (!stored || (WIFEXITED(status) && WEXITSTATUS(status) != 0) || WIFSIGNALED(status)) {
        if (!stored) {
          CellOutcome failed;
          failed.cell = *c;
          failed.error = WIFSIGNALED(status) ? "worker killed by signal " + std::to_string(WTERMSIG(status))
                                             : "worker exited with status " + std::to_string(WEXITSTATUS(status));
          store(options.out_dir, failed);
        }
      }
    };
    while (next < pending.size() || !running.empty()) {
      while (next < pending.size() && running.size() < static_cast<std::size_t>(options.jobs)) {
        const Cell* c = pending[next++];
        std::fflush(nullptr);
        const pid_t pid = ::fork();
        if (pid < 0) throw std::runtime_error("fork failed");
        if (pid == 0) {
          int code = 0;
          try {
            store(options.out_dir, guarded_run(*c, context, options));
          } catch (...) {
            code = 1;
          }
          std::fflush(nullptr);
          ::_exit(code);
        }
        running.emplace(pid, c);
      }
      if (!running.empty()) reap();
    }
  }

  for (const auto& c : cells) {
    if (!seen.erase(c.id())) continue;
    auto o = load_cell(options.out_dir, c);
    if (!o) {
      CellOutcome missing;
      missing.cell = c;
      missing.error = "no result file";
      o = missing;
    }
    if (!o->ok) ++summary.failed;
    summary.outcomes.push_back(std::move(*o));
  }
  summary.computed = pending.size();
  return summary;
}

Stats mean_std(std::span<const double> values) {
  Stats s;
  s.n = values.size();
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / n);
  return s;
}

std::vector<AggregateRow> aggregate(std::span<const CellOutcome> outcomes) {
  using Key = std::tuple<std::string, std::string, std::string, std::string, double>;
  struct Acc {
    std::vector<double> intent, slot;
    std::size_t failed = 0;
    std::vector<std::string> sources;
  };
  std::map<Key, Acc> groups;
  for (const auto& o : outcomes) {
    const Key key{std::string(experiment_name(o.cell.kind)), o.cell.dataset, o.cell.variant,
                  o.cell.split, o.cell.fraction};
    Acc& a = groups[key];
    if (!o.ok) {
      ++a.failed;
      continue;
    }
    a.intent.push_back(100.0 * o.report.intent_accuracy);
    a.slot.push_back(o.report.slot_f1);
    a.sources.push_back(o.cell.id());
  }
  std::vector<AggregateRow> rows;
  for (auto& [key, a] : groups) {
    AggregateRow r;
    std::tie(r.experiment, r.dataset, r.variant, r.split, r.fraction) = key;
    r.intent_accuracy = mean_std(a.intent);
    r.slot_f1 = mean_std(a.slot);
    r.failed = a.failed;
    r.sources = std::move(a.sources);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_reports(const fs::path& out_dir, std::span<const AggregateRow> rows) {
  auto line = [](const AggregateRow& r) {
    std::ostringstream s;
    s.precision(10);
    s << r.variant << ',' << format_number(r.fraction) << ',' << r.split << ',' << r.intent_accuracy.n
      << ',' << r.failed << ',' << r.intent_accuracy.mean << ',' << r.intent_accuracy.std << ','
      << r.slot_f1.mean << ',' << r.slot_f1.std;
    return s.str();
  };
  const std::string columns =
      "variant,fraction,split,n,failed,intent_accuracy_mean,intent_accuracy_std,slot_f1_mean,slot_f1_std";

  std::ostringstream summary;
  summary << "experiment,dataset," << columns << ",sources\n";
  std::map<std::string, std::ostringstream> panels;
  for (const auto& r : rows) {
    std::string sources;
    for (const auto& id : r.sources) sources += (sources.empty() ? "" : ";") + id;
    summary << r.experiment << ',' << r.dataset << ',' << line(r) << ',' << sources << '\n';
    const std::string panel = r.experiment + "_" + lower(r.dataset) + "_" + panel_of(r);
    auto& p = panels[panel];
    if (p.tellp() == 0) p << columns << '\n';
    p << line(r) << '\n';
  }
  write_atomic(out_dir / "summary.csv", summary.str());
  for (auto& [name, text] : panels) write_atomic(out_dir / "plots" / (name + ".csv"), text.str());
}

}  // namespace viraal
