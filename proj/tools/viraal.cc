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

// Command-line front end: experiment grids, single runs and the annotation
// server.
//
//   viraal regime       --dataset DIR [--fractions ...] [--variants ...] --seeds 8 --out DIR
//   viraal al           --dataset DIR [--budgets ...] [--variants ...] --seeds 8 --out DIR
//   viraal small-medium --dataset DIR [--splits ...] [--methods ...] --seeds 8 --out DIR
//   viraal aggregate    --out DIR
//   viraal sample-regime --dataset DIR --fraction F --seed S --manifest FILE
//   viraal train        --dataset DIR --task joint [--vat] --fraction F --seed S --out DIR
//   viraal score        --dataset DIR --checkpoint FILE --criterion C --budget S --out FILE
//   viraal serve        --dataset DIR --data DIR --fraction F --seed S
//
// Exit status is 1 when any cell fails, 2 on usage or input errors.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "viraal/annotation_service.hpp"
#include "viraal/checkpoint.hpp"
#include "viraal/harness.hpp"
#include "viraal/http_api.hpp"

#include <CLI11.hpp>
#include <httplib.h>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace viraal;

namespace {

struct Common {
  std::string dataset;
  std::string config;
  std::string vectors;
  std::string out;
  int seeds = 8;
  std::vector<std::uint64_t> seed_list;
  int jobs = 1;
  std::vector<int> tune_batch_sizes = {4, 8, 16, 32, 64};
  bool keep_checkpoints = false;
};

void add_common(CLI::App* app, Common& c, bool needs_out = true) {
  app->add_option("--dataset", c.dataset, "dataset root with train/, dev/ (or valid/) and test/")
      ->required()
      ->check(CLI::ExistingDirectory);
  app->add_option("--config", c.config, "JSON file overriding run configuration keys")->check(CLI::ExistingFile);
  app->add_option("--vectors", c.vectors, "pretrained word vectors (word v1 ... vD per line)")
      ->check(CLI::ExistingFile);
  if (needs_out) app->add_option("--out", c.out, "output directory")->required();
}

void add_grid(CLI::App* app, Common& c) {
  add_common(app, c);
  app->add_option("--seeds", c.seeds, "number of seeds, 0..N-1")->check(CLI::PositiveNumber);
  app->add_option("--seed-list", c.seed_list, "explicit seeds (overrides --seeds)");
  app->add_option("--jobs", c.jobs, "worker processes")->check(CLI::PositiveNumber);
  app->add_option("--tune-batch-sizes", c.tune_batch_sizes, "batch sizes tried by small-medium fits");
  app->add_flag("--keep-checkpoints", c.keep_checkpoints, "save round-one checkpoints of AL cells");
}

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  return json::parse(f);
}

ExperimentContext context_for(const Common& c) {
  std::optional<fs::path> vectors;
  if (!c.vectors.empty()) vectors = c.vectors;
  return load_context(c.dataset, read_config(c.config), vectors);
}

std::vector<std::uint64_t> seeds_of(const Common& c) {
  if (!c.seed_list.empty()) return c.seed_list;
  std::vector<std::uint64_t> s;
  for (int i = 0; i < c.seeds; ++i) s.push_back(static_cast<std::uint64_t>(i));
  return s;
}

HarnessOptions harness_options(const Common& c) {
  HarnessOptions o;
  o.out_dir = c.out;
  o.jobs = c.jobs;
  o.tune_batch_sizes = c.tune_batch_sizes;
  o.keep_checkpoints = c.keep_checkpoints;
  o.log = [](const std::string& m) { std::cerr << m << '\n'; };
  return o;
}

int finish_grid(const std::vector<Cell>& cells, const ExperimentContext& ctx, const Common& c) {
  const HarnessOptions options = harness_options(c);
  const RunSummary summary = run_cells(cells, ctx, options);
  write_reports(options.out_dir, aggregate(load_cells(options.out_dir)));
  for (const auto& o : summary.outcomes) {
    if (!o.ok) std::cerr << "FAILED " << o.cell.id() << ": " << o.error << '\n';
  }
  std::cout << summary.outcomes.size() << " cells: " << summary.computed << " run, " << summary.reused
            << " reused, " << summary.failed << " failed\n";
  return summary.failed ? 1 : 0;
}

std::atomic<httplib::Server*> active_server{nullptr};

void stop_server(int) {
  if (auto* s = active_server.load()) s->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised active learning workbench for joint intent detection and slot filling"};
  app.require_subcommand(1);

  Common regime_opts;
  std::vector<double> fractions;
  std::vector<std::string> regime_variants = all_regime_variants();
  auto* regime = app.add_subcommand("regime", "labeled-fraction sweep");
  add_grid(regime, regime_opts);
  regime->add_option("--fractions", fractions, "labeled percentages (default: dataset grid)");
  regime->add_option("--variants", regime_variants, "<ce|vat>-<int|slot|joint>");

  Common al_opts;
  std::vector<double> budgets;
  std::vector<std::string> al_variants = all_al_variants();
  auto* al = app.add_subcommand("al", "two-round active learning");
  add_grid(al, al_opts);
  al->add_option("--budgets", budgets, "total labeled percentages X (default: dataset grid)");
  al->add_option("--variants", al_variants, "<ce|vat>-<random|ent>-<int|slot|joint>");

  Common sm_opts;
  std::vector<std::string> splits = {"small", "medium"};
  std::vector<std::string> methods = all_small_medium_methods();
  auto* sm = app.add_subcommand("small-medium", "Small/Medium comparison");
  add_grid(sm, sm_opts);
  sm->add_option("--splits", splits, "small and/or medium");
  sm->add_option("--methods", methods, "baseline, vat-joint, viraal-joint-entropy, viraal-individual-entropy");

  std::string agg_out;
  auto* agg = app.add_subcommand("aggregate", "rebuild summary.csv and plot data from stored cells");
  agg->add_option("--out", agg_out, "experiment output directory")->required()->check(CLI::ExistingDirectory);

  Common sample_opts;
  double sample_fraction = 10.0;
  std::uint64_t sample_seed = 0;
  std::string manifest_path;
  auto* sample = app.add_subcommand("sample-regime", "write the labeled/unlabeled manifest of one regime");
  add_common(sample, sample_opts, false);
  sample->add_option("--fraction", sample_fraction, "labeled percentage")->required();
  sample->add_option("--seed", sample_seed, "sampling seed");
  sample->add_option("--manifest", manifest_path, "output JSONL file")->required();

  Common train_opts;
  std::string train_task = "joint";
  bool train_vat = false;
  double train_fraction = 100.0;
  std::uint64_t train_seed = 0;
  auto* train = app.add_subcommand("train", "fit one model and evaluate it on test");
  add_common(train, train_opts);
  train->add_option("--task", train_task, "int, slot or joint")->check(CLI::IsMember({"int", "slot", "joint"}));
  train->add_flag("--vat", train_vat, "add the VAT term");
  train->add_option("--fraction", train_fraction, "labeled percentage");
  train->add_option("--seed", train_seed, "run seed");

  Common score_opts;
  std::string score_ckpt, score_criterion = "entropy-joint";
  std::size_t score_budget = 0;
  std::uint64_t score_seed = 0;
  double score_fraction = 100.0;
  auto* score = app.add_subcommand("score", "score the unlabeled pool of a regime and dump confidences");
  add_common(score, score_opts);
  score->add_option("--checkpoint", score_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  score->add_option("--criterion", score_criterion, "random, entropy-int, entropy-slot or entropy-joint");
  score->add_option("--budget", score_budget, "number of ids to select");
  score->add_option("--fraction", score_fraction, "labeled percentage defining the pool");
  score->add_option("--seed", score_seed, "sampling and selection seed");

  Common serve_opts;
  std::string serve_data, serve_checkpoint, serve_task = "joint";
  double serve_fraction = 10.0;
  std::uint64_t serve_seed = 0;
  bool serve_vat = true;
  int lease_seconds = 600;
  auto* serve = app.add_subcommand("serve", "annotation service (bind: VIRAAL_BIND, token: VIRAAL_TOKEN)");
  add_common(serve, serve_opts, false);
  serve->add_option("--data", serve_data, "event log and checkpoint directory")->required();
  serve->add_option("--checkpoint", serve_checkpoint, "initial model (trained from the labeled set when absent)")
      ->check(CLI::ExistingFile);
  serve->add_option("--fraction", serve_fraction, "initially labeled percentage of train");
  serve->add_option("--seed", serve_seed, "sampling and training seed");
  serve->add_option("--task", serve_task, "int, slot or joint")->check(CLI::IsMember({"int", "slot", "joint"}));
  serve->add_option("--vat", serve_vat, "train with VAT on the remaining pool");
  serve->add_option("--lease-seconds", lease_seconds, "task lease length")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*regime) {
      const ExperimentContext ctx = context_for(regime_opts);
      if (fractions.empty()) fractions = default_fractions(ctx.dataset.name);
      const auto s = seeds_of(regime_opts);
      return finish_grid(regime_cells(ctx.dataset.name, fractions, regime_variants, s), ctx, regime_opts);
    }
    if (*al) {
      const ExperimentContext ctx = context_for(al_opts);
      if (budgets.empty()) budgets = default_budgets(ctx.dataset.name);
      const auto s = seeds_of(al_opts);
      return finish_grid(al_cells(ctx.dataset.name, budgets, al_variants, s), ctx, al_opts);
    }
    if (*sm) {
      const ExperimentContext ctx = context_for(sm_opts);
      const auto s = seeds_of(sm_opts);
      return finish_grid(small_medium_cells(ctx.dataset.name, splits, methods, s), ctx, sm_opts);
    }
    if (*agg) {
      const auto outcomes = load_cells(agg_out);
      write_reports(agg_out, aggregate(outcomes));
      const auto failed = std::count_if(outcomes.begin(), outcomes.end(), [](const CellOutcome& o) { return !o.ok; });
      std::cout << outcomes.size() << " cells aggregated, " << failed << " failed\n";
      return failed ? 1 : 0;
    }
    if (*sample) {
      const Dataset d = load_dataset(sample_opts.dataset);
      const RegimeSample s = sample_regime(d.train, sample_fraction, sample_seed);
      write_regime_manifest(manifest_path, d.train, s, sample_seed, sample_fraction);
      std::cout << s.labeled.size() << " labeled, " << s.unlabeled.size() << " unlabeled\n";
      return 0;
    }
    if (*train) {
      const ExperimentContext ctx = context_for(train_opts);
      const auto& tr = ctx.dataset.train;
      const RegimeSample s = sample_regime(tr, train_fraction, derive_seed("regime", ctx.dataset.name, train_fraction, train_seed));
      const LabeledSplit split = with_validation(s, tr, ctx.dataset.dev.size(),
                                                 derive_seed("validation", ctx.dataset.name, train_fraction, train_seed));
      RunConfig config = ctx.base;
      config.losses = RunConfig::losses_for(train_task, train_vat);
      config.seed = train_seed;
      const EmbeddingMatrix emb = ctx.embeddings(train_seed);
      std::vector<const Example*> val;
      std::unordered_map<int, const Example*> index;
      for (const auto& ex : tr) index.emplace(ex.utterance.id, &ex);
      for (int id : split.validation) val.push_back(index.at(id));
      const fs::path out = train_opts.out;
      fs::create_directories(out);
      FitOptions fo;
      fo.checkpoint_path = out / "model.ckpt";
      fo.on_epoch = [](const EpochRecord& e) {
        std::cerr << "epoch " << e.epoch << " loss " << e.total;
        if (e.has_validation) std::cerr << " val_acc " << e.val_intent_accuracy << " val_f1 " << e.val_slot_f1;
        std::cerr << '\n';
      };
      const FitResult r = fit(split.labeled, split.pool, tr, ctx.vocab, &emb, config, val, fo);
      MetricsReport report = evaluate(r.params, ctx.dataset.test, ctx.vocab);
      report.history = r.history;
      report.seed = train_seed;
      write_history_csv(out / "history.csv", r.history);
      std::ofstream(out / "report.json") << report.to_json().dump(2) << '\n';
      std::ofstream(out / "manifest.json")
          << run_manifest(config, {{"dataset_hash", ctx.dataset.content_hash},
                                   {"labeled", split.labeled.size()},
                                   {"validation", split.validation.size()},
                                   {"best_epoch", r.best_epoch},
                                   {"diverged", r.diverged},
                                   {"diagnostics", r.diagnostics}})
                 .dump(2)
          << '\n';
      std::cout << "intent accuracy " << 100.0 * report.intent_accuracy << " slot F1 " << report.slot_f1 << '\n';
      return r.diverged ? 1 : 0;
    }
    if (*score) {
      const Dataset d = load_dataset(score_opts.dataset);
      const Checkpoint ck = load_checkpoint(score_ckpt);
      const RegimeSample s = sample_regime(d.train, score_fraction, score_seed);
      if (s.unlabeled.empty()) throw std::invalid_argument("the regime leaves no unlabeled pool");
      const QuerySpec spec{parse_criterion(score_criterion), score_budget, score_seed};
      const RoundSelection sel = query_round(ck.params, d.train, s.unlabeled, ck.vocab, spec);
      write_scored_pool(score_opts.out, sel.pool_records,
                        spec.criterion == QueryCriterion::kRandom ? QueryCriterion::kEntropyJoint : spec.criterion);
      for (int id : sel.ids) std::cout << id << '\n';
      return 0;
    }
    if (*serve) {
      const ExperimentContext ctx = context_for(serve_opts);
      const auto& tr = ctx.dataset.train;
      const RegimeSample s = sample_regime(tr, serve_fraction, derive_seed("regime", ctx.dataset.name, serve_fraction, serve_seed));
      const LabeledSplit split = with_validation(s, tr, ctx.dataset.dev.size(),
                                                 derive_seed("validation", ctx.dataset.name, serve_fraction, serve_seed));
      ServiceSetup setup;
      setup.corpus = tr;
      setup.labeled = split.labeled;
      setup.validation = split.validation;
      setup.pool = split.pool;
      setup.vocab = ctx.vocab;
      setup.config = ctx.base;
      setup.config.losses = RunConfig::losses_for(serve_task, serve_vat);
      setup.config.seed = serve_seed;
      setup.embeddings = ctx.embeddings(serve_seed);
      setup.heldout = ctx.dataset.dev;
      const bool resuming = fs::exists(fs::path(serve_data) / "events.jsonl");
      if (!serve_checkpoint.empty()) {
        setup.checkpoint = load_checkpoint(serve_checkpoint).params;
      } else if (!resuming) {
        std::cerr << "training the initial model on " << split.labeled.size() << " labeled utterances\n";
        std::vector<const Example*> val;
        for (const auto& ex : tr) {
          if (std::binary_search(split.validation.begin(), split.validation.end(), ex.utterance.id)) val.push_back(&ex);
        }
        setup.checkpoint = fit(split.labeled, split.pool, tr, ctx.vocab, &*setup.embeddings, setup.config, val).params;
      }
      ServiceOptions so;
      so.data_dir = serve_data;
      so.lease = std::chrono::seconds(lease_seconds);
      AnnotationService service(std::move(setup), so);

      const char* bind_env = std::getenv("VIRAAL_BIND");
      const char* token_env = std::getenv("VIRAAL_TOKEN");
      const auto [host, port] = parse_bind(bind_env ? bind_env : "");
      httplib::Server server;
      install_routes(server, service, token_env ? token_env : "");
      active_server = &server;
      std::signal(SIGINT, stop_server);
      std::signal(SIGTERM, stop_server);
      std::cerr << "listening on " << host << ':' << port << '\n';
      if (!server.listen(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
      active_server = nullptr;
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
