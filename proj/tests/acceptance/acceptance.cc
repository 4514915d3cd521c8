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

// Acceptance report: one PASS/FAIL line per criterion.
//
//   1-6, 9, 10  self-contained, synthetic data only
//   7           ATIS Small, VAT joint vs CE baseline   (VIRAAL_ATIS_DIR)
//   8           SNIPS 2% intent-only active learning   (VIRAAL_SNIPS_DIR)
//
// VIRAAL_VECTORS points at 300-d pretrained vectors for 7 and 8. A criterion
// whose data is missing prints FAIL with a "blocked" reason and does not
// change the exit status; any other FAIL exits 1.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "support/experiment.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"
#include "support/tiny.hpp"
#include "viraal/active_learning.hpp"
#include "viraal/annotation_service.hpp"
#include "viraal/checkpoint.hpp"
#include "viraal/harness.hpp"
#include "viraal/trainer.hpp"
#include "viraal/vat.hpp"

namespace {

using namespace viraal;
namespace fs = std::filesystem;

struct Verdict {
  bool pass = false;
  std::string detail;
  bool blocked = false;
};

Verdict blocked(const std::string& why) { return {false, "blocked: " + why, true}; }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::vector<double> random_distribution(std::mt19937_64& rng, int n) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(static_cast<std::size_t>(n));
  double s = 0.0;
  for (auto& v : p) s += (v = e(rng));
  for (auto& v : p) v /= s;
  return p;
}

Verdict divergence_properties() {
  std::mt19937_64 rng(2026);
  std::uniform_int_distribution<int> dim(2, 130);
  double worst_self = 0.0, min_kl = 0.0, worst_bound = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int n = dim(rng);
    const auto p = random_distribution(rng, n);
    const auto q = random_distribution(rng, n);
    min_kl = std::min(min_kl, kl_divergence(p, q));
    worst_self = std::max(worst_self, std::abs(kl_divergence(p, p)));
    const double h = entropy(p);
    worst_bound = std::max({worst_bound, -h, h - std::log(static_cast<double>(n))});
  }
  bool one_hot_zero = true;
  for (int n : {2, 7, 127}) {
    for (int k = 0; k < n; k += 3) {
      std::vector<double> e(static_cast<std::size_t>(n), 0.0);
      e[static_cast<std::size_t>(k)] = 1.0;
      one_hot_zero = one_hot_zero && entropy(e) == 0.0 && kl_divergence(e, e) == 0.0;
    }
  }
  const bool pass = min_kl >= 0.0 && worst_self == 0.0 && worst_bound <= 1e-12 && one_hot_zero;
  return {pass, "min KL " + fmt(min_kl) + ", max |KL(p||p)| " + fmt(worst_self) + ", entropy bound excess " +
                    fmt(worst_bound) + ", one-hot exact " + (one_hot_zero ? "yes" : "no")};
}

double ce_value(const ModelParams& params, const Batch& batch, LossTerm term) {
  ad::Tape tape(false);
  ForwardOptions opts;
  opts.conditioning = SlotConditioning::kTeacherForced;
  const auto out = forward(tape, params, batch, opts);
  const Posteriors p = posteriors(tape, out, batch);
  return term == LossTerm::kCeIntent ? ce_intent_loss(p, batch.intents) : ce_slot_loss(p, batch.slots);
}

Verdict gradient_checks() {
  testing::TinySetup s;
  const std::size_t count = s.params.parameter_count();
  double ce_err = 0.0, vat_err = 0.0;
  for (LossTerm term : {LossTerm::kCeIntent, LossTerm::kCeSlot}) {
    RunConfig config;
    config.losses = {term};
    config.classifier_dropout = 0.0;
    config.embedding_dropout = 0.0;
    std::mt19937_64 rng(0);
    ad::Tape tape;
    const auto terms = total_loss(tape, s.params, s.params, s.batch, config, rng);
    tape.backward(terms.total);
    ModelParams p = s.params;
    std::vector<double> analytic, numeric;
    for (std::size_t slot = 0; slot < ModelParams::kCount; ++slot) {
      const Matrix* g = tape.param_grad(slot);
      testing::append(analytic, g ? *g : Matrix::Zero(p[slot].rows(), p[slot].cols()).eval());
      const auto n = testing::numeric_gradient(p[slot], [&] { return ce_value(p, s.batch, term); });
      numeric.insert(numeric.end(), n.begin(), n.end());
    }
    ce_err = std::max(ce_err, testing::relative_error(analytic, numeric));
  }
  VatConfig config;
  config.epsilon = 1.0;
  for (VatHeads heads : {VatHeads::kIntent, VatHeads::kSlot, VatHeads::kJoint}) {
    std::mt19937_64 rng(31);
    const VatAnchor anchor = anchor_pass(s.params, s.batch);
    const Perturbation r = compute_r_vadv(s.batch, s.params, config, heads, rng, &anchor);
    ModelParams model = ModelParams::initialize(s.dims, 5);
    ad::Tape tape;
    tape.backward(vat_loss(tape, model, s.batch, anchor, r, heads, true));
    auto value = [&] {
      ad::Tape t(false);
      return t.value(vat_loss(t, model, s.batch, anchor, r, heads, false))(0, 0);
    };
    std::vector<double> analytic, numeric;
    for (std::size_t slot = 0; slot < ModelParams::kCount; ++slot) {
      const Matrix* g = tape.param_grad(slot);
      testing::append(analytic, g ? *g : Matrix::Zero(model[slot].rows(), model[slot].cols()).eval());
      const auto n = testing::numeric_gradient(model[slot], value);
      numeric.insert(numeric.end(), n.begin(), n.end());
    }
    vat_err = std::max(vat_err, testing::relative_error(analytic, numeric));
  }
  const bool pass = count <= 500 && ce_err < 1e-4 && vat_err < 1e-3;
  return {pass, std::to_string(count) + " parameters, CE rel err " + fmt(ce_err, 3) + " (< 1e-4), VAT rel err " +
                    fmt(vat_err, 3) + " (< 1e-3)"};
}

Verdict cancellation() {
  testing::TinySetup s;
  std::mt19937_64 rng(2);
  const VatAnchor anchor = anchor_pass(s.params, s.batch);
  const Perturbation start = random_start(s.batch, s.dims.word_dim, 1e-2, rng);
  const auto g_int = perturbation_gradient(s.batch, s.params, anchor, start, VatHeads::kIntent);
  std::vector<Matrix> g_slot;
  for (const auto& g : g_int) g_slot.push_back(-g);
  double max_r = 0.0, max_loss = 0.0;
  for (JointNormMode mode : {JointNormMode::kRawGradient, JointNormMode::kNormalizeThenAverage}) {
    VatConfig config;
    config.joint_norm_mode = mode;
    const Perturbation r = joint_from_gradients(g_int, g_slot, s.batch.mask, config);
    for (const auto& step : r.steps) max_r = std::max(max_r, step.cwiseAbs().maxCoeff());
    ad::Tape tape;
    max_loss = std::max(max_loss, std::abs(tape.value(vat_loss(tape, s.params, s.batch, anchor, r, VatHeads::kJoint))(0, 0)));
  }
  return {max_r == 0.0 && max_loss == 0.0,
          "g_slot = -g_int: max |r_joint| " + fmt(max_r) + ", L_vat " + fmt(max_loss) + " (both modes)"};
}

Verdict perturbation_norm() {
  testing::TinySetup s;
  double worst = 0.0, leak = 0.0;
  for (VatHeads heads : {VatHeads::kIntent, VatHeads::kSlot, VatHeads::kJoint}) {
    for (JointNormMode mode : {JointNormMode::kRawGradient, JointNormMode::kNormalizeThenAverage}) {
      for (double eps : {5.0, 0.3}) {
        VatConfig config;
        config.epsilon = eps;
        config.joint_norm_mode = mode;
        std::mt19937_64 rng(12);
        const Perturbation r = compute_r_vadv(s.batch, s.params, config, heads, rng);
        for (std::size_t b = 0; b < s.batch.size(); ++b) {
          worst = std::max(worst, std::abs(r.example_norm(b) - eps));
          for (int t = s.batch.lengths[b]; t < s.batch.max_length(); ++t) {
            leak = std::max(leak, r.steps[static_cast<std::size_t>(t)].row(static_cast<Eigen::Index>(b)).cwiseAbs().maxCoeff());
          }
        }
      }
    }
  }
  return {worst <= 1e-6 && leak == 0.0, "max | ||r_b|| - eps | " + fmt(worst, 3) + ", max |r| at padding " + fmt(leak)};
}

std::vector<ConfidenceRecord> synthetic_pool(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len(1, 12);
  std::vector<ConfidenceRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    ConfidenceRecord r;
    r.id = static_cast<int>(5000 - 13 * i);
    r.conf_int = -entropy(random_distribution(rng, 18));
    const int T = len(rng);
    double s = 0.0;
    for (int t = 0; t < T; ++t) s -= entropy(random_distribution(rng, 20));
    r.conf_slot = s / T;
    out.push_back(r);
  }
  return out;
}

long double oracle_entropy(const std::vector<double>& p) {
  long double h = 0;
  for (double v : p) {
    if (v > 0) h -= static_cast<long double>(v) * std::log(static_cast<long double>(v));
  }
  return h;
}

double oracle_percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double rank = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = static_cast<std::size_t>(std::ceil(rank));
  return v[lo] + (rank - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<int> brute_force_order(const std::vector<std::pair<double, int>>& keyed) {
  std::vector<int> out;
  std::vector<bool> used(keyed.size(), false);
  for (std::size_t k = 0; k < keyed.size(); ++k) {
    std::size_t best = keyed.size();
    for (std::size_t i = 0; i < keyed.size(); ++i) {
      if (used[i]) continue;
      if (best == keyed.size() || keyed[i].first < keyed[best].first ||
          (keyed[i].first == keyed[best].first && keyed[i].second < keyed[best].second)) {
        best = i;
      }
    }
    used[best] = true;
    out.push_back(keyed[best].second);
  }
  return out;
}

Verdict selection_oracle() {
  std::mt19937_64 rng(99);
  double entropy_err = 0.0, pct_err = 0.0;
  for (int i = 0; i < 200; ++i) {
    const auto p = random_distribution(rng, 2 + i % 60);
    entropy_err = std::max(entropy_err, static_cast<double>(std::abs(entropy(p) - oracle_entropy(p))));
  }
  std::size_t orderings = 0, mismatches = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto pool = synthetic_pool(100, seed);
    std::vector<double> e_int, e_slot;
    for (const auto& r : pool) {
      e_int.push_back(-r.conf_int);
      e_slot.push_back(-r.conf_slot);
    }
    for (double q : {0.0, 37.5, 99.0, 100.0}) {
      pct_err = std::max(pct_err, std::abs(percentile(e_int, q) - oracle_percentile(e_int, q)));
    }
    joint_confidence(pool);
    const double p_int = std::max(oracle_percentile(e_int, 99.0), 1e-8);
    const double p_slot = std::max(oracle_percentile(e_slot, 99.0), 1e-8);
    for (QueryCriterion c : {QueryCriterion::kEntropyIntent, QueryCriterion::kEntropySlot, QueryCriterion::kEntropyJoint}) {
      std::vector<std::pair<double, int>> keyed;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        const double key = c == QueryCriterion::kEntropyIntent ? pool[i].conf_int
                           : c == QueryCriterion::kEntropySlot ? pool[i].conf_slot
                                                               : -(e_int[i] / p_int + e_slot[i] / p_slot);
        keyed.emplace_back(key, pool[i].id);
      }
      const auto oracle = brute_force_order(keyed);
      for (std::size_t budget : {1u, 10u, 50u, 100u}) {
        ++orderings;
        if (select(pool, {c, budget, seed}) != std::vector<int>(oracle.begin(), oracle.begin() + static_cast<std::ptrdiff_t>(budget))) {
          ++mismatches;
        }
      }
    }
  }
  const bool pass = entropy_err < 1e-12 && pct_err == 0.0 && mismatches == 0;
  return {pass, "entropy err " + fmt(entropy_err, 3) + ", percentile err " + fmt(pct_err, 3) + ", " +
                    std::to_string(orderings - mismatches) + "/" + std::to_string(orderings) +
                    " selections equal the brute-force order"};
}

Verdict scale_invariance() {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> log_c(-8.0, 8.0);
  std::size_t trials = 0, changed = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto pool = synthetic_pool(100, seed);
    for (std::size_t budget : {1u, 10u, 33u}) {
      const auto base = select([&] { auto p = pool; joint_confidence(p); return p; }(), {QueryCriterion::kEntropyJoint, budget, 0});
      const std::set<int> base_set(base.begin(), base.end());
      for (int k = 0; k < 10; ++k) {
        const double c = std::exp(log_c(rng));
        for (bool intent : {true, false}) {
          auto scaled = pool;
          for (auto& r : scaled) (intent ? r.conf_int : r.conf_slot) *= c;
          joint_confidence(scaled);
          const auto got = select(scaled, {QueryCriterion::kEntropyJoint, budget, 0});
          ++trials;
          changed += std::set<int>(got.begin(), got.end()) != base_set;
        }
      }
    }
  }
  return {changed == 0, std::to_string(trials - changed) + "/" + std::to_string(trials) +
                            " rescaled pools (c in [e^-8, e^8]) keep the selected set"};
}

Verdict grid_capability() {
  std::size_t cells = 0;
  std::set<std::string> ids;
  std::vector<std::uint64_t> seeds(8);
  std::iota(seeds.begin(), seeds.end(), 0);
  for (const char* d : {"atis", "snips"}) {
    for (const auto& c : regime_cells(d, default_fractions(d), all_regime_variants(), seeds)) ids.insert(c.id()), ++cells;
    for (const auto& c : al_cells(d, default_budgets(d), all_al_variants(), seeds)) ids.insert(c.id()), ++cells;
    for (const auto& c : small_medium_cells(d, std::vector<std::string>{"small", "medium"}, all_small_medium_methods(), seeds)) {
      ids.insert(c.id()), ++cells;
    }
  }
  // A miniature grid through the same scheduler, resumed once.
  const ExperimentContext ctx = testing::synthetic_context();
  testing::TempDir dir;
  HarnessOptions options;
  options.out_dir = dir.path();
  options.jobs = 2;
  const std::vector<double> f = {20, 50};
  const std::vector<std::string> variants = {"ce-joint", "vat-joint"};
  const std::vector<std::uint64_t> two = {0, 1};
  const auto mini = regime_cells(ctx.dataset.name, f, variants, two);
  const RunSummary first = run_cells(mini, ctx, options);
  const RunSummary again = run_cells(mini, ctx, options);
  const auto rows = aggregate(again.outcomes);
  write_reports(dir.path(), rows);
  const bool pass = ids.size() == cells && first.failed == 0 && again.reused == mini.size() && rows.size() == 4 &&
                    fs::exists(dir / "summary.csv");
  return {pass, std::to_string(cells) + " distinct cells in the full 8-seed grids; mini grid " +
                    std::to_string(first.computed) + " run, rerun reused " + std::to_string(again.reused) + ", " +
                    std::to_string(rows.size()) + " summary rows"};
}

Verdict oracle_equivalence() {
  ExperimentContext ctx = testing::synthetic_context();
  ctx.base.losses = RunConfig::losses_for("joint", true);
  std::size_t runs = 0, matches = 0;
  for (std::uint64_t seed : {0u, 1u}) {
    for (const char* variant : {"vat-ent-joint", "vat-ent-int", "vat-random-joint", "ce-ent-slot"}) {
      testing::TempDir out;
      HarnessOptions ho;
      ho.out_dir = out.path();
      ho.keep_checkpoints = true;
      const Cell cell{ExperimentKind::kActiveLearning, ctx.dataset.name, variant, 20, "", seed};
      const CellOutcome o = run_cell(cell, ctx, ho);
      const LabeledSplit init = al_initial_split(ctx.dataset.train, cell.dataset, 20, seed, ctx.dataset.dev.size());
      ServiceSetup st;
      st.corpus = ctx.dataset.train;
      st.labeled = init.labeled;
      st.validation = init.validation;
      st.pool = init.pool;
      st.vocab = ctx.vocab;
      st.checkpoint = load_checkpoint(o.details["round1_checkpoint"].get<std::string>()).params;
      st.config = ctx.base;
      st.config.seed = seed;
      st.embeddings = ctx.embeddings(seed);
      testing::TempDir data;
      ServiceOptions so;
      so.data_dir = data.path();
      so.synchronous_retrain = true;
      AnnotationService service(std::move(st), so);
      const OracleRoundResult r =
          run_oracle_round(service, ctx.dataset.train, parse_criterion(o.details["criterion"].get<std::string>()),
                           o.details["query_budget"].get<std::size_t>(), derive_seed("query", cell.dataset, 20, seed));
      std::vector<int> harness_final = init.labeled;
      for (int id : o.details["selected"].get<std::vector<int>>()) harness_final.push_back(id);
      std::sort(harness_final.begin(), harness_final.end());
      ++runs;
      matches += r.served == o.details["selected"].get<std::vector<int>>() && service.labeled_ids() == harness_final &&
                 r.job.state == JobState::kSucceeded;
    }
  }
  return {matches == runs, std::to_string(matches) + "/" + std::to_string(runs) +
                               " simulated-annotator rounds select the harness round-two ids and final labeled set"};
}

std::vector<std::uint64_t> four_seeds() { return {0, 1, 2, 3}; }

std::optional<fs::path> env_path(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return fs::path(v);
}

double mean_of(const std::vector<CellOutcome>& outs, const std::string& variant, bool slot) {
  std::vector<double> v;
  for (const auto& o : outs) {
    if (o.ok && o.cell.variant == variant) v.push_back(slot ? o.report.slot_f1 : 100.0 * o.report.intent_accuracy);
  }
  return mean_std(v).mean;
}

Verdict atis_small(const fs::path& out, int jobs) {
  const auto root = env_path("VIRAAL_ATIS_DIR");
  if (!root || !fs::exists(*root)) return blocked("ATIS not on disk (set VIRAAL_ATIS_DIR)");
  const auto vectors = env_path("VIRAAL_VECTORS");
  const ExperimentContext ctx = load_context(*root, nlohmann::json::object(), vectors);
  HarnessOptions o;
  o.out_dir = out / "atis-small";
  o.jobs = jobs;
  const std::vector<std::string> split = {"small"}, methods = {"baseline", "vat-joint"};
  const RunSummary s = run_cells(small_medium_cells(ctx.dataset.name, split, methods, four_seeds()), ctx, o);
  if (s.failed) return {false, std::to_string(s.failed) + " cells failed"};
  const double base = mean_of(s.outcomes, "baseline", true), vat = mean_of(s.outcomes, "vat-joint", true);
  bool pass = vat - base >= 2.0;
  std::string detail = "slot F1 vat-joint " + fmt(vat) + " vs baseline " + fmt(base) + " (gap >= 2.0)";
  if (vectors && ctx.base.embedding_size == 300) {
    pass = pass && std::abs(vat - 75.61) <= 2.5 && std::abs(base - 72.19) <= 2.5;
    detail += ", reference 75.61 / 72.19 +- 2.5";
  } else {
    detail += ", reference band not checked without 300-d vectors";
  }
  return {pass, detail};
}

Verdict snips_al(const fs::path& out, int jobs) {
  const auto root = env_path("VIRAAL_SNIPS_DIR");
  if (!root || !fs::exists(*root)) return blocked("SNIPS not on disk (set VIRAAL_SNIPS_DIR)");
  const auto vectors = env_path("VIRAAL_VECTORS");
  const ExperimentContext ctx = load_context(*root, nlohmann::json::object(), vectors);
  HarnessOptions o;
  o.out_dir = out / "snips-al";
  o.jobs = jobs;
  const std::vector<double> budgets = {2};
  const std::vector<std::string> variants = {"vat-ent-int", "vat-random-int", "ce-ent-int"};
  const RunSummary s = run_cells(al_cells(ctx.dataset.name, budgets, variants, four_seeds()), ctx, o);
  if (s.failed) return {false, std::to_string(s.failed) + " cells failed"};
  const double ent = mean_of(s.outcomes, "vat-ent-int", false);
  const double rnd = mean_of(s.outcomes, "vat-random-int", false);
  const double ce = mean_of(s.outcomes, "ce-ent-int", false);
  bool pass = ent >= rnd && ent >= ce;
  std::string detail = "intent acc (vat, ent) " + fmt(ent) + ", (vat, random) " + fmt(rnd) + ", (ce, ent) " + fmt(ce);
  if (vectors && ctx.base.embedding_size == 300) {
    pass = pass && std::abs(ent - 96.43) <= 1.0;
    detail += ", reference 96.43 +- 1.0";
  } else {
    detail += ", reference band not checked without 300-d vectors";
  }
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance report"};
  std::vector<int> only;
  std::string out = (fs::temp_directory_path() / "viraal-acceptance").string();
  int jobs = 1;
  app.add_option("--criteria", only, "subset of criteria to evaluate");
  app.add_option("--out", out, "cell directory for the dataset criteria (resumable)");
  app.add_option("--jobs", jobs, "worker processes for the dataset criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"KL and entropy properties on 1000 random distributions", divergence_properties},
      {"CE and VAT gradients vs central finite differences", gradient_checks},
      {"opposed head gradients cancel: r_joint = 0, L_vat = 0", cancellation},
      {"perturbation norm eps per example, zero at padding", perturbation_norm},
      {"entropy, percentile and selection equal brute-force oracles", selection_oracle},
      {"joint confidence selection is invariant to entropy scaling", scale_invariance},
      {"ATIS Small: VAT joint slot F1 >= CE baseline + 2.0", [&] { return atis_small(out, jobs); }},
      {"SNIPS 2% intent AL: (vat, ent) >= (vat, random), (ce, ent)", [&] { return snips_al(out, jobs); }},
      {"harness produces full 8-seed grids", grid_capability},
      {"service oracle round equals harness round two", oracle_equivalence},
  };
  bool failed = false;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    std::cout << "criterion " << number << ": " << (v.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << "  ["
              << v.detail << "]" << std::endl;
    failed = failed || (!v.pass && !v.blocked);
  }
  return failed ? 1 : 0;
}
