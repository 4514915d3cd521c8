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

#include "viraal/annotation_service.hpp"

#include <unistd.h>

#include <algorithm>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <unordered_map>

#include "viraal/checkpoint.hpp"
#include "viraal/harness.hpp"

namespace viraal {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using TimePoint = std::chrono::system_clock::time_point;

std::int64_t to_millis(TimePoint t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

TimePoint from_millis(std::int64_t ms) { return TimePoint(std::chrono::milliseconds(ms)); }

json confidence_json(const ConfidenceRecord& c) {
  json j = {{"conf_int", c.conf_int}, {"conf_slot", c.conf_slot}, {"conf_joint", nullptr}};
  if (c.conf_joint) j["conf_joint"] = *c.conf_joint;
  return j;
}

ConfidenceRecord confidence_from(int id, const json& j) {
  ConfidenceRecord c;
  c.id = id;
  c.conf_int = j.at("conf_int").get<double>();
  c.conf_slot = j.at("conf_slot").get<double>();
  if (!j.at("conf_joint").is_null()) c.conf_joint = j.at("conf_joint").get<double>();
  return c;
}

json task_state_json(const AnnotationTask& t) {
  json j = t.to_json();
  j["served"] = t.served;
  j["lease_until"] = t.lease_until ? json(to_millis(*t.lease_until)) : json(nullptr);
  return j;
}

AnnotationTask task_from(const json& j) {
  AnnotationTask t;
  t.id = j.at("id").get<int>();
  t.rank = j.at("rank").get<int>();
  t.tokens = j.at("tokens").get<std::vector<std::string>>();
  t.suggested_intent = j.at("suggested_intent").get<std::string>();
  t.suggested_slots = j.at("suggested_slots").get<std::vector<std::string>>();
  t.confidence = confidence_from(t.id, j.at("confidence"));
  t.status = parse_status(j.value("status", std::string("queued")));
  t.served = j.value("served", false);
  if (j.contains("lease_until") && !j.at("lease_until").is_null()) {
    t.lease_until = from_millis(j.at("lease_until").get<std::int64_t>());
  }
  return t;
}

Round round_from(const json& j) {
  Round r;
  r.number = j.at("number").get<int>();
  r.criterion = parse_criterion(j.at("criterion").get<std::string>());
  r.budget = j.at("budget").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.checkpoint = j.at("checkpoint").get<std::string>();
  r.created = j.at("created").get<std::int64_t>();
  r.completed = j.at("completed").get<std::int64_t>();
  r.active = j.at("active").get<bool>();
  return r;
}

RetrainJob job_from(const json& j) {
  RetrainJob r;
  r.id = j.at("id").get<int>();
  r.round = j.at("round").get<int>();
  const std::string s = j.at("state").get<std::string>();
  r.state = s == "running" ? JobState::kRunning : s == "succeeded" ? JobState::kSucceeded : JobState::kFailed;
  r.checkpoint = j.value("checkpoint", std::string());
  r.error = j.value("error", std::string());
  r.labeled = j.value("labeled", std::size_t{0});
  r.unlabeled = j.value("unlabeled", std::size_t{0});
  if (j.contains("metrics") && !j.at("metrics").is_null()) r.metrics = MetricsReport::from_json(j.at("metrics"));
  return r;
}

json annotation_json(const Annotation& a) { return {{"intent", a.intent}, {"slots", a.slots}}; }

Annotation annotation_from(const json& j) {
  return {j.at("intent").get<std::string>(), j.at("slots").get<std::vector<std::string>>()};
}

std::uint64_t setup_fingerprint(const ServiceSetup& s) {
  std::string text;
  auto ids = [&](const char* tag, const std::vector<int>& v) {
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    text += tag;
    for (int id : sorted) text += std::to_string(id) + ",";
  };
  ids("L", s.labeled);
  ids("V", s.validation);
  ids("P", s.pool);
  std::vector<const Example*> ordered;
  for (const auto& ex : s.corpus) ordered.push_back(&ex);
  std::sort(ordered.begin(), ordered.end(),
            [](const Example* a, const Example* b) { return a->utterance.id < b->utterance.id; });
  for (const Example* ex : ordered) {
    text += "|" + std::to_string(ex->utterance.id);
    for (const auto& tok : ex->utterance.tokens) text += " " + tok;
  }
  return fnv1a(text);
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f << text;
    if (!f.flush()) throw std::ios_base::failure("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

ValidationError::ValidationError(const std::string& message, std::map<std::string, std::string> fields)
    : ServiceError(message), fields_(std::move(fields)) {}

std::string_view status_name(TaskStatus status) {
  switch (status) {
    case TaskStatus::kQueued: return "queued";
    case TaskStatus::kAssigned: return "assigned";
    case TaskStatus::kLabeled: return "labeled";
    case TaskStatus::kSkipped: return "skipped";
  }
  return "unknown";
}

TaskStatus parse_status(std::string_view name) {
  if (name == "queued") return TaskStatus::kQueued;
  if (name == "assigned") return TaskStatus::kAssigned;
  if (name == "labeled") return TaskStatus::kLabeled;
  if (name == "skipped") return TaskStatus::kSkipped;
  throw std::invalid_argument("unknown task status: " + std::string(name));
}

std::string_view job_state_name(JobState state) {
  switch (state) {
    case JobState::kRunning: return "running";
    case JobState::kSucceeded: return "succeeded";
    case JobState::kFailed: return "failed";
  }
  return "unknown";
}

json AnnotationTask::to_json() const {
  return {{"id", id},
          {"rank", rank},
          {"tokens", tokens},
          {"suggested_intent", suggested_intent},
          {"suggested_slots", suggested_slots},
          {"confidence", confidence_json(confidence)},
          {"status", status_name(status)}};
}

json Round::to_json() const {
  return {{"number", number},   {"criterion", criterion_name(criterion)},
          {"budget", budget},   {"seed", seed},
          {"checkpoint", checkpoint}, {"created", created},
          {"completed", completed},   {"active", active}};
}

json RetrainJob::to_json() const {
  return {{"id", id},
          {"round", round},
          {"state", job_state_name(state)},
          {"checkpoint", checkpoint},
          {"error", error},
          {"labeled", labeled},
          {"unlabeled", unlabeled},
          {"metrics", metrics ? metrics->to_json() : json(nullptr)}};
}

json LabelAck::to_json() const {
  return {{"id", id}, {"duplicate", duplicate}, {"labeled_count", labeled_count}, {"pool_count", pool_count}};
}

json ServiceStatus::to_json() const {
  return {{"round", round ? round->to_json() : json(nullptr)},
          {"labeled_count", labeled_count},
          {"pool_count", pool_count},
          {"checkpoint", checkpoint},
          {"open_tasks", open_tasks},
          {"retraining", retraining}};
}

struct AnnotationService::State {
  std::vector<Example> corpus;
  std::unordered_map<int, std::size_t> index;
  std::set<int> labeled, validation, pool;
  std::map<int, Annotation> received;  // labels submitted through the service
  Vocabulary vocab;
  ModelParams params;
  RunConfig config;
  std::optional<EmbeddingMatrix> embeddings;
  std::vector<Example> heldout;
  std::string checkpoint;
  std::optional<Round> round;
  int rounds = 0;
  std::vector<AnnotationTask> tasks;
  std::unordered_map<int, std::size_t> task_index;
  std::map<int, std::uint64_t> skip_order;
  std::uint64_t skips = 0;
  std::map<int, RetrainJob> jobs;
  int next_job = 1;
  std::optional<MetricsReport> metrics;
  std::uint64_t seq = 0;
  std::uint64_t fingerprint = 0;
  std::condition_variable_any job_done;

  Example& example(int id) { return corpus.at(index.at(id)); }

  AnnotationTask* task(int id) {
    auto it = task_index.find(id);
    return it == task_index.end() ? nullptr : &tasks[it->second];
  }

  bool round_complete() const {
    return std::all_of(tasks.begin(), tasks.end(), [](const AnnotationTask& t) {
      return t.status == TaskStatus::kLabeled || t.status == TaskStatus::kSkipped;
    });
  }

  std::optional<int> running_job() const {
    for (const auto& [id, j] : jobs) {
      if (j.state == JobState::kRunning) return id;
    }
    return std::nullopt;
  }

  json snapshot() const {
    json tasks_j = json::array();
    for (const auto& t : tasks) tasks_j.push_back(task_state_json(t));
    json received_j = json::object();
    for (const auto& [id, a] : received) received_j[std::to_string(id)] = annotation_json(a);
    json skips_j = json::object();
    for (const auto& [id, k] : skip_order) skips_j[std::to_string(id)] = k;
    json jobs_j = json::array();
    for (const auto& [id, j] : jobs) jobs_j.push_back(j.to_json());
    return {{"seq", seq},
            {"fingerprint", fingerprint},
            {"labeled", labeled},
            {"validation", validation},
            {"pool", pool},
            {"received", received_j},
            {"checkpoint", checkpoint},
            {"round", round ? round->to_json() : json(nullptr)},
            {"rounds", rounds},
            {"tasks", tasks_j},
            {"skip_order", skips_j},
            {"skips", skips},
            {"jobs", jobs_j},
            {"next_job", next_job},
            {"metrics", metrics ? metrics->to_json() : json(nullptr)}};
  }
};

AnnotationService::AnnotationService(ServiceSetup setup, ServiceOptions options)
    : options_(std::move(options)), state_(std::make_unique<State>()) {
  if (options_.data_dir.empty()) throw std::invalid_argument("annotation service: data_dir is required");
  fs::create_directories(options_.data_dir / "checkpoints");
  State& s = *state_;
  s.fingerprint = setup_fingerprint(setup);
  s.corpus = std::move(setup.corpus);
  for (std::size_t i = 0; i < s.corpus.size(); ++i) {
    if (!s.index.emplace(s.corpus[i].utterance.id, i).second) {
      throw std::invalid_argument("annotation service: duplicate example id");
    }
  }
  for (int id : setup.pool) s.example(id).annotation.reset();
  for (int id : setup.labeled) {
    if (!s.example(id).annotation) throw std::invalid_argument("annotation service: labeled id without annotation");
  }
  s.labeled.insert(setup.labeled.begin(), setup.labeled.end());
  s.validation.insert(setup.validation.begin(), setup.validation.end());
  s.pool.insert(setup.pool.begin(), setup.pool.end());
  if (s.labeled.size() + s.validation.size() + s.pool.size() !=
      setup.labeled.size() + setup.validation.size() + setup.pool.size()) {
    throw std::invalid_argument("annotation service: labeled, validation and pool overlap");
  }
  s.config = setup.config;
  s.embeddings = std::move(setup.embeddings);
  s.heldout = std::move(setup.heldout);

  const fs::path log_path = options_.data_dir / "events.jsonl";
  const fs::path snap_path = options_.data_dir / "snapshot.json";
  if (!fs::exists(log_path) || fs::file_size(log_path) == 0) {
    const std::string ref = "checkpoints/initial.ckpt";
    save_checkpoint(options_.data_dir / ref, Checkpoint{setup.checkpoint, setup.vocab, s.config.to_json()});
    json init = {{"type", "init"},
                 {"fingerprint", s.fingerprint},
                 {"checkpoint", ref},
                 {"labeled", s.labeled.size()},
                 {"validation", s.validation.size()},
                 {"pool", s.pool.size()}};
    if (!s.heldout.empty()) init["metrics"] = evaluate(setup.checkpoint, s.heldout, setup.vocab).to_json();
    append_event(std::move(init));
    return;
  }

  std::uint64_t start = 0;
  if (fs::exists(snap_path)) {
    std::ifstream f(snap_path);
    const json snap = json::parse(f);
    if (snap.at("fingerprint").get<std::uint64_t>() != s.fingerprint) {
      throw ServiceError("data directory belongs to a different labeled/pool split");
    }
    s.labeled = snap.at("labeled").get<std::set<int>>();
    s.validation = snap.at("validation").get<std::set<int>>();
    s.pool = snap.at("pool").get<std::set<int>>();
    for (const auto& [key, a] : snap.at("received").items()) {
      const int id = std::stoi(key);
      s.received[id] = annotation_from(a);
      s.example(id).annotation = s.received[id];
    }
    load_checkpoint_ref(snap.at("checkpoint").get<std::string>());
    if (!snap.at("round").is_null()) s.round = round_from(snap.at("round"));
    s.rounds = snap.at("rounds").get<int>();
    for (const auto& t : snap.at("tasks")) {
      s.task_index[t.at("id").get<int>()] = s.tasks.size();
      s.tasks.push_back(task_from(t));
    }
    for (const auto& [key, k] : snap.at("skip_order").items()) s.skip_order[std::stoi(key)] = k.get<std::uint64_t>();
    s.skips = snap.at("skips").get<std::uint64_t>();
    for (const auto& j : snap.at("jobs")) s.jobs[j.at("id").get<int>()] = job_from(j);
    s.next_job = snap.at("next_job").get<int>();
    if (!snap.at("metrics").is_null()) s.metrics = MetricsReport::from_json(snap.at("metrics"));
    s.seq = start = snap.at("seq").get<std::uint64_t>();
  }

  std::ifstream log(log_path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(log, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    json event;
    try {
      event = json::parse(lines[i]);
    } catch (const json::parse_error&) {
      if (i + 1 == lines.size()) break;  // torn final write
      throw ServiceError("corrupt event log at line " + std::to_string(i + 1));
    }
    const auto seq = event.at("seq").get<std::uint64_t>();
    if (seq <= start) continue;
    if (seq != s.seq + 1) throw ServiceError("event log out of sequence at line " + std::to_string(i + 1));
    if (event.at("type") == "init" && event.at("fingerprint").get<std::uint64_t>() != s.fingerprint) {
      throw ServiceError("data directory belongs to a different labeled/pool split");
    }
    apply(event, true);
    s.seq = seq;
  }
  if (const auto running = s.running_job()) {
    append_event({{"type", "retrain_finished"},
                  {"job", *running},
                  {"ok", false},
                  {"error", "interrupted by restart"}});
  }
}

AnnotationService::~AnnotationService() {
  if (worker_.joinable()) worker_.join();
}

std::chrono::system_clock::time_point AnnotationService::now() const {
  return options_.clock ? options_.clock() : std::chrono::system_clock::now();
}

void AnnotationService::append_event(json event) {
  State& s = *state_;
  event["seq"] = s.seq + 1;
  event["time"] = to_millis(now());
  const std::string line = event.dump() + "\n";
  const fs::path path = options_.data_dir / "events.jsonl";
  std::FILE* f = std::fopen(path.c_str(), "ab");
  if (!f) throw std::ios_base::failure("cannot append to " + path.string());
  const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fflush(f) == 0 &&
                  ::fsync(::fileno(f)) == 0;
  std::fclose(f);
  if (!ok) throw std::ios_base::failure("cannot append to " + path.string());
  apply(event, false);
  s.seq += 1;
  const std::string type = event.at("type");
  if (type == "round_opened" || type == "retrain_finished") write_snapshot();
}

void AnnotationService::load_checkpoint_ref(const std::string& ref) {
  State& s = *state_;
  Checkpoint c = load_checkpoint(options_.data_dir / ref);
  s.params = std::move(c.params);
  s.vocab = std::move(c.vocab);
  s.checkpoint = ref;
}

void AnnotationService::apply(const json& e, bool replay) {
  State& s = *state_;
  const std::string type = e.at("type");
  if (type == "init") {
    load_checkpoint_ref(e.at("checkpoint").get<std::string>());
    if (e.contains("metrics")) s.metrics = MetricsReport::from_json(e.at("metrics"));
  } else if (type == "round_opened") {
    Round r = round_from(e.at("round"));
    s.round = r;
    s.rounds = r.number;
    s.tasks.clear();
    s.task_index.clear();
    s.skip_order.clear();
    for (const auto& t : e.at("tasks")) {
      s.task_index[t.at("id").get<int>()] = s.tasks.size();
      s.tasks.push_back(task_from(t));
    }
  } else if (type == "assign") {
    const TimePoint until = from_millis(e.at("until").get<std::int64_t>());
    for (int id : e.at("ids").get<std::vector<int>>()) {
      AnnotationTask& t = *s.task(id);
      if (t.status == TaskStatus::kQueued || t.status == TaskStatus::kAssigned) t.status = TaskStatus::kAssigned;
      t.served = true;
      t.lease_until = until;
    }
  } else if (type == "label") {
    const int id = e.at("id").get<int>();
    const Annotation a = annotation_from(e);
    s.example(id).annotation = a;
    s.received[id] = a;
    s.pool.erase(id);
    s.labeled.insert(id);
    if (AnnotationTask* t = s.task(id)) {
      t->status = TaskStatus::kLabeled;
      t->lease_until.reset();
      s.skip_order.erase(id);
    }
  } else if (type == "skip") {
    AnnotationTask& t = *s.task(e.at("id").get<int>());
    t.status = TaskStatus::kSkipped;
    t.lease_until.reset();
    s.skip_order[t.id] = ++s.skips;
  } else if (type == "retrain_started") {
    RetrainJob j;
    j.id = e.at("job").get<int>();
    j.round = e.at("round").get<int>();
    j.labeled = e.at("labeled").get<std::size_t>();
    j.unlabeled = e.at("unlabeled").get<std::size_t>();
    s.jobs[j.id] = j;
    s.next_job = std::max(s.next_job, j.id + 1);
  } else if (type == "retrain_finished") {
    RetrainJob& j = s.jobs.at(e.at("job").get<int>());
    if (e.at("ok").get<bool>()) {
      j.state = JobState::kSucceeded;
      j.checkpoint = e.at("checkpoint").get<std::string>();
      load_checkpoint_ref(j.checkpoint);
      if (e.contains("metrics") && !e.at("metrics").is_null()) {
        j.metrics = MetricsReport::from_json(e.at("metrics"));
        s.metrics = j.metrics;
      }
    } else {
      j.state = JobState::kFailed;
      j.error = e.value("error", std::string());
    }
    if (s.round && s.round->number == j.round) {
      s.round->active = false;
      s.round->completed = e.at("time").get<std::int64_t>() / 1000;
    }
    if (!replay) s.job_done.notify_all();
  } else {
    throw ServiceError("unknown event type: " + type);
  }
}

ServiceStatus AnnotationService::status() const {
  std::shared_lock lock(mutex_);
  const State& s = *state_;
  ServiceStatus st;
  st.round = s.round;
  st.labeled_count = s.labeled.size() + s.validation.size();
  st.pool_count = s.pool.size();
  st.checkpoint = s.checkpoint;
  if (s.round && s.round->active) {
    st.open_tasks = static_cast<std::size_t>(std::count_if(s.tasks.begin(), s.tasks.end(), [](const AnnotationTask& t) {
      return t.status == TaskStatus::kQueued || t.status == TaskStatus::kAssigned;
    }));
  }
  st.retraining = s.running_job().has_value();
  return st;
}

Round AnnotationService::open_round(QueryCriterion criterion, std::size_t budget, std::uint64_t seed) {
  std::unique_lock lock(mutex_);
  State& s = *state_;
  if (s.round && s.round->active) throw ConflictError("round " + std::to_string(s.round->number) + " is still active");
  if (s.pool.empty()) throw ConflictError("unlabeled pool is empty");
  if (budget == 0) throw ValidationError("invalid budget", {{"budget", "must be positive"}});
  if (budget > s.pool.size()) {
    throw ValidationError("invalid budget", {{"budget", "exceeds pool size " + std::to_string(s.pool.size())}});
  }
  const std::vector<int> pool(s.pool.begin(), s.pool.end());
  const RoundSelection sel = query_round(s.params, s.corpus, pool, s.vocab, {criterion, budget, seed});

  Round r;
  r.number = s.rounds + 1;
  r.criterion = criterion;
  r.budget = budget;
  r.seed = seed;
  r.checkpoint = s.checkpoint;
  r.created = to_millis(now()) / 1000;
  r.active = true;
  json tasks = json::array();
  for (std::size_t i = 0; i < sel.scored.size(); ++i) {
    const ScoredExample& sc = sel.scored[i];
    AnnotationTask t;
    t.id = sc.confidence.id;
    t.rank = static_cast<int>(i);
    t.tokens = s.example(t.id).utterance.tokens;
    t.suggested_intent = s.vocab.intent(sc.intent);
    for (int tag : sc.slots) t.suggested_slots.push_back(s.vocab.slot(tag));
    t.confidence = sc.confidence;
    tasks.push_back(t.to_json());
  }
  append_event({{"type", "round_opened"}, {"round", r.to_json()}, {"tasks", tasks}});
  return *s.round;
}

void AnnotationService::expire_leases() {
  State& s = *state_;
  const TimePoint t = now();
  for (auto& task : s.tasks) {
    if (task.lease_until && *task.lease_until <= t) {
      task.lease_until.reset();
      if (task.status == TaskStatus::kAssigned) task.status = TaskStatus::kQueued;
    }
  }
}

std::vector<AnnotationTask> AnnotationService::next_tasks(std::size_t n) {
  std::unique_lock lock(mutex_);
  State& s = *state_;
  if (!s.round || !s.round->active) throw ConflictError("no active round");
  if (n == 0) return {};
  expire_leases();
  std::vector<int> ids;
  for (const auto& t : s.tasks) {
    if (ids.size() == n) break;
    if (t.status == TaskStatus::kQueued) ids.push_back(t.id);
  }
  std::vector<std::pair<std::uint64_t, int>> skipped;
  for (const auto& [id, order] : s.skip_order) {
    const AnnotationTask* t = s.task(id);
    if (t->status == TaskStatus::kSkipped && !t->lease_until) skipped.emplace_back(order, id);
  }
  std::sort(skipped.begin(), skipped.end());
  for (const auto& [order, id] : skipped) {
    if (ids.size() == n) break;
    ids.push_back(id);
  }
  if (ids.empty()) return {};
  append_event({{"type", "assign"}, {"ids", ids}, {"until", to_millis(now() + options_.lease)}});
  std::vector<AnnotationTask> out;
  for (int id : ids) out.push_back(*s.task(id));
  return out;
}

LabelAck AnnotationService::submit_label(int id, const LabelSubmission& label) {
  std::unique_lock lock(mutex_);
  State& s = *state_;
  LabelAck ack;
  ack.id = id;
  auto finish = [&] {
    ack.labeled_count = s.labeled.size() + s.validation.size();
    ack.pool_count = s.pool.size();
    return ack;
  };
  AnnotationTask* task = s.round ? s.task(id) : nullptr;
  const auto previous = s.received.find(id);
  if (!task || task->status == TaskStatus::kLabeled) {
    if (previous == s.received.end()) throw NotFoundError("no task for example " + std::to_string(id));
    if (previous->second.intent != label.intent || previous->second.slots != label.slots) {
      throw ConflictError("example " + std::to_string(id) + " is already labeled differently");
    }
    ack.duplicate = true;
    return finish();
  }
  if (!s.round->active) throw ConflictError("round " + std::to_string(s.round->number) + " is closed");
  if (!task->served) throw ConflictError("task " + std::to_string(id) + " has not been assigned");

  std::map<std::string, std::string> fields;
  if (label.intent.empty()) {
    fields["intent"] = "required";
  } else if (s.vocab.intent_id(label.intent) < 0 && !label.allow_new_labels) {
    fields["intent"] = "unknown intent '" + label.intent + "'";
  }
  if (label.slots.size() != task->tokens.size()) {
    fields["slots"] = "expected " + std::to_string(task->tokens.size()) + " tags (one per token), got " +
                      std::to_string(label.slots.size());
  } else {
    for (std::size_t i = 0; i < label.slots.size(); ++i) {
      const std::string& tag = label.slots[i];
      const std::string key = "slots[" + std::to_string(i) + "]";
      if (tag.empty()) {
        fields[key] = "empty tag";
      } else if (s.vocab.slot_id(tag) < 0 && !label.allow_new_labels) {
        fields[key] = "unknown slot tag '" + tag + "'";
      }
    }
  }
  if (!fields.empty()) throw ValidationError("label rejected", std::move(fields));

  append_event({{"type", "label"},
                {"id", id},
                {"round", s.round->number},
                {"intent", label.intent},
                {"slots", label.slots}});
  return finish();
}

AnnotationTask AnnotationService::skip(int id) {
  std::unique_lock lock(mutex_);
  State& s = *state_;
  if (!s.round || !s.round->active) throw ConflictError("no active round");
  AnnotationTask* task = s.task(id);
  if (!task) throw NotFoundError("no task for example " + std::to_string(id));
  if (task->status == TaskStatus::kLabeled) throw ConflictError("task " + std::to_string(id) + " is already labeled");
  if (!task->served) throw ConflictError("task " + std::to_string(id) + " has not been assigned");
  if (task->status == TaskStatus::kSkipped && !task->lease_until) return *task;
  append_event({{"type", "skip"}, {"id", id}, {"round", s.round->number}});
  return *task;
}

int AnnotationService::trigger_retrain() {
  int job_id = 0;
  {
    std::unique_lock lock(mutex_);
    State& s = *state_;
    if (const auto running = s.running_job()) return *running;
    if (!s.round || !s.round->active) throw ConflictError("no active round to retrain");
    if (!s.round_complete()) throw ConflictError("round " + std::to_string(s.round->number) + " has unlabeled tasks");
    job_id = s.next_job;
    append_event({{"type", "retrain_started"},
                  {"job", job_id},
                  {"round", s.round->number},
                  {"labeled", s.labeled.size()},
                  {"unlabeled", s.config.uses_vat() ? s.pool.size() : 0}});
  }
  if (options_.synchronous_retrain) {
    run_retrain(job_id);
  } else {
    if (worker_.joinable()) worker_.join();
    worker_ = std::thread([this, job_id] { run_retrain(job_id); });
  }
  return job_id;
}

void AnnotationService::run_retrain(int job_id) {
  std::vector<Example> corpus;
  std::vector<int> labeled, pool;
  std::vector<Example> validation, heldout;
  Vocabulary vocab;
  RunConfig config;
  std::optional<EmbeddingMatrix> embeddings;
  int round = 0;
  {
    std::shared_lock lock(mutex_);
    const State& s = *state_;
    corpus = s.corpus;
    labeled.assign(s.labeled.begin(), s.labeled.end());
    pool.assign(s.pool.begin(), s.pool.end());
    for (int id : s.validation) validation.push_back(s.corpus.at(s.index.at(id)));
    heldout = s.heldout;
    vocab = s.vocab;
    config = s.config;
    embeddings = s.embeddings;
    round = s.jobs.at(job_id).round;
  }
  json done = {{"type", "retrain_finished"}, {"job", job_id}};
  try {
    std::vector<Example> labeled_examples;
    for (const auto& ex : corpus) {
      if (std::binary_search(labeled.begin(), labeled.end(), ex.utterance.id)) labeled_examples.push_back(ex);
    }
    extend_labels(vocab, labeled_examples);
    extend_labels(vocab, validation);
    std::vector<const Example*> val;
    for (const auto& ex : validation) val.push_back(&ex);
    const FitResult result = fit(labeled, pool, corpus, vocab, embeddings ? &*embeddings : nullptr, config, val);
    if (result.diverged) throw NumericalError(result.diagnostics);
    const std::string ref = "checkpoints/round-" + std::to_string(round) + "-job-" + std::to_string(job_id) + ".ckpt";
    save_checkpoint(options_.data_dir / ref, Checkpoint{result.params, vocab, config.to_json()});
    done["ok"] = true;
    done["checkpoint"] = ref;
    done["metrics"] = heldout.empty() ? json(nullptr) : evaluate(result.params, heldout, vocab).to_json();
  } catch (const std::exception& e) {
    done["ok"] = false;
    done["error"] = e.what();
  }
  std::unique_lock lock(mutex_);
  append_event(std::move(done));
}

std::optional<RetrainJob> AnnotationService::job(int id) const {
  std::shared_lock lock(mutex_);
  const auto it = state_->jobs.find(id);
  if (it == state_->jobs.end()) return std::nullopt;
  return it->second;
}

RetrainJob AnnotationService::wait_for_job(int id) {
  std::unique_lock lock(mutex_);
  State& s = *state_;
  if (!s.jobs.count(id)) throw NotFoundError("no job " + std::to_string(id));
  s.job_done.wait(lock, [&] { return s.jobs.at(id).state != JobState::kRunning; });
  return s.jobs.at(id);
}

std::optional<MetricsReport> AnnotationService::metrics() const {
  std::shared_lock lock(mutex_);
  return state_->metrics;
}

std::vector<AnnotationTask> AnnotationService::tasks() const {
  std::shared_lock lock(mutex_);
  return state_->tasks;
}

std::vector<int> AnnotationService::labeled_ids() const {
  std::shared_lock lock(mutex_);
  return {state_->labeled.begin(), state_->labeled.end()};
}

std::vector<int> AnnotationService::validation_ids() const {
  std::shared_lock lock(mutex_);
  return {state_->validation.begin(), state_->validation.end()};
}

std::vector<int> AnnotationService::pool_ids() const {
  std::shared_lock lock(mutex_);
  return {state_->pool.begin(), state_->pool.end()};
}

std::optional<Annotation> AnnotationService::annotation(int id) const {
  std::shared_lock lock(mutex_);
  const auto it = state_->index.find(id);
  if (it == state_->index.end()) return std::nullopt;
  return state_->corpus[it->second].annotation;
}

ModelParams AnnotationService::current_params() const {
  std::shared_lock lock(mutex_);
  return state_->params;
}

Vocabulary AnnotationService::vocabulary() const {
  std::shared_lock lock(mutex_);
  return state_->vocab;
}

std::uint64_t AnnotationService::labeled_hash() const {
  std::shared_lock lock(mutex_);
  const State& s = *state_;
  std::string text;
  for (int id : s.labeled) {
    const Annotation& a = *s.corpus.at(s.index.at(id)).annotation;
    text += std::to_string(id) + ":" + a.intent;
    for (const auto& t : a.slots) text += " " + t;
    text += "\n";
  }
  return fnv1a(text);
}

std::size_t AnnotationService::event_count() const {
  std::shared_lock lock(mutex_);
  return state_->seq;
}

void AnnotationService::compact() {
  std::unique_lock lock(mutex_);
  write_snapshot();
}

void AnnotationService::write_snapshot() {
  write_atomic(options_.data_dir / "snapshot.json", state_->snapshot().dump() + "\n");
}

OracleRoundResult run_oracle_round(AnnotationService& service, std::span<const Example> gold,
                                   QueryCriterion criterion, std::size_t budget,
                                   std::uint64_t seed, std::size_t page) {
  std::unordered_map<int, const Example*> index;
  for (const auto& ex : gold) index.emplace(ex.utterance.id, &ex);
  OracleRoundResult out;
  out.round = service.open_round(criterion, budget, seed);
  for (;;) {
    const auto tasks = service.next_tasks(page);
    if (tasks.empty()) break;
    for (const auto& t : tasks) {
      const Example& ex = *index.at(t.id);
      service.submit_label(t.id, {ex.annotation->intent, ex.annotation->slots, true});
      out.served.push_back(t.id);
    }
  }
  out.job = service.wait_for_job(service.trigger_retrain());
  return out;
}

}  // namespace viraal
