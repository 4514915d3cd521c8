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

#ifndef VIRAAL_ANNOTATION_SERVICE_HPP_
#define VIRAAL_ANNOTATION_SERVICE_HPP_

// Human-in-the-loop labeling backend.
//
// A round scores the unlabeled pool with the current checkpoint, queues the
// selected utterances by ascending confidence and hands them out under
// expiring leases. Labels move examples from the pool to the labeled set.
// Once every task is labeled or skipped, a retrain job fits a fresh model in
// the background and publishes it as the new checkpoint.
//
// Every state change is appended to <data>/events.jsonl before it becomes
// visible; <data>/snapshot.json is a compacted prefix of that log. Reopening
// a data directory replays snapshot + log tail.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "viraal/active_learning.hpp"
#include "viraal/corpus.hpp"
#include "viraal/metrics.hpp"
#include "viraal/model.hpp"
#include "viraal/trainer.hpp"

namespace viraal {

class ServiceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFoundError : public ServiceError {
 public:
  using ServiceError::ServiceError;
};

class ConflictError : public ServiceError {
 public:
  using ServiceError::ServiceError;
};

/// Rejected submission; `fields` maps a field name to what is wrong with it.
class ValidationError : public ServiceError {
 public:
  ValidationError(const std::string& message, std::map<std::string, std::string> fields);
  const std::map<std::string, std::string>& fields() const { return fields_; }

 private:
  std::map<std::string, std::string> fields_;
};

enum class TaskStatus { kQueued, kAssigned, kLabeled, kSkipped };

std::string_view status_name(TaskStatus status);
TaskStatus parse_status(std::string_view name);

using Clock = std::function<std::chrono::system_clock::time_point()>;

struct AnnotationTask {
  int id = 0;  // example id
  int rank = 0;  // 0 = lowest confidence
  std::vector<std::string> tokens;
  std::string suggested_intent;
  std::vector<std::string> suggested_slots;
  ConfidenceRecord confidence;
  TaskStatus status = TaskStatus::kQueued;
  bool served = false;
  std::optional<std::chrono::system_clock::time_point> lease_until;

  nlohmann::json to_json() const;
};

struct Round {
  int number = 0;
  QueryCriterion criterion = QueryCriterion::kEntropyJoint;
  std::size_t budget = 0;
  std::uint64_t seed = 0;
  std::string checkpoint;
  std::int64_t created = 0;    // unix seconds
  std::int64_t completed = 0;  // 0 while open
  bool active = false;

  nlohmann::json to_json() const;
};

enum class JobState { kRunning, kSucceeded, kFailed };

std::string_view job_state_name(JobState state);

struct RetrainJob {
  int id = 0;
  int round = 0;
  JobState state = JobState::kRunning;
  std::string checkpoint;
  std::string error;
  std::size_t labeled = 0;
  std::size_t unlabeled = 0;
  std::optional<MetricsReport> metrics;

  nlohmann::json to_json() const;
};

struct LabelSubmission {
  std::string intent;
  std::vector<std::string> slots;
  /// Accept intents or slot tags missing from the vocabulary; they are added
  /// at the next retrain.
  bool allow_new_labels = false;
};

struct LabelAck {
  int id = 0;
  bool duplicate = false;
  std::size_t labeled_count = 0;
  std::size_t pool_count = 0;

  nlohmann::json to_json() const;
};

struct ServiceStatus {
  std::optional<Round> round;
  std::size_t labeled_count = 0;  // training + validation labels
  std::size_t pool_count = 0;
  std::string checkpoint;
  std::size_t open_tasks = 0;
  bool retraining = false;

  nlohmann::json to_json() const;
};

/// Starting point of a service. Pool examples may carry annotations (e.g. when
/// taken from a labeled corpus); they are dropped and never read.
struct ServiceSetup {
  std::vector<Example> corpus;
  std::vector<int> labeled;
  std::vector<int> validation;
  std::vector<int> pool;
  Vocabulary vocab;
  ModelParams checkpoint;
  RunConfig config;
  std::optional<EmbeddingMatrix> embeddings;
  /// Held-out labeled examples for the metrics published after each retrain.
  std::vector<Example> heldout;
};

struct ServiceOptions {
  std::filesystem::path data_dir;
  std::chrono::seconds lease{600};
  Clock clock;
  /// Run retrain jobs on the calling thread (tests, oracle simulation).
  bool synchronous_retrain = false;
};

class AnnotationService {
 public:
  /// Opens `options.data_dir`, replaying an existing log or starting a new one
  /// from `setup`. A log written for a different labeled/pool split is
  /// rejected.
  AnnotationService(ServiceSetup setup, ServiceOptions options);
  ~AnnotationService();
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  ServiceStatus status() const;

  /// Scores the pool, selects `budget` ids and queues them by ascending
  /// confidence. `seed` drives random selection.
  Round open_round(QueryCriterion criterion, std::size_t budget, std::uint64_t seed);

  /// Up to n tasks, lowest confidence first, leased to the caller. Queued tasks
  /// come before previously skipped ones; expired leases return to the queue.
  std::vector<AnnotationTask> next_tasks(std::size_t n);

  LabelAck submit_label(int id, const LabelSubmission& label);
  AnnotationTask skip(int id);

  /// Starts fitting from scratch on the enlarged labeled set. Returns the job
  /// id; a retrain already running for the round is returned as is.
  int trigger_retrain();
  std::optional<RetrainJob> job(int id) const;
  /// Blocks until the job leaves the running state.
  RetrainJob wait_for_job(int id);

  std::optional<MetricsReport> metrics() const;
  std::vector<AnnotationTask> tasks() const;

  std::vector<int> labeled_ids() const;
  std::vector<int> validation_ids() const;
  std::vector<int> pool_ids() const;
  /// Annotation currently held for a labeled or validation id.
  std::optional<Annotation> annotation(int id) const;
  ModelParams current_params() const;
  Vocabulary vocabulary() const;

  /// Labeled-set fingerprint: ids plus their labels in id order.
  std::uint64_t labeled_hash() const;

  std::size_t event_count() const;
  /// Writes snapshot.json covering every event so far.
  void compact();

 private:
  struct State;

  void append_event(nlohmann::json event);
  void apply(const nlohmann::json& event, bool replay);
  void expire_leases();
  void write_snapshot();
  void run_retrain(int job_id);
  void load_checkpoint_ref(const std::string& ref);
  std::chrono::system_clock::time_point now() const;

  ServiceOptions options_;
  mutable std::shared_mutex mutex_;
  std::unique_ptr<State> state_;
  std::thread worker_;
};

/// Plays the annotator with gold labels from `gold`: opens a round, labels
/// every served task, retrains and waits for the job.
struct OracleRoundResult {
  Round round;
  std::vector<int> served;  // ids in the order they were served
  RetrainJob job;
};

OracleRoundResult run_oracle_round(AnnotationService& service, std::span<const Example> gold,
                                   QueryCriterion criterion, std::size_t budget,
                                   std::uint64_t seed, std::size_t page = 4);

}  // namespace viraal

#endif  // VIRAAL_ANNOTATION_SERVICE_HPP_
