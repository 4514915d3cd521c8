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

#ifndef VIRAAL_HTTP_API_HPP_
#define VIRAAL_HTTP_API_HPP_

// JSON over HTTP for the annotation service.
//
//   GET  /status             -> {round, labeled_count, pool_count, checkpoint, ...}
//   POST /rounds             {criterion, budget[, seed]} -> Round
//   GET  /tasks?n=N          -> {tasks: [...]}
//   POST /tasks/{id}/label   {intent, slots[, allow_new_labels]} -> ack
//   POST /tasks/{id}/skip    -> task
//   POST /retrain            -> {job}
//   GET  /jobs/{id}          -> job
//   GET  /metrics            -> latest MetricsReport
//
// Errors are {error, fields?}: 400 malformed body, 401 bad token, 404 unknown
// id, 409 state conflict, 422 rejected label.

#include <string>
#include <utility>

namespace httplib {
class Server;
}

namespace viraal {

class AnnotationService;

/// Registers every endpoint. A non-empty `token` is required as
/// `Authorization: Bearer <token>` on each request.
void install_routes(httplib::Server& server, AnnotationService& service, const std::string& token = "");

/// Parses "host:port" (or just "port"); empty input gives 127.0.0.1:8080.
std::pair<std::string, int> parse_bind(const std::string& spec);

}  // namespace viraal

#endif  // VIRAAL_HTTP_API_HPP_
