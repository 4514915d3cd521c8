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

#include "viraal/http_api.hpp"

// Eigen must precede httplib, whose resolver headers define `_res`.
#include "viraal/annotation_service.hpp"

#include <httplib.h>

#include <functional>
#include <json.hpp>

namespace viraal {
namespace {

using nlohmann::json;

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body);
  if (!j.is_object()) throw std::invalid_argument("request body must be an object");
  return j;
}

int path_id(const httplib::Request& req) {
  const std::string& raw = req.path_params.at("id");
  std::size_t used = 0;
  int id = 0;
  try {
    id = std::stoi(raw, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != raw.size() || raw.empty()) throw NotFoundError("no task " + raw);
  return id;
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

// Maps service exceptions onto status codes.
httplib::Server::Handler guarded(const std::string& token, Handler handler) {
  return [token, handler](const httplib::Request& req, httplib::Response& res) {
    if (!token.empty() && req.get_header_value("Authorization") != "Bearer " + token) {
      reply(res, 401, {{"error", "missing or invalid token"}});
      return;
    }
    try {
      handler(req, res);
    } catch (const ValidationError& e) {
      reply(res, 422, {{"error", e.what()}, {"fields", e.fields()}});
    } catch (const NotFoundError& e) {
      reply(res, 404, {{"error", e.what()}});
    } catch (const ConflictError& e) {
      reply(res, 409, {{"error", e.what()}});
    } catch (const json::exception& e) {
      reply(res, 400, {{"error", std::string("malformed request: ") + e.what()}});
    } catch (const std::invalid_argument& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  };
}

}  // namespace

void install_routes(httplib::Server& server, AnnotationService& service, const std::string& token) {
  server.Get("/status", guarded(token, [&service](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, service.status().to_json());
  }));

  server.Post("/rounds", guarded(token, [&service](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    std::map<std::string, std::string> fields;
    if (!body.contains("criterion") || !body["criterion"].is_string()) fields["criterion"] = "required string";
    if (!body.contains("budget") || !body["budget"].is_number_integer() || body["budget"].get<long long>() <= 0) {
      fields["budget"] = "required positive integer";
    }
    if (!fields.empty()) throw ValidationError("invalid round request", fields);
    QueryCriterion criterion;
    try {
      criterion = parse_criterion(body["criterion"].get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ValidationError("invalid round request", {{"criterion", e.what()}});
    }
    const auto budget = body["budget"].get<std::size_t>();
    const auto seed = body.value("seed", std::uint64_t{0});
    reply(res, 201, service.open_round(criterion, budget, seed).to_json());
  }));

  server.Get("/tasks", guarded(token, [&service](const httplib::Request& req, httplib::Response& res) {
    std::size_t n = 1;
    if (req.has_param("n")) {
      const std::string raw = req.get_param_value("n");
      std::size_t used = 0;
      long long v = -1;
      try {
        v = std::stoll(raw, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != raw.size() || v < 0) throw ValidationError("invalid query", {{"n", "non-negative integer"}});
      n = static_cast<std::size_t>(v);
    }
    json tasks = json::array();
    for (const auto& t : service.next_tasks(n)) tasks.push_back(t.to_json());
    reply(res, 200, {{"tasks", tasks}});
  }));

  server.Post("/tasks/:id/label", guarded(token, [&service](const httplib::Request& req, httplib::Response& res) {
    const int id = path_id(req);
    const json body = parse_body(req);
    std::map<std::string, std::string> fields;
    if (!body.contains("intent") || !body["intent"].is_string()) fields["intent"] = "required string";
    if (!body.contains("slots") || !body["slots"].is_array()) {
      fields["slots"] = "required array of strings";
    } else {
      for (std::size_t i = 0; i < body["slots"].size(); ++i) {
        if (!body["slots"][i].is_string()) fields["slots[" + std::to_string(i) + "]"] = "must be a string";
      }
    }
    if (!fields.empty()) throw ValidationError("label rejected", fields);
    LabelSubmission label;
    label.intent = body["intent"].get<std::string>();
    label.slots = body["slots"].get<std::vector<std::string>>();
    label.allow_new_labels = body.value("allow_new_labels", false);
    reply(res, 200, service.submit_label(id, label).to_json());
  }));

  server.Post("/tasks/:id/skip", guarded(token, [&service](const httplib::Request& req, httplib::Response& res) {
    reply(res, 200, service.skip(path_id(req)).to_json());
  }));

  server.Post("/retrain", guarded(token, [&service](const httplib::Request&, httplib::Response& res) {
    reply(res, 202, {{"job", service.trigger_retrain()}});
  }));

  server.Get("/jobs/:id", guarded(token, [&service](const httplib::Request& req, httplib::Response& res) {
    const int id = path_id(req);
    const auto job = service.job(id);
    if (!job) throw NotFoundError("no job " + std::to_string(id));
    reply(res, 200, job->to_json());
  }));

  server.Get("/metrics", guarded(token, [&service](const httplib::Request&, httplib::Response& res) {
    const auto m = service.metrics();
    if (!m) throw NotFoundError("no metrics yet");
    reply(res, 200, m->to_json());
  }));
}

std::pair<std::string, int> parse_bind(const std::string& spec) {
  if (spec.empty()) return {"127.0.0.1", 8080};
  const auto colon = spec.rfind(':');
  const std::string host = colon == std::string::npos ? "127.0.0.1" : spec.substr(0, colon);
  const std::string port = colon == std::string::npos ? spec : spec.substr(colon + 1);
  std::size_t used = 0;
  int p = -1;
  try {
    p = std::stoi(port, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != port.size() || p < 0 || p > 65535 || host.empty()) {
    throw std::invalid_argument("bad bind address: " + spec);
  }
  return {host, p};
}

}  // namespace viraal
