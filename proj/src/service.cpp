#include "sofake/service.hpp"

#include <httplib.h>

#include <json.hpp>

#include "sofake/config.hpp"
#include "sofake/scoring.hpp"

namespace sofake {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

HttpReply error_reply(int status, const std::string& message, const std::string& path) {
  ordered_json j;
  j["error"] = message;
  if (!path.empty()) j["path"] = path;
  return HttpReply{status, "application/json", j.dump() + "\n"};
}

}  // namespace

HttpReply handle_score(const std::string& body, bool jsonl, const RewardConfig& cfg) {
  json req;
  try {
    req = json::parse(body);
  } catch (const json::parse_error& e) {
    return error_reply(400, std::string("malformed JSON: ") + e.what(), "");
  }
  std::vector<ScoreItem> items;
  bool group = false;
  try {
    if (!req.is_object()) throw SchemaError("", "request body must be an object");
    const auto it = req.find("items");
    if (it == req.end()) throw SchemaError("items", "required");
    if (!it->is_array()) throw SchemaError("items", "expected an array");
    if (const auto g = req.find("group"); g != req.end()) {
      if (!g->is_boolean()) throw SchemaError("group", "expected a boolean");
      group = g->get<bool>();
    }
    for (std::size_t i = 0; i < it->size(); ++i) {
      items.push_back(score_item_from_json((*it)[i], "items[" + std::to_string(i) + "]"));
    }
  } catch (const SchemaError& e) {
    return error_reply(400, e.what(), e.path());
  } catch (const InvariantError& e) {
    return error_reply(422, e.what(), e.path());
  }

  const ScoreBatch batch = score_batch(items, cfg, group);
  if (jsonl) return HttpReply{200, "application/x-ndjson", score_batch_to_jsonl(items, batch)};
  ordered_json out;
  out["results"] = ordered_json::array();
  for (const auto& b : batch.breakdowns) out["results"].push_back(breakdown_to_json(b));
  if (!batch.advantages.empty()) out["advantages"] = batch.advantages;
  return HttpReply{200, "application/json", out.dump() + "\n"};
}

HttpReply handle_health() {
  return HttpReply{200, "application/json", ordered_json{{"status", "ok"}, {"version", kVersion}}.dump() + "\n"};
}

void register_routes(httplib::Server& server, const RewardConfig& cfg) {
  server.Post("/v1/score", [cfg](const httplib::Request& req, httplib::Response& res) {
    const bool jsonl = req.has_param("format") && req.get_param_value("format") == "jsonl";
    const HttpReply r = handle_score(req.body, jsonl, cfg);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  });
  server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
    const HttpReply r = handle_health();
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  });
}

void serve(const std::string& host, int port, const RewardConfig& cfg) {
  httplib::Server server;
  register_routes(server, cfg);
  if (!server.bind_to_port(host, port)) {
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  }
  server.listen_after_bind();
}

}  // namespace sofake
