// HTTP reward service: POST /v1/score, GET /v1/health.
#pragma once

#include <string>

#include "sofake/rewards.hpp"

namespace httplib {
class Server;
}

namespace sofake {

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Body {items: [...], group?: bool}. `jsonl` selects the line format of the `score` subcommand.
/// 400 on malformed JSON or schema (with the field path), 422 on ground-truth invariant violations.
HttpReply handle_score(const std::string& body, bool jsonl, const RewardConfig& cfg);
HttpReply handle_health();

/// Registers the routes on an existing server; the config is captured by value.
void register_routes(httplib::Server& server, const RewardConfig& cfg);

/// Blocks until the server stops. Throws std::runtime_error when the address cannot be bound.
void serve(const std::string& host, int port, const RewardConfig& cfg);

}  // namespace sofake
