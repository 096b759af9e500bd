// Batch scoring wire format shared by the `score` subcommand and the reward service.
//
// Item:   {"id"?: string, "completion": string, "ground_truth": {"label", "box"?, "mask_path"?, "explanation"?}}
// Output: one JSON line per item with the reward breakdown, plus "advantage" when group scoring applies.
#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sofake/evalkit.hpp"
#include "sofake/rewards.hpp"

namespace sofake {

/// Malformed request: wrong JSON types or missing fields. `path` locates the field, e.g. items[2].ground_truth.label.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(std::string path, const std::string& what)
      : std::runtime_error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Well-typed input that breaks a ground-truth invariant (e.g. TAMPERED without a box).
class InvariantError : public std::runtime_error {
 public:
  InvariantError(std::string path, const std::string& what)
      : std::runtime_error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct ScoreItem {
  std::optional<std::string> id;
  std::string completion;
  GroundTruth ground_truth;
};

GroundTruth ground_truth_from_json(const nlohmann::json& j, const std::string& path);
ScoreItem score_item_from_json(const nlohmann::json& j, const std::string& path);

struct ScoreBatch {
  std::vector<RewardBreakdown> breakdowns;
  std::vector<double> advantages;  // empty unless grouped with at least two items
};

ScoreBatch score_batch(std::span<const ScoreItem> items, const RewardConfig& cfg, bool group);

nlohmann::ordered_json breakdown_to_json(const RewardBreakdown& b);
/// One line per item, newline-terminated.
std::string score_batch_to_jsonl(std::span<const ScoreItem> items, const ScoreBatch& batch);

/// Parses inline score items from JSONL; schema errors name the line.
std::vector<ScoreItem> parse_score_items(std::string_view jsonl);
/// Joins {id, completion} lines with manifest ground truth by id.
std::vector<ScoreItem> join_score_items(std::string_view jsonl, std::span<const ManifestRecord> manifest,
                                        const std::filesystem::path& manifest_dir);

}  // namespace sofake
