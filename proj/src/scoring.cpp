#include "sofake/scoring.hpp"

#include <unordered_map>

#include "sofake/grpo.hpp"

namespace sofake {

using nlohmann::json;
using nlohmann::ordered_json;

GroundTruth ground_truth_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path, "expected an object");
  GroundTruth gt;
  const auto label = j.find("label");
  if (label == j.end()) throw SchemaError(path + ".label", "required");
  if (!label->is_string()) throw SchemaError(path + ".label", "expected a string");
  const auto parsed = label_from_name(label->get<std::string>());
  if (!parsed) throw SchemaError(path + ".label", "unknown label '" + label->get<std::string>() + "'");
  gt.label = *parsed;

  const auto box_it = j.contains("box") ? j.find("box") : j.find("bbox");
  if (box_it != j.end() && !box_it->is_null()) {
    const std::string bpath = path + "." + box_it.key();
    if (!box_it->is_array() || box_it->size() != 4) throw SchemaError(bpath, "expected [x1, y1, x2, y2]");
    std::array<int, 4> v{};
    for (std::size_t i = 0; i < 4; ++i) {
      if (!(*box_it)[i].is_number_integer()) throw SchemaError(bpath + "[" + std::to_string(i) + "]", "expected an integer");
      v[i] = (*box_it)[i].get<int>();
    }
    gt.box = BBox{v[0], v[1], v[2], v[3]};
  }
  for (const char* key : {"mask_path", "explanation"}) {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) continue;
    if (!it->is_string()) throw SchemaError(path + "." + key, "expected a string");
    (std::string(key) == "mask_path" ? gt.mask_path : gt.explanation) = it->get<std::string>();
  }
  try {
    gt.validate();
  } catch (const std::invalid_argument& e) {
    throw InvariantError(path, e.what());
  }
  return gt;
}

ScoreItem score_item_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path, "expected an object");
  ScoreItem item;
  if (const auto it = j.find("id"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw SchemaError(path + ".id", "expected a string");
    item.id = it->get<std::string>();
  }
  const auto c = j.find("completion");
  if (c == j.end()) throw SchemaError(path + ".completion", "required");
  if (!c->is_string()) throw SchemaError(path + ".completion", "expected a string");
  item.completion = c->get<std::string>();
  const auto gt = j.find("ground_truth");
  if (gt == j.end()) throw SchemaError(path + ".ground_truth", "required");
  item.ground_truth = ground_truth_from_json(*gt, path + ".ground_truth");
  return item;
}

ScoreBatch score_batch(std::span<const ScoreItem> items, const RewardConfig& cfg, bool group) {
  ScoreBatch out;
  out.breakdowns.reserve(items.size());
  std::vector<double> totals;
  for (const auto& item : items) {
    out.breakdowns.push_back(score(item.completion, item.ground_truth, cfg));
    totals.push_back(out.breakdowns.back().total);
  }
  if (group && totals.size() >= 2) out.advantages = group_advantages(totals);
  return out;
}

ordered_json breakdown_to_json(const RewardBreakdown& b) {
  return ordered_json{{"r_fmt", b.r_fmt},     {"r_cls", b.r_cls},         {"r_seg_fmt", b.r_seg_fmt},
                      {"r_iou", b.r_iou},     {"r_l1", b.r_l1},           {"c_fmt", b.c_fmt},
                      {"c_cls", b.c_cls},     {"c_seg_fmt", b.c_seg_fmt}, {"c_iou", b.c_iou},
                      {"c_l1", b.c_l1},       {"total", b.total}};
}

std::string score_batch_to_jsonl(std::span<const ScoreItem> items, const ScoreBatch& batch) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    ordered_json line;
    line["index"] = i;
    if (items[i].id) line["id"] = *items[i].id;
    const ordered_json fields = breakdown_to_json(batch.breakdowns[i]);
    for (const auto& [k, v] : fields.items()) line[k] = v;
    if (!batch.advantages.empty()) line["advantage"] = batch.advantages[i];
    out += line.dump();
    out += '\n';
  }
  return out;
}

namespace {

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view row = text.substr(pos, end - pos);
    pos = end + 1;
    ++line;
    if (!row.empty() && row.back() == '\r') row.remove_suffix(1);
    if (row.find_first_not_of(" \t") == std::string_view::npos) continue;
    json j;
    try {
      j = json::parse(row);
    } catch (const json::parse_error& e) {
      throw SchemaError("line " + std::to_string(line), std::string("malformed JSON: ") + e.what());
    }
    fn(j, "line " + std::to_string(line));
  }
}

}  // namespace

std::vector<ScoreItem> parse_score_items(std::string_view jsonl) {
  std::vector<ScoreItem> items;
  for_each_line(jsonl, [&](const json& j, const std::string& where) { items.push_back(score_item_from_json(j, where)); });
  return items;
}

std::vector<ScoreItem> join_score_items(std::string_view jsonl, std::span<const ManifestRecord> manifest,
                                        const std::filesystem::path& manifest_dir) {
  std::unordered_map<std::string, const ManifestRecord*> by_id;
  for (const auto& r : manifest) by_id.emplace(r.id, &r);
  std::vector<ScoreItem> items;
  for_each_line(jsonl, [&](const json& j, const std::string& where) {
    if (!j.is_object()) throw SchemaError(where, "expected an object");
    const auto id = j.find("id");
    if (id == j.end() || !id->is_string()) throw SchemaError(where + ".id", "required string");
    const auto c = j.find("completion");
    if (c == j.end() || !c->is_string()) throw SchemaError(where + ".completion", "required string");
    const auto rec = by_id.find(id->get<std::string>());
    if (rec == by_id.end()) throw SchemaError(where + ".id", "'" + id->get<std::string>() + "' not in manifest");
    ScoreItem item;
    item.id = id->get<std::string>();
    item.completion = c->get<std::string>();
    try {
      item.ground_truth = rec->second->ground_truth(manifest_dir);
    } catch (const std::invalid_argument& e) {
      throw InvariantError(where, e.what());
    }
    items.push_back(std::move(item));
  });
  return items;
}

}  // namespace sofake
