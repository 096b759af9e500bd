#include "sofake/rewards.hpp"

#include <cmath>
#include <stdexcept>

#include "sofake/geometry.hpp"

namespace sofake {

void RewardConfig::validate() const {
  for (double w : {w_format, w_classification, w_seg_format, w_iou, w_l1}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("reward weights must be finite and non-negative");
  }
  if (!(iou_threshold > 0.0)) throw std::invalid_argument("iou_threshold must be positive");
  if (!(l1_threshold_px > 0.0)) throw std::invalid_argument("l1_threshold_px must be positive");
}

int reward_thinking_format(const ParsedCompletion& c, const RewardConfig& cfg) {
  return c.has_think_answer_shape ? cfg.base_reward : 0;
}

int reward_classification(const ParsedCompletion& c, const GroundTruth& gt, const RewardConfig& cfg) {
  if (!c.label || *c.label != gt.label) return 0;
  return gt.label == Label::Tampered ? cfg.tampered_bonus : cfg.base_reward;
}

int reward_seg_format(const ParsedCompletion& c, const GroundTruth& gt, const RewardConfig& cfg) {
  // Boxes on non-tampered images are neither rewarded nor penalized.
  if (gt.label != Label::Tampered) return 0;
  return c.box ? cfg.base_reward : 0;
}

int reward_iou(const ParsedCompletion& c, const GroundTruth& gt, const RewardConfig& cfg) {
  if (gt.label != Label::Tampered) return cfg.base_reward;
  if (!c.box || !gt.box) return 0;
  return box_iou(*c.box, *gt.box) > cfg.iou_threshold ? cfg.tampered_bonus : 0;
}

int reward_l1(const ParsedCompletion& c, const GroundTruth& gt, const RewardConfig& cfg) {
  if (gt.label != Label::Tampered) return cfg.base_reward;
  if (!c.box || !gt.box) return 0;
  return box_l1(*c.box, *gt.box) < cfg.l1_threshold_px ? cfg.tampered_bonus : 0;
}

RewardBreakdown score_parsed(const ParsedCompletion& c, const GroundTruth& gt, const RewardConfig& cfg) {
  RewardBreakdown b;
  b.r_fmt = reward_thinking_format(c, cfg);
  b.r_cls = reward_classification(c, gt, cfg);
  b.r_seg_fmt = reward_seg_format(c, gt, cfg);
  b.r_iou = reward_iou(c, gt, cfg);
  b.r_l1 = reward_l1(c, gt, cfg);
  b.c_fmt = cfg.w_format * b.r_fmt;
  b.c_cls = cfg.w_classification * b.r_cls;
  b.c_seg_fmt = cfg.w_seg_format * b.r_seg_fmt;
  b.c_iou = cfg.w_iou * b.r_iou;
  b.c_l1 = cfg.w_l1 * b.r_l1;
  // Fixed left-to-right summation order; totals are reproducible bit for bit.
  b.total = b.c_fmt + b.c_cls + b.c_seg_fmt + b.c_iou + b.c_l1;
  return b;
}

RewardBreakdown score(std::string_view completion, const GroundTruth& gt, const RewardConfig& cfg) {
  return score_parsed(parse_completion(completion), gt, cfg);
}

}  // namespace sofake
