// Verifiable rewards for structured forgery-detection completions.
//
// Five components are scored from a parsed completion against the ground truth
// and combined into a weighted total:
//
//   total = w_fmt * r_fmt + w_cls * r_cls + w_seg_fmt * r_seg_fmt + w_iou * r_iou + w_l1 * r_l1
//
//   r_fmt      1 when the completion is exactly one think block followed by one answer block.
//   r_cls      3 for a correct TAMPERED label, 1 for a correct REAL / FULL_SYNTHETIC label, else 0.
//   r_seg_fmt  TAMPERED ground truth only: 1 when a well-formed box was parsed.
//   r_iou      TAMPERED: 3 when IoU(pred, gt) > iou_threshold. Otherwise 1 by default.
//   r_l1       TAMPERED: 3 when L1(pred, gt) < l1_threshold_px. Otherwise 1 by default.
#pragma once

#include <string_view>

#include "sofake/grammar.hpp"

namespace sofake {

struct RewardConfig {
  double w_format = 0.1;
  double w_classification = 0.9;
  double w_seg_format = 0.1;
  double w_iou = 0.9;
  double w_l1 = 0.9;
  double iou_threshold = 0.5;
  double l1_threshold_px = 10.0;
  int tampered_bonus = 3;
  int base_reward = 1;

  /// Throws std::invalid_argument on negative weights or non-positive thresholds.
  void validate() const;
};

struct RewardBreakdown {
  int r_fmt = 0;
  int r_cls = 0;
  int r_seg_fmt = 0;
  int r_iou = 0;
  int r_l1 = 0;
  double c_fmt = 0.0;
  double c_cls = 0.0;
  double c_seg_fmt = 0.0;
  double c_iou = 0.0;
  double c_l1 = 0.0;
  double total = 0.0;

  friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

int reward_thinking_format(const ParsedCompletion& c, const RewardConfig& cfg = {});
int reward_classification(const ParsedCompletion& c, const GroundTruth& gt, const RewardConfig& cfg = {});
int reward_seg_format(const ParsedCompletion& c, const GroundTruth& gt, const RewardConfig& cfg = {});
int reward_iou(const ParsedCompletion& c, const GroundTruth& gt, const RewardConfig& cfg = {});
int reward_l1(const ParsedCompletion& c, const GroundTruth& gt, const RewardConfig& cfg = {});

RewardBreakdown score_parsed(const ParsedCompletion& c, const GroundTruth& gt, const RewardConfig& cfg = {});
RewardBreakdown score(std::string_view completion, const GroundTruth& gt, const RewardConfig& cfg = {});

}  // namespace sofake
