// Structured completion format: <think>...</think><answer>LABEL[,<|box_start|>(x1, y1), (x2, y2)<|box_end|>.]</answer>
#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace sofake {

enum class Label { Real, Tampered, FullSynthetic };

inline constexpr std::array<Label, 3> kAllLabels = {Label::Real, Label::Tampered, Label::FullSynthetic};

/// Canonical upper-case spelling ("REAL", "TAMPERED", "FULL_SYNTHETIC").
std::string_view label_name(Label label);

/// Exact, case-sensitive inverse of label_name.
std::optional<Label> label_from_name(std::string_view name);

inline constexpr int kFrameSize = 224;

/// Integer box in the 224x224 resized-image frame, half-open on the right and bottom.
struct BBox {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;

  int width() const { return x2 - x1; }
  int height() const { return y2 - y1; }
  long long area() const { return static_cast<long long>(width()) * height(); }

  /// 0 <= x1 < x2 <= frame_w and 0 <= y1 < y2 <= frame_h.
  bool valid(int frame_w = kFrameSize, int frame_h = kFrameSize) const {
    return 0 <= x1 && x1 < x2 && x2 <= frame_w && 0 <= y1 && y1 < y2 && y2 <= frame_h;
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct ParsedCompletion {
  std::string raw_text;
  bool has_think_answer_shape = false;
  std::optional<std::string> think_text;
  std::optional<std::string> answer_text;
  std::optional<Label> label;
  std::optional<BBox> box;
};

struct GroundTruth {
  Label label = Label::Real;
  std::optional<BBox> box;
  std::optional<std::string> mask_path;
  std::optional<std::string> explanation;

  /// Throws std::invalid_argument unless (label == TAMPERED) == box.has_value() and the box is valid.
  void validate() const;
};

/// Total parser: never throws, malformed input leaves the corresponding fields empty.
ParsedCompletion parse_completion(std::string_view raw);

/// Canonical serializer. Throws std::invalid_argument when the box does not
/// accompany exactly the TAMPERED label, when the box is invalid, or when the
/// think text contains tag markup (which would break the round trip).
std::string render_completion(Label label, const std::optional<BBox>& box, std::string_view think_text);

namespace tags {
inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";
inline constexpr std::string_view kBoxStart = "<|box_start|>";
inline constexpr std::string_view kBoxEnd = "<|box_end|>";
}  // namespace tags

}  // namespace sofake
