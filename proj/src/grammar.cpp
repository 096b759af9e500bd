#include "sofake/grammar.hpp"

#include <cctype>
#include <stdexcept>

namespace sofake {
namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool all_space(std::string_view s) {
  for (char c : s) {
    if (!is_space(c)) return false;
  }
  return true;
}

bool is_token_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) != 0 || c == '_';
}

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

// Content between the first `open` and the first `close` after it.
std::optional<std::string_view> first_block(std::string_view text, std::string_view open, std::string_view close) {
  const auto start = text.find(open);
  if (start == std::string_view::npos) return std::nullopt;
  const auto body = start + open.size();
  const auto end = text.find(close, body);
  if (end == std::string_view::npos) return std::nullopt;
  return text.substr(body, end - body);
}

bool check_shape(std::string_view raw) {
  using namespace tags;
  if (count_occurrences(raw, kThinkOpen) != 1 || count_occurrences(raw, kThinkClose) != 1 ||
      count_occurrences(raw, kAnswerOpen) != 1 || count_occurrences(raw, kAnswerClose) != 1) {
    return false;
  }
  const auto t0 = raw.find(kThinkOpen);
  const auto t1 = raw.find(kThinkClose);
  const auto a0 = raw.find(kAnswerOpen);
  const auto a1 = raw.find(kAnswerClose);
  if (!(t0 < t1 && t1 < a0 && a0 < a1)) return false;
  return all_space(raw.substr(0, t0)) && all_space(raw.substr(t1 + kThinkClose.size(), a0 - t1 - kThinkClose.size())) &&
         all_space(raw.substr(a1 + kAnswerClose.size()));
}

std::optional<Label> first_label_token(std::string_view answer) {
  std::size_t i = 0;
  while (i < answer.size()) {
    if (!is_token_char(answer[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < answer.size() && is_token_char(answer[j])) ++j;
    if (auto label = label_from_name(answer.substr(i, j - i))) return label;
    i = j;
  }
  return std::nullopt;
}

// Recursive-descent matcher for `(a, b), (c, d)` with arbitrary whitespace.
class TupleCursor {
 public:
  explicit TupleCursor(std::string_view s) : s_(s) {}

  void skip_space() {
    while (pos_ < s_.size() && is_space(s_[pos_])) ++pos_;
  }

  bool expect(char c) {
    skip_space();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  std::optional<int> integer() {
    skip_space();
    const std::size_t start = pos_;
    long long value = 0;
    while (pos_ < s_.size() && s_[pos_] >= '0' && s_[pos_] <= '9') {
      if (pos_ - start >= 9) return std::nullopt;
      value = value * 10 + (s_[pos_] - '0');
      ++pos_;
    }
    if (pos_ == start) return std::nullopt;
    return static_cast<int>(value);
  }

  bool at_end() {
    skip_space();
    return pos_ == s_.size();
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

std::optional<BBox> parse_box_tuple(std::string_view body) {
  TupleCursor cur(body);
  std::array<int, 4> v{};
  for (int pair = 0; pair < 2; ++pair) {
    if (pair == 1 && !cur.expect(',')) return std::nullopt;
    if (!cur.expect('(')) return std::nullopt;
    auto a = cur.integer();
    if (!a || !cur.expect(',')) return std::nullopt;
    auto b = cur.integer();
    if (!b || !cur.expect(')')) return std::nullopt;
    v[pair * 2] = *a;
    v[pair * 2 + 1] = *b;
  }
  if (!cur.at_end()) return std::nullopt;
  BBox box{v[0], v[1], v[2], v[3]};
  if (!box.valid()) return std::nullopt;
  return box;
}

bool contains_markup(std::string_view text) {
  using namespace tags;
  for (auto tag : {kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose, kBoxStart, kBoxEnd}) {
    if (text.find(tag) != std::string_view::npos) return true;
  }
  return false;
}

}  // namespace

std::string_view label_name(Label label) {
  switch (label) {
    case Label::Real:
      return "REAL";
    case Label::Tampered:
      return "TAMPERED";
    case Label::FullSynthetic:
      return "FULL_SYNTHETIC";
  }
  return "REAL";
}

std::optional<Label> label_from_name(std::string_view name) {
  for (Label l : kAllLabels) {
    if (label_name(l) == name) return l;
  }
  return std::nullopt;
}

void GroundTruth::validate() const {
  if (label == Label::Tampered && !box) {
    throw std::invalid_argument("TAMPERED ground truth requires a box");
  }
  if (label != Label::Tampered && box) {
    throw std::invalid_argument(std::string(label_name(label)) + " ground truth must not carry a box");
  }
  if (box && !box->valid()) {
    throw std::invalid_argument("ground-truth box violates 0 <= x1 < x2 <= 224, 0 <= y1 < y2 <= 224");
  }
}

ParsedCompletion parse_completion(std::string_view raw) {
  using namespace tags;
  ParsedCompletion out;
  out.raw_text = std::string(raw);
  out.has_think_answer_shape = check_shape(raw);
  if (auto think = first_block(raw, kThinkOpen, kThinkClose)) out.think_text = std::string(*think);

  // Multiple answer blocks break the shape, but the first one is still mined.
  auto answer = first_block(raw, kAnswerOpen, kAnswerClose);
  if (!answer) return out;
  out.answer_text = std::string(*answer);
  out.label = first_label_token(*answer);
  if (auto body = first_block(*answer, kBoxStart, kBoxEnd)) out.box = parse_box_tuple(*body);
  return out;
}

std::string render_completion(Label label, const std::optional<BBox>& box, std::string_view think_text) {
  if (label == Label::Tampered && !box) throw std::invalid_argument("TAMPERED completion requires a box");
  if (label != Label::Tampered && box) throw std::invalid_argument("only TAMPERED completions may carry a box");
  if (box && !box->valid()) throw std::invalid_argument("box violates the 224x224 frame invariants");
  if (contains_markup(think_text)) throw std::invalid_argument("think text must not contain completion tags");

  std::string out;
  out.reserve(think_text.size() + 96);
  out += tags::kThinkOpen;
  out += think_text;
  out += tags::kThinkClose;
  out += tags::kAnswerOpen;
  out += label_name(label);
  if (box) {
    out += ',';
    out += tags::kBoxStart;
    out += '(' + std::to_string(box->x1) + ", " + std::to_string(box->y1) + "), (" + std::to_string(box->x2) + ", " +
           std::to_string(box->y2) + ')';
    out += tags::kBoxEnd;
    out += '.';
  }
  out += tags::kAnswerClose;
  return out;
}

}  // namespace sofake
