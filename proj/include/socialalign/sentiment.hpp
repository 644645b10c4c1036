#pragma once

// Seven-label sentiment taxonomy, micro classification (provider-backed or
// offline lexicon stub), macro aggregation into a distribution, JS-divergence
// alignment, accuracy/macro-F1, and optional judge scoring.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "socialalign/bm25.hpp"  // tokenize_text
#include "socialalign/errors.hpp"
#include "socialalign/provider.hpp"

namespace socialalign {

enum class SentimentLabel : int {
  Happy = 0,
  Sad = 1,
  Angry = 2,
  Calm = 3,
  Fear = 4,
  Surprised = 5,
  Disgusted = 6,
};

constexpr std::size_t kSentimentLabelCount = 7;

constexpr std::array<std::string_view, kSentimentLabelCount> kSentimentLabelNames{
    "happy", "sad", "angry", "calm", "fear", "surprised", "disgusted"};

inline std::string_view to_string(SentimentLabel l) {
  return kSentimentLabelNames[static_cast<std::size_t>(l)];
}

inline std::optional<SentimentLabel> parse_sentiment_label(std::string_view s) {
  for (std::size_t i = 0; i < kSentimentLabelCount; ++i)
    if (s == kSentimentLabelNames[i]) return static_cast<SentimentLabel>(i);
  return std::nullopt;
}

// Keyword lexicon behind the offline classifier. Each occurrence of a term
// scores one point for its label; the highest-scoring label wins, ties break
// toward the lower label index, and a text with no hits is "calm".
struct LexiconEntry {
  std::string_view term;
  SentimentLabel label;
};

inline constexpr std::array<LexiconEntry, 49> kSentimentLexicon{{
    {"wonderful", SentimentLabel::Happy},   {"great", SentimentLabel::Happy},
    {"love", SentimentLabel::Happy},        {"hope", SentimentLabel::Happy},
    {"glad", SentimentLabel::Happy},        {"happy", SentimentLabel::Happy},
    {"excellent", SentimentLabel::Happy},   {"开心", SentimentLabel::Happy},
    {"sad", SentimentLabel::Sad},           {"cry", SentimentLabel::Sad},
    {"heartbroken", SentimentLabel::Sad},   {"miserable", SentimentLabel::Sad},
    {"lonely", SentimentLabel::Sad},        {"loss", SentimentLabel::Sad},
    {"难过", SentimentLabel::Sad},          {"angry", SentimentLabel::Angry},
    {"furious", SentimentLabel::Angry},     {"outrage", SentimentLabel::Angry},
    {"shame", SentimentLabel::Angry},       {"unacceptable", SentimentLabel::Angry},
    {"terrible", SentimentLabel::Angry},    {"愤怒", SentimentLabel::Angry},
    {"calm", SentimentLabel::Calm},         {"steady", SentimentLabel::Calm},
    {"observe", SentimentLabel::Calm},      {"reasonable", SentimentLabel::Calm},
    {"neutral", SentimentLabel::Calm},      {"fine", SentimentLabel::Calm},
    {"平静", SentimentLabel::Calm},         {"fear", SentimentLabel::Fear},
    {"scared", SentimentLabel::Fear},       {"worried", SentimentLabel::Fear},
    {"afraid", SentimentLabel::Fear},       {"panic", SentimentLabel::Fear},
    {"anxious", SentimentLabel::Fear},      {"害怕", SentimentLabel::Fear},
    {"wow", SentimentLabel::Surprised},     {"surprised", SentimentLabel::Surprised},
    {"unbelievable", SentimentLabel::Surprised}, {"shocking", SentimentLabel::Surprised},
    {"sudden", SentimentLabel::Surprised},  {"astonishing", SentimentLabel::Surprised},
    {"震惊", SentimentLabel::Surprised},    {"disgusting", SentimentLabel::Disgusted},
    {"gross", SentimentLabel::Disgusted},   {"vile", SentimentLabel::Disgusted},
    {"nasty", SentimentLabel::Disgusted},   {"revolting", SentimentLabel::Disgusted},
    {"恶心", SentimentLabel::Disgusted},
}};

// Pure function of the comment text.
inline SentimentLabel classify_sentiment_stub(const std::string& comment) {
  if (comment.empty()) throw ContractError("classify_sentiment: empty comment");
  std::array<int, kSentimentLabelCount> hits{};
  const auto tokens = tokenize_text(comment);
  for (const auto& tok : tokens) {
    for (const auto& entry : kSentimentLexicon) {
      // ASCII terms match whole tokens; CJK terms are already bigrams/chars
      if (tok == entry.term) ++hits[static_cast<std::size_t>(entry.label)];
    }
  }
  // first maximum wins: ties resolve to the lower label index
  int best = 0;
  std::size_t best_label = static_cast<std::size_t>(SentimentLabel::Calm);
  for (std::size_t i = 0; i < kSentimentLabelCount; ++i) {
    if (hits[i] > best) {
      best = hits[i];
      best_label = i;
    }
  }
  return best > 0 ? static_cast<SentimentLabel>(best_label) : SentimentLabel::Calm;
}

inline constexpr std::string_view kSentimentTemplateId = "sentiment_v1";

inline std::string sentiment_prompt(const std::string& comment) {
  std::string p =
      "Classify the sentiment of the following social media comment.\n"
      "Reply with exactly one lowercase word out of: happy, sad, angry, calm, "
      "fear, surprised, disgusted.\n\ncomment: ";
  p += comment;
  return p;
}

// provider|stub dispatch. Off-taxonomy provider replies are format errors.
class SentimentClassifier {
 public:
  SentimentClassifier() = default;  // stub mode
  explicit SentimentClassifier(ProviderClient* provider) : provider_(provider) {}

  SentimentLabel classify(const std::string& comment) const {
    if (comment.empty()) throw ContractError("classify_sentiment: empty comment");
    if (!provider_) return classify_sentiment_stub(comment);
    ProviderRequest req{std::string(kSentimentTemplateId), sentiment_prompt(comment), 8, 0.0};
    ProviderReply reply = provider_->chat_complete(req);
    std::string trimmed = reply.text;
    while (!trimmed.empty() && (trimmed.back() == '\n' || trimmed.back() == '\r' ||
                                trimmed.back() == ' ' || trimmed.back() == '.'))
      trimmed.pop_back();
    std::size_t start = trimmed.find_first_not_of(" \t");
    if (start == std::string::npos) start = trimmed.size();
    auto label = parse_sentiment_label(std::string_view(trimmed).substr(start));
    if (!label)
      throw ProviderFormatError("sentiment reply outside the 7-label taxonomy: '" + reply.text + "'",
                                reply.text);
    return *label;
  }

 private:
  ProviderClient* provider_ = nullptr;
};

struct SentimentDistribution {
  std::array<double, kSentimentLabelCount> weights{};

  void validate(double tol = 1e-9) const {
    double sum = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw ContractError("sentiment distribution: negative or NaN weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > tol)
      throw ContractError("sentiment distribution: weights sum to " + std::to_string(sum));
  }

  static SentimentDistribution uniform() {
    SentimentDistribution d;
    d.weights.fill(1.0 / static_cast<double>(kSentimentLabelCount));
    return d;
  }

  static SentimentDistribution one_hot(SentimentLabel l) {
    SentimentDistribution d;
    d.weights[static_cast<std::size_t>(l)] = 1.0;
    return d;
  }
};

// Normalized label counts in fixed label order.
inline SentimentDistribution aggregate_distribution(const std::vector<SentimentLabel>& labels) {
  if (labels.empty()) throw EmptyCollectionError("aggregate_distribution: no labels");
  SentimentDistribution d;
  for (SentimentLabel l : labels) d.weights[static_cast<std::size_t>(l)] += 1.0;
  for (double& w : d.weights) w /= static_cast<double>(labels.size());
  return d;
}

// JS(P,Q) = KL(P||M)/2 + KL(Q||M)/2 with M = (P+Q)/2, logs base 2, so the
// result lives in [0,1] bits. 0*log 0 is taken as 0.
inline double js_divergence(const SentimentDistribution& p, const SentimentDistribution& q) {
  p.validate();
  q.validate();
  double js = 0.0;
  for (std::size_t i = 0; i < kSentimentLabelCount; ++i) {
    const double m = 0.5 * (p.weights[i] + q.weights[i]);
    if (p.weights[i] > 0.0) js += 0.5 * p.weights[i] * std::log2(p.weights[i] / m);
    if (q.weights[i] > 0.0) js += 0.5 * q.weights[i] * std::log2(q.weights[i] / m);
  }
  return std::max(0.0, js);
}

struct SentimentMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

// Accuracy and unweighted mean per-class F1; classes absent from both the
// predictions and the gold labels are excluded from the mean.
inline SentimentMetrics sentiment_metrics(const std::vector<SentimentLabel>& pred,
                                          const std::vector<SentimentLabel>& gold) {
  if (pred.empty() || pred.size() != gold.size())
    throw ContractError("sentiment_metrics: " + std::to_string(pred.size()) + " predictions vs " +
                        std::to_string(gold.size()) + " gold labels");
  std::array<std::array<std::size_t, kSentimentLabelCount>, kSentimentLabelCount> confusion{};
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    confusion[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(pred[i])]++;
    if (pred[i] == gold[i]) ++correct;
  }
  double f1_sum = 0.0;
  std::size_t f1_classes = 0;
  for (std::size_t c = 0; c < kSentimentLabelCount; ++c) {
    std::size_t tp = confusion[c][c], fn = 0, fp = 0;
    for (std::size_t j = 0; j < kSentimentLabelCount; ++j) {
      if (j != c) {
        fn += confusion[c][j];
        fp += confusion[j][c];
      }
    }
    if (tp + fn + fp == 0) continue;  // absent from both pred and gold
    ++f1_classes;
    if (tp > 0) f1_sum += 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
  }
  SentimentMetrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  m.macro_f1 = f1_classes ? f1_sum / static_cast<double>(f1_classes) : 0.0;
  return m;
}

// --- judge scoring (provider-only, never part of CI) ------------------------

struct JudgeScore {
  double language_style = 0.0;
  double content_focus = 0.0;
  double persona_dynamics = 0.0;
};

struct JudgeResult {
  JudgeScore score;
  std::string template_hash;  // pins the rubric the score was produced under
};

inline constexpr std::string_view kJudgeTemplateId = "judge_v1";

inline std::string judge_prompt(const std::string& generated, const std::string& reference,
                                const std::string& persona_text) {
  std::string p =
      "Rate how well the generated comment matches this user, 0-10 per dimension.\n"
      "Dimensions: language style; content focus; persona dynamics.\n"
      "Reply with exactly three numbers separated by slashes, e.g. 7 / 8 / 6.\n\n";
  p += "persona:\n" + persona_text + "\n";
  p += "reference comment: " + reference + "\n";
  p += "generated comment: " + generated + "\n";
  return p;
}

inline JudgeResult judge_comment(const std::string& generated, const std::string& reference,
                                 const std::string& persona_text, ProviderClient& judge) {
  if (generated.empty() || reference.empty() || persona_text.empty())
    throw ContractError("judge_comment: empty input text");
  const std::string prompt = judge_prompt(generated, reference, persona_text);
  ProviderRequest req{std::string(kJudgeTemplateId), prompt, 32, 0.0};
  ProviderReply reply = judge.chat_complete(req);

  std::array<double, 3> values{};
  std::size_t n = 0, pos = 0;
  while (n < 3 && pos < reply.text.size()) {
    const char c = reply.text[pos];
    if ((c >= '0' && c <= '9') || c == '.') {
      std::size_t end = pos;
      while (end < reply.text.size() &&
             ((reply.text[end] >= '0' && reply.text[end] <= '9') || reply.text[end] == '.'))
        ++end;
      values[n++] = std::stod(reply.text.substr(pos, end - pos));
      pos = end;
    } else {
      ++pos;
    }
  }
  if (n != 3)
    throw ProviderFormatError("judge reply does not contain three scores: '" + reply.text + "'",
                              reply.text);
  for (double v : values)
    if (v < 0.0 || v > 10.0)
      throw ProviderFormatError("judge score outside 0-10: '" + reply.text + "'", reply.text);
  return {{values[0], values[1], values[2]}, fnv1a64_hex(prompt)};
}

}  // namespace socialalign
