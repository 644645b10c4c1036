#pragma once

// Five-dimension structured personas built from retrieved user history,
// either through the provider client (fixed prompt template, strictly parsed
// reply) or through a deterministic offline extractor driven by the keyword
// tables below. Results are cached by a hash of the history they were built
// from and persisted as line-delimited JSON.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "socialalign/bm25.hpp"
#include "socialalign/dataset.hpp"
#include "socialalign/errors.hpp"
#include "socialalign/io.hpp"
#include "socialalign/provider.hpp"
#include "socialalign/sentiment.hpp"

namespace socialalign {

constexpr std::size_t kPersonaMaxPhrases = 8;
constexpr std::size_t kPersonaMaxPhraseLen = 64;

struct Persona {
  std::string user_id;
  std::vector<std::string> interests;
  std::vector<std::string> language_style;
  std::vector<std::string> emotional_tone;
  std::vector<std::string> personality_traits;
  std::vector<std::string> values;
  std::string source;  // "provider" or "stub"
  std::int64_t created_at = 0;

  static constexpr std::array<std::string_view, 5> kDimensionNames{
      "interests", "language_style", "emotional_tone", "personality_traits", "values"};

  const std::vector<std::string>& dimension(std::size_t i) const {
    switch (i) {
      case 0: return interests;
      case 1: return language_style;
      case 2: return emotional_tone;
      case 3: return personality_traits;
      default: return values;
    }
  }
  std::vector<std::string>& dimension(std::size_t i) {
    return const_cast<std::vector<std::string>&>(
        static_cast<const Persona*>(this)->dimension(i));
  }

  bool operator==(const Persona& o) const {
    return user_id == o.user_id && interests == o.interests && language_style == o.language_style &&
           emotional_tone == o.emotional_tone && personality_traits == o.personality_traits &&
           values == o.values && source == o.source && created_at == o.created_at;
  }
};

// Never throws: invariant breaches come back as a violation list.
inline std::vector<std::string> validate_persona(const Persona& p) {
  std::vector<std::string> violations;
  for (std::size_t d = 0; d < Persona::kDimensionNames.size(); ++d) {
    const auto& list = p.dimension(d);
    const std::string name(Persona::kDimensionNames[d]);
    if (list.size() > kPersonaMaxPhrases)
      violations.push_back(name + ": " + std::to_string(list.size()) + " phrases exceeds limit " +
                           std::to_string(kPersonaMaxPhrases));
    for (const std::string& phrase : list) {
      if (phrase.empty()) violations.push_back(name + ": empty phrase");
      if (phrase.size() > kPersonaMaxPhraseLen)
        violations.push_back(name + ": phrase of " + std::to_string(phrase.size()) +
                             " characters exceeds limit " + std::to_string(kPersonaMaxPhraseLen));
    }
  }
  return violations;
}

// Rendering used in prompts and judge scoring: five fixed lines with short
// labels to keep prompt sequences compact.
inline std::string persona_to_text(const Persona& p) {
  static constexpr std::array<std::string_view, 5> kShortLabels{"interests", "style", "tone",
                                                                "traits", "values"};
  std::ostringstream os;
  for (std::size_t d = 0; d < kShortLabels.size(); ++d) {
    os << kShortLabels[d] << ":";
    const auto& list = p.dimension(d);
    for (std::size_t i = 0; i < list.size(); ++i) os << (i ? ", " : " ") << list[i];
    os << "\n";
  }
  return os.str();
}

// --- offline stub rules ------------------------------------------------------
// The oracle for these is the table itself: apply it by hand.

struct PersonaKeywordRule {
  std::string_view keyword;   // matched against whole tokens
  std::size_t dimension;      // 0 = interests, 4 = values
  std::string_view phrase;
};

inline constexpr std::array<PersonaKeywordRule, 30> kPersonaKeywordRules{{
    // interests
    {"housing", 0, "housing"},      {"mortgage", 0, "housing"},
    {"rent", 0, "housing"},         {"landlord", 0, "housing"},
    {"apartment", 0, "housing"},    {"prices", 0, "housing"},
    {"match", 0, "sports"},         {"team", 0, "sports"},
    {"stadium", 0, "sports"},       {"coach", 0, "sports"},
    {"score", 0, "sports"},         {"training", 0, "sports"},
    {"phone", 0, "technology"},     {"chip", 0, "technology"},
    {"software", 0, "technology"},  {"battery", 0, "technology"},
    {"startup", 0, "technology"},   {"gadget", 0, "technology"},
    {"restaurant", 0, "food"},      {"noodles", 0, "food"},
    {"recipe", 0, "food"},          {"dinner", 0, "food"},
    {"snack", 0, "food"},           {"flavor", 0, "food"},
    // values
    {"fairness", 4, "social equity"}, {"justice", 4, "social equity"},
    {"unacceptable", 4, "accountability"}, {"scam", 4, "honesty"},
    {"prices", 4, "value for money"},      {"reasonable", 4, "pragmatism"},
}};

// Deterministic persona from history text alone:
//   interests/values — keyword rules above, ranked by trigger frequency;
//   emotional_tone   — positive vs negative lexicon hit ratio (1.5x margin),
//                      plus the dominant non-calm emotion when it hits >= 2;
//   language_style   — punctuation ratios ('?' / '!' per post, 0.3 cutoff)
//                      and average post length (under 40 chars = concise);
//   personality_traits — questioning+negative = critical thinking, 3+
//                      interests = curious, emphatic = expressive, else steady.
inline Persona extract_persona_stub(const std::string& user_id, const std::vector<Post>& history) {
  if (history.empty()) throw ContractError("extract_persona: empty history");
  Persona p;
  p.user_id = user_id;
  p.source = "stub";

  std::unordered_map<std::string, std::size_t> tf;
  std::size_t question_posts = 0, exclaim_posts = 0, total_chars = 0;
  for (const Post& post : history) {
    for (const auto& tok : tokenize_text(post.text)) ++tf[tok];
    if (post.text.find('?') != std::string::npos) ++question_posts;
    if (post.text.find('!') != std::string::npos) ++exclaim_posts;
    total_chars += post.text.size();
  }
  const double n_posts = static_cast<double>(history.size());

  // interests and values from the rule table
  for (std::size_t dim : {std::size_t{0}, std::size_t{4}}) {
    struct Scored {
      std::string phrase;
      std::size_t score;
      std::size_t order;
    };
    std::vector<Scored> scored;
    for (std::size_t ri = 0; ri < kPersonaKeywordRules.size(); ++ri) {
      const auto& rule = kPersonaKeywordRules[ri];
      if (rule.dimension != dim) continue;
      auto it = tf.find(std::string(rule.keyword));
      if (it == tf.end()) continue;
      bool merged = false;
      for (Scored& s : scored)
        if (s.phrase == rule.phrase) {
          s.score += it->second;
          merged = true;
          break;
        }
      if (!merged) scored.push_back({std::string(rule.phrase), it->second, ri});
    }
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.order < b.order;
    });
    auto& target = p.dimension(dim);
    for (const Scored& s : scored) {
      if (target.size() >= 2) break;  // two strongest triggers keep prompts short
      target.push_back(s.phrase);
    }
  }

  // emotional tone from the sentiment lexicon
  std::array<std::size_t, kSentimentLabelCount> emotion_hits{};
  for (const auto& entry : kSentimentLexicon) {
    auto it = tf.find(std::string(entry.term));
    if (it != tf.end()) emotion_hits[static_cast<std::size_t>(entry.label)] += it->second;
  }
  const std::size_t pos = emotion_hits[static_cast<std::size_t>(SentimentLabel::Happy)];
  const std::size_t neg = emotion_hits[static_cast<std::size_t>(SentimentLabel::Sad)] +
                          emotion_hits[static_cast<std::size_t>(SentimentLabel::Angry)] +
                          emotion_hits[static_cast<std::size_t>(SentimentLabel::Fear)] +
                          emotion_hits[static_cast<std::size_t>(SentimentLabel::Disgusted)];
  if (static_cast<double>(pos) > 1.5 * static_cast<double>(neg))
    p.emotional_tone.push_back("positive");
  else if (static_cast<double>(neg) > 1.5 * static_cast<double>(pos))
    p.emotional_tone.push_back("negative");
  else
    p.emotional_tone.push_back("measured");
  std::size_t dominant = 0, dominant_hits = 0;
  for (std::size_t i = 0; i < kSentimentLabelCount; ++i) {
    if (i == static_cast<std::size_t>(SentimentLabel::Calm)) continue;
    if (emotion_hits[i] > dominant_hits) {
      dominant_hits = emotion_hits[i];
      dominant = i;
    }
  }
  if (dominant_hits >= 2)
    p.emotional_tone.push_back("often " + std::string(to_string(static_cast<SentimentLabel>(dominant))));

  // language style from punctuation and length
  const bool questioning = static_cast<double>(question_posts) / n_posts >= 0.3;
  const bool emphatic = static_cast<double>(exclaim_posts) / n_posts >= 0.3;
  if (questioning) p.language_style.push_back("questioning");
  if (emphatic) p.language_style.push_back("emphatic");
  p.language_style.push_back(total_chars / history.size() < 40 ? "concise" : "elaborate");

  // personality traits
  const bool negative_tone = p.emotional_tone.front() == "negative";
  if (questioning && negative_tone) p.personality_traits.push_back("critical thinking");
  if (p.interests.size() >= 3) p.personality_traits.push_back("curious");
  if (emphatic) p.personality_traits.push_back("expressive");
  if (p.personality_traits.empty()) p.personality_traits.push_back("steady");

  return p;
}

// --- provider path -----------------------------------------------------------

inline constexpr std::string_view kPersonaTemplateId = "persona_v1";
inline constexpr std::string_view kPersonaTemplateRelPath = "templates/persona_v1.txt";

inline std::string fill_persona_template(std::string template_text, const std::string& user_id,
                                         const std::vector<Post>& history) {
  auto replace_all = [](std::string& s, std::string_view from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
      s.replace(pos, from.size(), to);
      pos += to.size();
    }
  };
  std::string history_text;
  for (const Post& p : history) history_text += "- " + p.text + "\n";
  replace_all(template_text, "{{user_id}}", user_id);
  replace_all(template_text, "{{history}}", history_text);
  return template_text;
}

// Strict reply parse: exactly the five labeled lines, each at most once,
// nothing else. Anything off-contract raises ProviderFormatError with the raw
// reply attached.
inline Persona parse_persona_reply(const std::string& user_id, const std::string& reply) {
  Persona p;
  p.user_id = user_id;
  p.source = "provider";
  std::array<bool, 5> seen{};

  std::istringstream in(reply);
  std::string line;
  while (std::getline(in, line)) {
    const std::string norm = normalize_text(line);
    if (norm.empty()) continue;
    const auto colon = norm.find(':');
    if (colon == std::string::npos)
      throw ProviderFormatError("persona reply line without label: '" + norm + "'", reply);
    const std::string label = to_lower_ascii(norm.substr(0, colon));
    std::size_t dim = Persona::kDimensionNames.size();
    for (std::size_t d = 0; d < Persona::kDimensionNames.size(); ++d)
      if (label == Persona::kDimensionNames[d]) dim = d;
    if (dim == Persona::kDimensionNames.size())
      throw ProviderFormatError("persona reply has unknown section '" + label + "'", reply);
    if (seen[dim])
      throw ProviderFormatError("persona reply repeats section '" + label + "'", reply);
    seen[dim] = true;

    std::string rest = norm.substr(colon + 1);
    std::size_t start = 0;
    while (start <= rest.size()) {
      std::size_t comma = rest.find(',', start);
      if (comma == std::string::npos) comma = rest.size();
      std::string phrase = normalize_text(rest.substr(start, comma - start));
      if (!phrase.empty()) p.dimension(dim).push_back(phrase);
      start = comma + 1;
    }
  }
  for (std::size_t d = 0; d < seen.size(); ++d)
    if (!seen[d])
      throw ProviderFormatError(
          "persona reply missing section '" + std::string(Persona::kDimensionNames[d]) + "'", reply);
  const auto violations = validate_persona(p);
  if (!violations.empty())
    throw ProviderFormatError("persona reply violates limits: " + violations.front(), reply);
  return p;
}

// --- extractor with cache ------------------------------------------------------

inline std::string history_hash(const std::vector<Post>& history) {
  std::string joined;
  for (const Post& p : history) {
    joined += p.text;
    joined += '\x1e';
  }
  return fnv1a64_hex(joined);
}

class PersonaCache {
 public:
  const Persona* lookup(const std::string& user_id, const std::string& hash) const {
    auto it = entries_.find(user_id);
    if (it == entries_.end() || it->second.first != hash) {
      ++misses_;
      return nullptr;
    }
    ++hits_;
    return &it->second.second;
  }
  void store(const std::string& user_id, const std::string& hash, Persona p) {
    entries_[user_id] = {hash, std::move(p)};
  }
  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }

 private:
  std::map<std::string, std::pair<std::string, Persona>> entries_;
  mutable std::size_t hits_ = 0, misses_ = 0;
};

class PersonaExtractor {
 public:
  // Offline deterministic extractor.
  PersonaExtractor() = default;

  // Provider-backed extractor with the versioned prompt template.
  PersonaExtractor(ProviderClient* provider, std::string template_text)
      : provider_(provider), template_text_(std::move(template_text)) {}

  Persona extract(const std::string& user_id, const std::vector<Post>& retrieved_history) {
    if (retrieved_history.empty()) throw ContractError("extract_persona: empty history");
    const std::string hash = history_hash(retrieved_history);
    if (const Persona* cached = cache_.lookup(user_id, hash)) return *cached;

    Persona p;
    if (provider_) {
      ProviderRequest req{std::string(kPersonaTemplateId),
                          fill_persona_template(template_text_, user_id, retrieved_history), 256,
                          0.0};
      ProviderReply reply = provider_->chat_complete(req);
      p = parse_persona_reply(user_id, reply.text);  // throws before caching on bad replies
    } else {
      p = extract_persona_stub(user_id, retrieved_history);
    }
    cache_.store(user_id, hash, p);
    return p;
  }

  const PersonaCache& cache() const { return cache_; }

 private:
  ProviderClient* provider_ = nullptr;
  std::string template_text_;
  PersonaCache cache_;
};

// --- persistence ----------------------------------------------------------------

inline void export_personas(const std::string& path, const std::vector<Persona>& personas) {
  std::ostringstream out;
  for (const Persona& p : personas) {
    nlohmann::json j{{"user_id", p.user_id},
                     {"interests", p.interests},
                     {"language_style", p.language_style},
                     {"emotional_tone", p.emotional_tone},
                     {"personality_traits", p.personality_traits},
                     {"values", p.values},
                     {"source", p.source},
                     {"created_at", p.created_at}};
    out << j.dump() << "\n";
  }
  binio::write_file_atomic(path, out.str());
}

inline std::vector<Persona> import_personas(const std::string& path) {
  std::vector<Persona> out;
  jsonl::read_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    for (const char* field : {"user_id", "interests", "language_style", "emotional_tone",
                              "personality_traits", "values", "source"})
      if (!j.contains(field))
        throw ParseError(std::string("persona record missing field '") + field + "'", line);
    Persona p;
    try {
      p.user_id = j.at("user_id").get<std::string>();
      p.interests = j.at("interests").get<std::vector<std::string>>();
      p.language_style = j.at("language_style").get<std::vector<std::string>>();
      p.emotional_tone = j.at("emotional_tone").get<std::vector<std::string>>();
      p.personality_traits = j.at("personality_traits").get<std::vector<std::string>>();
      p.values = j.at("values").get<std::vector<std::string>>();
      p.source = j.at("source").get<std::string>();
      p.created_at = j.value("created_at", static_cast<std::int64_t>(0));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("persona record: ") + e.what(), line);
    }
    const auto violations = validate_persona(p);
    if (!violations.empty())
      throw ValidationError("persona " + p.user_id + ": " + violations.front() + " (line " +
                            std::to_string(line) + ")");
    out.push_back(std::move(p));
  });
  return out;
}

}  // namespace socialalign
