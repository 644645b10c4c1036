#pragma once

// SentiWeibo-shaped data model: posts with hashtags, per-user histories,
// topics with ground-truth sentiment distributions. Includes the dual-filter
// preprocessing step, the seeded 8/1/1 split, a deterministic synthetic
// corpus generator, and strict line-delimited JSON import/export.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "socialalign/errors.hpp"
#include "socialalign/io.hpp"
#include "socialalign/sentiment.hpp"

namespace socialalign {

// Whitespace collapse + trim. Input is expected to be NFC-normalized UTF-8
// already (true for the synthetic corpus and for typical exports).
inline std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_space = false;
  for (char c : text) {
    const bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    if (ws) {
      in_space = !out.empty();
    } else {
      if (in_space) out.push_back(' ');
      in_space = false;
      out.push_back(c);
    }
  }
  return out;
}

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

// Weibo-style "#...#" hashtags plus bare "#token" fallback; lowercased and
// deduplicated in order of first appearance.
inline std::vector<std::string> extract_hashtags(std::string_view text) {
  std::vector<std::string> tags;
  auto push = [&](std::string_view raw) {
    if (raw.empty()) return;
    std::string tag = to_lower_ascii(raw);
    if (std::find(tags.begin(), tags.end(), tag) == tags.end()) tags.push_back(tag);
  };
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '#') {
      ++i;
      continue;
    }
    // paired "#...#" (Weibo convention) when the closing marker is near enough
    const std::size_t close = text.find('#', i + 1);
    if (close != std::string::npos && close > i + 1 && close - i <= 65) {
      std::string_view inner = text.substr(i + 1, close - i - 1);
      while (!inner.empty() && inner.back() == ' ') inner.remove_suffix(1);
      while (!inner.empty() && inner.front() == ' ') inner.remove_prefix(1);
      if (!inner.empty()) {
        push(inner);
        i = close + 1;
        continue;
      }
    }
    // fallback: bare "#token" up to whitespace
    std::size_t end = i + 1;
    while (end < text.size() && text[end] != ' ' && text[end] != '\t' && text[end] != '#') ++end;
    push(text.substr(i + 1, end - i - 1));
    i = end;
  }
  return tags;
}

struct Post {
  std::string id;
  std::string user_id;
  std::string text;  // normalized
  std::vector<std::string> hashtags;
  std::int64_t timestamp = 0;

  static Post make(std::string id, std::string user_id, std::string_view raw_text,
                   std::int64_t timestamp) {
    Post p;
    p.id = std::move(id);
    p.user_id = std::move(user_id);
    p.text = normalize_text(raw_text);
    if (p.text.empty()) throw ValidationError("post " + p.id + ": empty text after normalization");
    p.hashtags = extract_hashtags(p.text);
    p.timestamp = timestamp;
    return p;
  }

  bool has_hashtag(std::string_view tag) const {
    return std::find(hashtags.begin(), hashtags.end(), tag) != hashtags.end();
  }
};

struct UserHistory {
  std::string user_id;
  std::vector<Post> posts;  // time-ordered
};

struct TopicRecord {
  std::string topic_id;
  std::string hashtag;            // lowercased, without '#' delimiters
  std::string news_text;          // the hashtag topic rendered as news text
  std::vector<Post> posts;        // hashtagged posts of this topic
  SentimentDistribution ground_truth;
  std::size_t participant_count = 0;
};

// --- dual filter -------------------------------------------------------------

struct DropReason {
  enum class Kind { NoHashtag, NoiseKeyword };
  Kind kind = Kind::NoHashtag;
  std::string keyword;

  std::string to_string() const {
    return kind == Kind::NoHashtag ? "no_hashtag" : "noise_keyword:" + keyword;
  }
};

struct FilterResult {
  std::vector<Post> kept;
  std::vector<std::pair<Post, DropReason>> dropped;
};

// Keep iff the post has at least one hashtag AND its text contains no noise
// keyword (substring match on normalized text). Every drop carries a reason.
inline FilterResult dual_filter(const std::vector<Post>& posts,
                                const std::vector<std::string>& noise_keywords) {
  FilterResult result;
  for (const Post& p : posts) {
    if (p.hashtags.empty()) {
      result.dropped.push_back({p, {DropReason::Kind::NoHashtag, ""}});
      continue;
    }
    const std::string* hit = nullptr;
    for (const std::string& kw : noise_keywords) {
      if (!kw.empty() && p.text.find(kw) != std::string::npos) {
        hit = &kw;
        break;
      }
    }
    if (hit) {
      result.dropped.push_back({p, {DropReason::Kind::NoiseKeyword, *hit}});
    } else {
      result.kept.push_back(p);
    }
  }
  return result;
}

inline std::vector<std::string> load_noise_keywords(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open noise keyword list " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(f, line)) {
    const std::string norm = normalize_text(line);
    if (!norm.empty() && norm[0] != '#') out.push_back(norm);
  }
  return out;
}

// --- split -------------------------------------------------------------------

enum class Split { Train, Valid, Test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "train";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  return std::nullopt;
}

struct SplitAssignment {
  std::map<std::string, Split> assignment;
  std::uint64_t seed = 0;

  std::size_t count(Split s) const {
    std::size_t n = 0;
    for (const auto& [id, sp] : assignment)
      if (sp == s) ++n;
    return n;
  }
};

// Seeded shuffle, then contiguous 8/1/1 slices. Train and valid sizes round
// half-up from 0.8n and 0.1n; test takes the remainder, so 97 records give
// (78, 10, 9).
inline SplitAssignment split_dataset(const std::vector<std::string>& ids, std::uint64_t seed) {
  if (ids.size() < 3)
    throw ContractError("split_dataset: need at least 3 records, got " + std::to_string(ids.size()));
  std::vector<std::string> shuffled = ids;
  std::mt19937_64 rng(seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);

  const double n = static_cast<double>(ids.size());
  const std::size_t n_train = static_cast<std::size_t>(std::floor(0.8 * n + 0.5));
  const std::size_t n_valid = static_cast<std::size_t>(std::floor(0.1 * n + 0.5));

  SplitAssignment out;
  out.seed = seed;
  for (std::size_t i = 0; i < shuffled.size(); ++i) {
    Split s = i < n_train ? Split::Train : (i < n_train + n_valid ? Split::Valid : Split::Test);
    out.assignment[shuffled[i]] = s;
  }
  return out;
}

// --- synthetic corpus ----------------------------------------------------------

struct SynthConfig {
  std::size_t n_topics = 8;
  std::size_t n_users = 60;
  std::size_t posts_per_user = 12;
  std::uint64_t seed = 1;
  // Multiplier on the archetype-cluster affinity table; 1.0 keeps the table's
  // skewed participation (distinct per-topic sentiment mixes), higher values
  // draw more users per topic.
  double participation = 1.0;
  double noise_fraction = 0.1;  // extra history posts the dual filter should drop
};

struct SynthCorpus {
  std::vector<TopicRecord> topics;
  std::vector<UserHistory> histories;
};

namespace synth_detail {

struct TopicCluster {
  std::string_view name;
  std::array<std::string_view, 6> words;
};

// Vocabulary-separable clusters; the words double as persona interest
// triggers, so the same corpus exercises retrieval, persona extraction and
// expert specialization.
inline constexpr std::array<TopicCluster, 4> kClusters{{
    {"housing", {"housing", "mortgage", "rent", "landlord", "apartment", "prices"}},
    {"sports", {"match", "team", "stadium", "coach", "score", "training"}},
    {"tech", {"phone", "chip", "software", "battery", "startup", "gadget"}},
    {"food", {"restaurant", "noodles", "recipe", "dinner", "snack", "flavor"}},
}};

struct Archetype {
  std::string_view name;
  SentimentLabel main_label;
  std::array<std::string_view, 3> style_words;  // drawn from the stub lexicon
  std::string_view punct;
};

inline constexpr std::array<Archetype, 7> kArchetypes{{
    {"optimist", SentimentLabel::Happy, {"great", "wonderful", "hope"}, "!"},
    {"mourner", SentimentLabel::Sad, {"sad", "heartbroken", "lonely"}, "..."},
    {"firebrand", SentimentLabel::Angry, {"furious", "outrage", "unacceptable"}, "!"},
    {"analyst", SentimentLabel::Calm, {"steady", "observe", "reasonable"}, "."},
    {"worrier", SentimentLabel::Fear, {"worried", "scared", "anxious"}, "?"},
    {"gasper", SentimentLabel::Surprised, {"wow", "unbelievable", "shocking"}, "!"},
    {"cynic", SentimentLabel::Disgusted, {"disgusting", "gross", "vile"}, "."},
}};

// Join probability per archetype (rows) and cluster (columns: housing,
// sports, tech, food). Strongly skewed on purpose: each topic draws a
// different mix of archetypes, so ground-truth sentiment distributions are
// far from uniform and differ per cluster.
inline constexpr double kAffinity[7][4] = {
    {0.05, 0.85, 0.15, 0.75},  // optimist
    {0.20, 0.10, 0.05, 0.60},  // mourner
    {0.90, 0.15, 0.20, 0.05},  // firebrand
    {0.35, 0.25, 0.70, 0.20},  // analyst
    {0.80, 0.05, 0.50, 0.15},  // worrier
    {0.15, 0.80, 0.60, 0.20},  // gasper
    {0.25, 0.05, 0.45, 0.70},  // cynic
};

inline const TopicCluster& cluster_of(std::size_t topic_index) {
  return kClusters[topic_index % kClusters.size()];
}

inline const Archetype& archetype_of(std::size_t user_index) {
  return kArchetypes[user_index % kArchetypes.size()];
}

}  // namespace synth_detail

// Deterministic: the corpus is a pure function of the config. Ground-truth
// distributions are computed by running the stub classifier over the
// generated gold responses, so the evaluation pipeline's oracle is internally
// consistent by construction.
inline SynthCorpus synth_generate(const SynthConfig& cfg) {
  if (cfg.n_topics == 0 || cfg.n_users == 0 || cfg.posts_per_user == 0)
    throw ContractError("synth_generate: all counts must be >= 1");
  using namespace synth_detail;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  SynthCorpus corpus;
  std::vector<std::string> topic_tags(cfg.n_topics);
  std::vector<std::string> topic_news(cfg.n_topics);
  for (std::size_t t = 0; t < cfg.n_topics; ++t) {
    const TopicCluster& c = cluster_of(t);
    topic_tags[t] = "t" + std::to_string(t);  // short tags keep sequences compact
    const auto w1 = c.words[rng() % c.words.size()];
    topic_news[t] = std::string(c.words[t % c.words.size()]) + " " + std::string(w1) + " report";
  }

  // per-topic gold responses, in user order
  std::vector<std::vector<Post>> topic_posts(cfg.n_topics);
  std::vector<std::vector<SentimentLabel>> topic_labels(cfg.n_topics);

  corpus.histories.resize(cfg.n_users);
  std::size_t post_counter = 0;
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    UserHistory& hist = corpus.histories[u];
    hist.user_id = "u" + std::to_string(u);
    const Archetype& arch = archetype_of(u);

    const std::size_t arch_index = u % kArchetypes.size();
    for (std::size_t t = 0; t < cfg.n_topics; ++t) {
      const TopicCluster& c = cluster_of(t);
      const double p_join =
          std::min(1.0, kAffinity[arch_index][t % kClusters.size()] * cfg.participation);
      // every topic gets at least one participant
      const bool forced = u == t % cfg.n_users;
      if (!forced && coin(rng) > p_join) continue;

      // The archetype's primary style word leads the response, so truncated
      // generations still classify and each user's sentiment is consistent.
      std::string text = std::string(arch.style_words[0]) + std::string(arch.punct) + " #" +
                         topic_tags[t] + "#";
      Post p = Post::make("p" + std::to_string(post_counter++), hist.user_id, text,
                          static_cast<std::int64_t>(1700000000 + post_counter));
      hist.posts.push_back(p);
      topic_posts[t].push_back(p);
      topic_labels[t].push_back(classify_sentiment_stub(p.text));
    }

    // filler history: on-style posts about the user's favorite cluster
    while (hist.posts.size() < cfg.posts_per_user) {
      const std::size_t ci = u % kClusters.size();
      const TopicCluster& c = kClusters[ci];
      const bool noisy = coin(rng) < cfg.noise_fraction;
      std::string text;
      if (noisy) {
        // either hashtag-free or carrying a noise keyword; dual_filter drops these
        text = coin(rng) < 0.5 ? std::string(arch.style_words[0]) + " day today"
                               : "fashionable outfit giveaway #c" + std::to_string(ci) + "#";
      } else {
        text = std::string(arch.style_words[rng() % arch.style_words.size()]) + " " +
               std::string(c.words[rng() % c.words.size()]) + std::string(arch.punct) + " #c" +
               std::to_string(ci) + "#";
      }
      hist.posts.push_back(Post::make("p" + std::to_string(post_counter++), hist.user_id, text,
                                      static_cast<std::int64_t>(1700000000 + post_counter)));
    }
  }

  for (std::size_t t = 0; t < cfg.n_topics; ++t) {
    TopicRecord rec;
    rec.topic_id = "t" + std::to_string(t);
    rec.hashtag = topic_tags[t];
    rec.news_text = topic_news[t];
    rec.posts = topic_posts[t];
    rec.participant_count = topic_posts[t].size();
    rec.ground_truth = aggregate_distribution(topic_labels[t]);
    corpus.topics.push_back(std::move(rec));
  }
  return corpus;
}

// --- line-delimited JSON I/O ---------------------------------------------------

namespace jsonl {

inline nlohmann::json post_to_json(const Post& p) {
  return {{"id", p.id},
          {"user_id", p.user_id},
          {"text", p.text},
          {"hashtags", p.hashtags},
          {"timestamp", p.timestamp}};
}

inline Post post_from_json(const nlohmann::json& j, std::size_t line) {
  for (const char* field : {"id", "user_id", "text"})
    if (!j.contains(field))
      throw ParseError(std::string("post record missing field '") + field + "'", line);
  Post p;
  try {
    p.id = j.at("id").get<std::string>();
    p.user_id = j.at("user_id").get<std::string>();
    p.text = normalize_text(j.at("text").get<std::string>());
    if (j.contains("hashtags"))
      p.hashtags = j.at("hashtags").get<std::vector<std::string>>();
    else
      p.hashtags = extract_hashtags(p.text);
    p.timestamp = j.value("timestamp", static_cast<std::int64_t>(0));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("post record: ") + e.what(), line);
  }
  if (p.text.empty()) throw ValidationError("post " + p.id + ": empty text (line " +
                                            std::to_string(line) + ")");
  return p;
}

template <typename T, typename ToJson>
void write_jsonl(const std::string& path, const std::vector<T>& items, ToJson to_json) {
  std::ostringstream out;
  for (const T& item : items) out << to_json(item).dump() << "\n";
  binio::write_file_atomic(path, out.str());
}

template <typename FromJson>
void read_jsonl(const std::string& path, FromJson from_json) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    from_json(j, line_no);
  }
}

}  // namespace jsonl

inline void export_posts(const std::string& path, const std::vector<Post>& posts) {
  jsonl::write_jsonl(path, posts, jsonl::post_to_json);
}

inline std::vector<Post> import_posts(const std::string& path) {
  std::vector<Post> posts;
  jsonl::read_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    posts.push_back(jsonl::post_from_json(j, line));
  });
  return posts;
}

inline void export_topics(const std::string& path, const std::vector<TopicRecord>& topics) {
  jsonl::write_jsonl(path, topics, [](const TopicRecord& t) {
    std::vector<std::string> post_ids;
    for (const Post& p : t.posts) post_ids.push_back(p.id);
    return nlohmann::json{{"id", t.topic_id},
                          {"hashtag", t.hashtag},
                          {"news_text", t.news_text},
                          {"distribution", t.ground_truth.weights},
                          {"participants", t.participant_count},
                          {"post_ids", post_ids}};
  });
}

// Topics come back with post ids resolved against `posts`; every resolved
// post must carry the topic hashtag (TopicRecord invariant).
inline std::vector<TopicRecord> import_topics(const std::string& path,
                                              const std::vector<Post>& posts) {
  std::map<std::string, const Post*> by_id;
  for (const Post& p : posts) by_id[p.id] = &p;
  std::vector<TopicRecord> topics;
  jsonl::read_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    for (const char* field : {"id", "hashtag", "distribution"})
      if (!j.contains(field))
        throw ParseError(std::string("topic record missing field '") + field + "'", line);
    TopicRecord t;
    try {
      t.topic_id = j.at("id").get<std::string>();
      t.hashtag = j.at("hashtag").get<std::string>();
      t.news_text = j.value("news_text", "");
      auto w = j.at("distribution").get<std::vector<double>>();
      if (w.size() != kSentimentLabelCount)
        throw ParseError("topic distribution must have 7 entries", line);
      std::copy(w.begin(), w.end(), t.ground_truth.weights.begin());
      t.participant_count = j.value("participants", static_cast<std::size_t>(0));
      if (j.contains("post_ids")) {
        for (const auto& pid : j.at("post_ids").get<std::vector<std::string>>()) {
          auto it = by_id.find(pid);
          if (it == by_id.end())
            throw ValidationError("topic " + t.topic_id + ": unknown post id " + pid + " (line " +
                                  std::to_string(line) + ")");
          t.posts.push_back(*it->second);
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("topic record: ") + e.what(), line);
    }
    try {
      t.ground_truth.validate();
    } catch (const ContractError& e) {
      throw ValidationError("topic " + t.topic_id + ": " + e.what() + " (line " +
                            std::to_string(line) + ")");
    }
    for (const Post& p : t.posts)
      if (!p.has_hashtag(t.hashtag))
        throw ValidationError("topic " + t.topic_id + ": post " + p.id +
                              " lacks the topic hashtag (line " + std::to_string(line) + ")");
    topics.push_back(std::move(t));
  });
  return topics;
}

inline void export_histories(const std::string& path, const std::vector<UserHistory>& histories) {
  jsonl::write_jsonl(path, histories, [](const UserHistory& h) {
    std::vector<std::string> post_ids;
    for (const Post& p : h.posts) post_ids.push_back(p.id);
    return nlohmann::json{{"user_id", h.user_id}, {"post_ids", post_ids}};
  });
}

// strict_range enforces the source dataset's 10..953 posts-per-user bound.
inline std::vector<UserHistory> import_histories(const std::string& path,
                                                 const std::vector<Post>& posts,
                                                 bool strict_range = false) {
  std::map<std::string, const Post*> by_id;
  for (const Post& p : posts) by_id[p.id] = &p;
  std::vector<UserHistory> out;
  jsonl::read_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    if (!j.contains("user_id")) throw ParseError("history record missing field 'user_id'", line);
    UserHistory h;
    try {
      h.user_id = j.at("user_id").get<std::string>();
      for (const auto& pid : j.at("post_ids").get<std::vector<std::string>>()) {
        auto it = by_id.find(pid);
        if (it == by_id.end())
          throw ValidationError("history " + h.user_id + ": unknown post id " + pid + " (line " +
                                std::to_string(line) + ")");
        h.posts.push_back(*it->second);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("history record: ") + e.what(), line);
    }
    if (h.posts.empty())
      throw ValidationError("history " + h.user_id + ": retained users need N_u >= 1 (line " +
                            std::to_string(line) + ")");
    if (strict_range && (h.posts.size() < 10 || h.posts.size() > 953))
      throw ValidationError("history " + h.user_id + ": " + std::to_string(h.posts.size()) +
                            " posts outside the 10..953 import range (line " +
                            std::to_string(line) + ")");
    std::stable_sort(h.posts.begin(), h.posts.end(),
                     [](const Post& a, const Post& b) { return a.timestamp < b.timestamp; });
    out.push_back(std::move(h));
  });
  return out;
}

inline void export_splits(const std::string& path, const SplitAssignment& splits) {
  std::ostringstream out;
  for (const auto& [id, split] : splits.assignment) out << id << "\t" << to_string(split) << "\n";
  binio::write_file_atomic(path, out.str());
}

inline SplitAssignment import_splits(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  SplitAssignment out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("splits line missing tab separator", line_no);
    auto split = parse_split(line.substr(tab + 1));
    if (!split) throw ParseError("unknown split name '" + line.substr(tab + 1) + "'", line_no);
    out.assignment[line.substr(0, tab)] = *split;
  }
  return out;
}

}  // namespace socialalign
