#pragma once

// Okapi BM25 over an inverted index. Tokenization is whitespace/punctuation
// for Latin-script runs and character bigrams for contiguous CJK runs, so no
// external segmenter is needed for Chinese text.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "socialalign/errors.hpp"

namespace socialalign {

namespace unicode {

// Decodes one UTF-8 code point starting at `i`; advances `i`. Invalid bytes
// decode as U+FFFD and advance by one.
inline char32_t decode_utf8(std::string_view s, std::size_t& i) {
  const auto byte = [&](std::size_t j) { return static_cast<unsigned char>(s[j]); };
  const unsigned char b0 = byte(i);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  auto cont = [&](std::size_t j) { return j < s.size() && (byte(j) & 0xc0) == 0x80; };
  if ((b0 & 0xe0) == 0xc0 && cont(i + 1)) {
    char32_t cp = (b0 & 0x1f) << 6 | (byte(i + 1) & 0x3f);
    i += 2;
    return cp;
  }
  if ((b0 & 0xf0) == 0xe0 && cont(i + 1) && cont(i + 2)) {
    char32_t cp = (b0 & 0x0f) << 12 | (byte(i + 1) & 0x3f) << 6 | (byte(i + 2) & 0x3f);
    i += 3;
    return cp;
  }
  if ((b0 & 0xf8) == 0xf0 && cont(i + 1) && cont(i + 2) && cont(i + 3)) {
    char32_t cp = (b0 & 0x07) << 18 | (byte(i + 1) & 0x3f) << 12 | (byte(i + 2) & 0x3f) << 6 |
                  (byte(i + 3) & 0x3f);
    i += 4;
    return cp;
  }
  ++i;
  return 0xfffd;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

inline bool is_cjk(char32_t cp) {
  return (cp >= 0x4e00 && cp <= 0x9fff) ||   // CJK Unified Ideographs
         (cp >= 0x3400 && cp <= 0x4dbf) ||   // Extension A
         (cp >= 0xf900 && cp <= 0xfaff) ||   // Compatibility Ideographs
         (cp >= 0x3040 && cp <= 0x30ff) ||   // Hiragana + Katakana
         (cp >= 0xac00 && cp <= 0xd7af) ||   // Hangul syllables
         (cp >= 0x20000 && cp <= 0x2ffff);   // Extensions B+
}

inline bool is_latin_word_char(char32_t cp) {
  return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') ||
         cp == '_' || cp == '#';
}

}  // namespace unicode

// Lowercased terms: Latin runs split on whitespace/punctuation, CJK runs as
// character bigrams (a lone CJK character stands by itself).
inline std::vector<std::string> tokenize_text(std::string_view text) {
  std::vector<std::string> terms;
  std::string latin;
  std::vector<char32_t> cjk_run;

  auto flush_latin = [&] {
    if (!latin.empty()) {
      terms.push_back(latin);
      latin.clear();
    }
  };
  auto flush_cjk = [&] {
    if (cjk_run.size() == 1) {
      std::string t;
      unicode::append_utf8(t, cjk_run[0]);
      terms.push_back(t);
    } else {
      for (std::size_t i = 0; i + 1 < cjk_run.size(); ++i) {
        std::string t;
        unicode::append_utf8(t, cjk_run[i]);
        unicode::append_utf8(t, cjk_run[i + 1]);
        terms.push_back(t);
      }
    }
    cjk_run.clear();
  };

  std::size_t i = 0;
  while (i < text.size()) {
    const char32_t cp = unicode::decode_utf8(text, i);
    if (unicode::is_cjk(cp)) {
      flush_latin();
      cjk_run.push_back(cp);
    } else if (unicode::is_latin_word_char(cp)) {
      flush_cjk();
      latin.push_back(cp >= 'A' && cp <= 'Z' ? static_cast<char>(cp - 'A' + 'a')
                                             : static_cast<char>(cp));
    } else {
      flush_latin();
      flush_cjk();
    }
  }
  flush_latin();
  flush_cjk();
  return terms;
}

struct RetrievalHit {
  std::size_t doc_id;
  double score;
};

struct RetrievalResult {
  std::vector<RetrievalHit> hits;  // score descending, ties by ascending doc id
};

class Bm25Index {
 public:
  Bm25Index() = default;

  // k1 > 0, b in [0,1]. Statistics are exact over the given corpus.
  static Bm25Index build(const std::vector<std::string>& docs, double k1 = 1.2, double b = 0.75) {
    if (k1 <= 0.0) throw ContractError("bm25: k1 must be positive");
    if (b < 0.0 || b > 1.0) throw ContractError("bm25: b must lie in [0,1]");
    Bm25Index index;
    index.k1_ = k1;
    index.b_ = b;
    index.doc_len_.reserve(docs.size());
    double total_len = 0.0;
    for (std::size_t id = 0; id < docs.size(); ++id) {
      auto terms = tokenize_text(docs[id]);
      std::unordered_map<std::string, std::uint32_t> tf;
      for (const auto& t : terms) ++tf[t];
      for (const auto& [term, count] : tf) {
        auto& posting = index.postings_[term];
        posting.push_back({id, count});
        // postings stay sorted by doc id because ids arrive in order
      }
      index.doc_len_.push_back(terms.size());
      total_len += static_cast<double>(terms.size());
    }
    index.avg_len_ = docs.empty() ? 0.0 : total_len / static_cast<double>(docs.size());
    return index;
  }

  std::size_t doc_count() const { return doc_len_.size(); }
  double average_doc_length() const { return avg_len_; }
  std::size_t doc_length(std::size_t id) const { return doc_len_.at(id); }

  std::size_t document_frequency(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
  }

  // Non-negative IDF variant: ln((N - n + 0.5)/(n + 0.5) + 1).
  double idf(const std::string& term) const {
    const double n = static_cast<double>(document_frequency(term));
    const double N = static_cast<double>(doc_count());
    return std::log((N - n + 0.5) / (n + 0.5) + 1.0);
  }

  // Contribution of one term occurrence count, given the document length.
  double term_score(double idf_value, double tf, double doc_len) const {
    const double denom = tf + k1_ * (1.0 - b_ + b_ * doc_len / (avg_len_ > 0.0 ? avg_len_ : 1.0));
    return idf_value * tf * (k1_ + 1.0) / denom;
  }

  double score(const std::vector<std::string>& query_terms, std::size_t doc_id) const {
    // exhaustive per-document scoring; used by the brute-force oracle too
    std::unordered_map<std::string, std::uint32_t> qtf;
    for (const auto& t : query_terms) ++qtf[t];
    double s = 0.0;
    for (const auto& [term, qcount] : qtf) {
      (void)qcount;  // BM25 without query-frequency weighting
      auto it = postings_.find(term);
      if (it == postings_.end()) continue;
      const auto& plist = it->second;
      auto pit = std::lower_bound(plist.begin(), plist.end(), doc_id,
                                  [](const Posting& p, std::size_t id) { return p.doc_id < id; });
      if (pit == plist.end() || pit->doc_id != doc_id) continue;
      s += term_score(idf(term), static_cast<double>(pit->tf), static_cast<double>(doc_len_[doc_id]));
    }
    return s;
  }

  // Top-k by (score desc, doc id asc); documents with no matching term are
  // omitted, so the result may hold fewer than k entries.
  RetrievalResult retrieve_topk(const std::string& query, std::size_t k) const {
    if (k == 0) throw ContractError("bm25: k must be >= 1");
    std::unordered_map<std::size_t, double> scores;
    std::unordered_map<std::string, bool> seen;
    for (const auto& term : tokenize_text(query)) {
      if (seen[term]) continue;
      seen[term] = true;
      auto it = postings_.find(term);
      if (it == postings_.end()) continue;
      const double w = idf(term);
      for (const Posting& p : it->second)
        scores[p.doc_id] += term_score(w, static_cast<double>(p.tf),
                                       static_cast<double>(doc_len_[p.doc_id]));
    }
    std::vector<RetrievalHit> hits;
    hits.reserve(scores.size());
    for (const auto& [id, s] : scores)
      if (s > 0.0) hits.push_back({id, s});
    std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.doc_id < b.doc_id;
    });
    if (hits.size() > k) hits.resize(k);
    return {std::move(hits)};
  }

 private:
  struct Posting {
    std::size_t doc_id;
    std::uint32_t tf;
  };
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::vector<std::size_t> doc_len_;
  double avg_len_ = 0.0;
  double k1_ = 1.2, b_ = 0.75;
};

constexpr std::size_t kDefaultRetrievalTopK = 5;

}  // namespace socialalign
