#pragma once

// Byte-level tokenization: ids 0..255 are raw bytes, 256..259 are specials.
// Language-neutral and asset-free, which matters because the source data is
// Chinese while the synthetic corpus is ASCII.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "socialalign/errors.hpp"
#include "socialalign/persona.hpp"

namespace socialalign::tok {

constexpr int kPad = 256;
constexpr int kSep = 257;       // boundary between prompt and response
constexpr int kEos = 258;       // end of response
constexpr int kReserved = 259;  // unassigned
constexpr std::size_t kVocabSize = 260;

inline std::vector<int> encode_bytes(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

// Decodes byte tokens; stops at the first EOS and skips other specials.
inline std::string decode_bytes(const std::vector<int>& tokens) {
  std::string out;
  for (int id : tokens) {
    if (id == kEos) break;
    if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
  }
  return out;
}

}  // namespace socialalign::tok

namespace socialalign {

// Ordered segments: persona | history | news | separator | response.
// Boundary indices are cumulative offsets into `tokens`.
struct PromptSequence {
  std::vector<int> tokens;
  std::size_t persona_end = 0;  // persona = [0, persona_end)
  std::size_t history_end = 0;  // history = [persona_end, history_end)
  std::size_t news_end = 0;     // news    = [history_end, news_end)
  std::size_t sep_end = 0;      // separator = [news_end, sep_end), always 1 token
  bool has_response = false;    // response (+ eos) = [sep_end, tokens.size())

  std::size_t size() const { return tokens.size(); }
  std::size_t response_begin() const { return sep_end; }

  std::vector<std::size_t> news_rows() const {
    std::vector<std::size_t> rows;
    for (std::size_t i = history_end; i < news_end; ++i) rows.push_back(i);
    return rows;
  }
  std::vector<std::size_t> user_rows() const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < history_end; ++i) rows.push_back(i);
    return rows;
  }

  void check_invariants(std::size_t context) const {
    if (!(persona_end <= history_end && history_end < news_end && news_end < sep_end &&
          sep_end <= tokens.size()))
      throw ContractError("prompt sequence: segment boundaries out of order");
    if (tokens.size() > context)
      throw LengthError("prompt sequence: " + std::to_string(tokens.size()) +
                        " tokens exceed context " + std::to_string(context));
  }
};

// Deterministic prompt assembly. History posts are joined oldest-first with
// newlines; when the sequence exceeds the context the oldest posts are
// dropped first, and a LengthError is raised only if it still does not fit
// with the history gone.
inline PromptSequence build_prompt(const Persona* persona, const std::vector<Post>& history,
                                   const std::string& news, const std::optional<std::string>& response,
                                   std::size_t context) {
  if (news.empty()) throw ContractError("build_prompt: news text must be nonempty");

  const std::string persona_text = persona ? persona_to_text(*persona) : std::string();
  std::vector<int> persona_ids = tok::encode_bytes(persona_text);
  std::vector<int> news_ids = tok::encode_bytes(news);
  std::vector<int> response_ids;
  if (response) {
    response_ids = tok::encode_bytes(*response);
    response_ids.push_back(tok::kEos);
  }

  std::size_t drop = 0;  // oldest history posts skipped
  while (true) {
    std::string history_text;
    for (std::size_t i = drop; i < history.size(); ++i) {
      if (i > drop) history_text += '\n';
      history_text += history[i].text;
    }
    std::vector<int> history_ids = tok::encode_bytes(history_text);

    const std::size_t total =
        persona_ids.size() + history_ids.size() + news_ids.size() + 1 + response_ids.size();
    if (total > context) {
      if (drop < history.size()) {
        ++drop;
        continue;
      }
      throw LengthError("build_prompt: " + std::to_string(total) +
                        " tokens exceed context " + std::to_string(context) +
                        " even with history dropped");
    }

    PromptSequence seq;
    seq.tokens.reserve(total);
    seq.tokens.insert(seq.tokens.end(), persona_ids.begin(), persona_ids.end());
    seq.persona_end = seq.tokens.size();
    seq.tokens.insert(seq.tokens.end(), history_ids.begin(), history_ids.end());
    seq.history_end = seq.tokens.size();
    seq.tokens.insert(seq.tokens.end(), news_ids.begin(), news_ids.end());
    seq.news_end = seq.tokens.size();
    seq.tokens.push_back(tok::kSep);
    seq.sep_end = seq.tokens.size();
    seq.tokens.insert(seq.tokens.end(), response_ids.begin(), response_ids.end());
    seq.has_response = response.has_value();
    seq.check_invariants(context);
    return seq;
  }
}

}  // namespace socialalign
