#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "invuq/error.hpp"

namespace invuq::gaap {

/// Words of a text, punctuation detached at word edges. Never empty and
/// never holds an empty token.
class TokenSequence {
 public:
  TokenSequence() = default;
  explicit TokenSequence(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (const auto& t : tokens_) {
      if (t.empty()) throw Error(ErrorKind::InvalidInput, "empty token");
    }
  }

  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  const std::string& operator[](std::size_t i) const { return tokens_[i]; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  auto begin() const { return tokens_.begin(); }
  auto end() const { return tokens_.end(); }

  bool operator==(const TokenSequence&) const = default;

 private:
  std::vector<std::string> tokens_;
};

inline bool is_edge_punct(unsigned char c) {
  return std::ispunct(c) && c != '_' && c != '\'' && c != '-' && c != '$' && c != '%' && c != '&';
}

inline bool is_punct_token(std::string_view t) {
  return !t.empty() && std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::ispunct(c); });
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline TokenSequence tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i) break;
    std::string_view word = text.substr(i, j - i);
    std::size_t lo = 0, hi = word.size();
    while (lo < hi && is_edge_punct(static_cast<unsigned char>(word[lo]))) ++lo;
    while (hi > lo && is_edge_punct(static_cast<unsigned char>(word[hi - 1]))) --hi;
    for (std::size_t k = 0; k < lo; ++k) out.emplace_back(1, word[k]);
    if (hi > lo) out.emplace_back(word.substr(lo, hi - lo));
    // A trailing "..." stays one token.
    if (hi < word.size()) {
      std::string_view tail = word.substr(hi);
      if (tail.find_first_not_of('.') == std::string_view::npos) {
        out.emplace_back(tail);
      } else {
        for (char c : tail) out.emplace_back(1, c);
      }
    }
    i = j;
  }
  if (out.empty()) throw Error(ErrorKind::InvalidInput, "text has no tokens");
  return TokenSequence(std::move(out));
}

inline std::string detokenize(const TokenSequence& seq) {
  static constexpr std::string_view closing = ".,;:!?)]}";
  static constexpr std::string_view opening = "([{";
  std::string out;
  bool attach_next = false;
  bool in_quote = false;
  for (const auto& t : seq) {
    bool attach = attach_next || out.empty();
    attach_next = false;
    if (t.size() == 1 && opening.find(t[0]) != std::string_view::npos) {
      attach_next = true;
    } else if (t == "\"") {
      if (in_quote) attach = true;
      else attach_next = true;
      in_quote = !in_quote;
    } else if (is_punct_token(t) && closing.find(t[0]) != std::string_view::npos) {
      attach = true;
    }
    if (!attach) out.push_back(' ');
    out += t;
  }
  return out;
}

}  // namespace invuq::gaap
