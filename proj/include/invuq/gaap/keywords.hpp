#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "invuq/error.hpp"
#include "invuq/gaap/text.hpp"

namespace invuq::gaap {

/// Returns token positions, most important first.
using KeywordExtractor = std::function<std::vector<std::size_t>(const TokenSequence&)>;

namespace detail {

inline const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words{
      "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are", "as", "at",
      "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could",
      "did", "do", "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has",
      "have", "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if",
      "in", "into", "is", "it", "its", "itself", "just", "me", "might", "more", "most", "must", "my",
      "myself", "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours",
      "ourselves", "out", "over", "own", "same", "shall", "she", "should", "so", "some", "such", "than",
      "that", "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this",
      "those", "through", "to", "too", "under", "until", "up", "very", "was", "we", "were", "what", "when",
      "where", "which", "while", "who", "whom", "whose", "why", "will", "with", "would", "you", "your",
      "yours", "yourself", "yourselves", "'s", "s", "t", "also", "many", "much"};
  return words;
}

// Common English content words, most frequent first. Anything absent is
// treated as rarer than all of them.
inline const std::unordered_map<std::string, int>& frequency_rank() {
  static const std::unordered_map<std::string, int> table = [] {
    static constexpr std::string_view words[] = {
        "one", "time", "people", "year", "years", "first", "new", "two", "like", "made", "make", "way", "well",
        "said", "get", "day", "used", "know", "see", "go", "back", "good", "three", "even", "world", "life",
        "take", "last", "long", "name", "called", "state", "great", "number", "known", "part", "second",
        "place", "work", "come", "came", "became", "become", "later", "found", "use", "left", "end", "city",
        "high", "country", "old", "best", "small", "large", "war", "house", "family", "government", "home",
        "water", "four", "five", "area", "school", "system", "group", "set", "right", "named", "began",
        "since", "based", "born", "won", "team", "member", "members", "game", "song", "album", "film",
        "series", "season", "show", "book", "music", "band", "national", "united", "states", "american",
        "english", "british", "following", "early", "late", "main", "local", "public", "general", "major",
        "total", "play", "played", "player", "record", "released", "written", "wrote", "took", "given", "give",
        "find", "think", "thing", "things", "man", "woman", "men", "women", "child", "children", "week",
        "month", "months", "today", "around", "word", "words", "answer", "question", "result", "value",
        "amount", "need", "want", "look", "still", "every", "another", "different", "several", "without",
        "within", "along", "among", "often", "usually", "however", "per", "half", "third", "fifth", "fourth",
        "sixth", "next", "least", "less", "better", "big", "little", "top", "far", "near", "human", "body",
        "power", "company", "president", "king", "queen", "church", "party", "north", "south", "east", "west",
        "river", "island", "york", "london", "france", "french", "german", "germany", "china", "india",
        "capital", "language", "history", "century", "money", "price", "buy", "sell", "cost", "pay"};
    std::unordered_map<std::string, int> t;
    int rank = 0;
    for (auto w : words) t.emplace(std::string(w), rank++);
    return t;
  }();
  return table;
}

inline bool is_number(std::string_view t) {
  bool digit = false;
  for (unsigned char c : t) {
    if (std::isdigit(c)) digit = true;
    else if (c != '.' && c != ',' && c != '-' && c != '%' && c != '$') return false;
  }
  return digit;
}

// Higher is more important. Unknown words outrank every known one.
inline double keyword_score(std::string_view token) {
  if (is_punct_token(token)) return -3.0;
  const std::string lower = to_lower(token);
  if (stopwords().count(lower)) return -2.0;
  if (is_number(token)) return -1.0;
  const auto& freq = frequency_rank();
  auto it = freq.find(lower);
  return it == freq.end() ? 1e6 : static_cast<double>(it->second);
}

}  // namespace detail

/// Scores tokens by rarity against a bundled frequency list, ranks stopwords,
/// numbers and punctuation last; ties prefer longer, then earlier, tokens.
inline std::vector<std::size_t> default_keyword_ranking(const TokenSequence& text) {
  std::vector<std::size_t> order(text.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> score(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) score[i] = detail::keyword_score(text[i]);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    if (text[a].size() != text[b].size()) return text[a].size() > text[b].size();
    return a < b;
  });
  return order;
}

inline std::size_t keyword_count(std::size_t tokens, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw Error(ErrorKind::InvalidInput, "keyword ratio must be in (0, 1]");
  return std::max<std::size_t>(1, static_cast<std::size_t>(ratio * static_cast<double>(tokens)));
}

struct Keyword {
  std::size_t index;
  std::string token;
  bool operator==(const Keyword&) const = default;
};

/// max(1, int(ratio * p)) distinct positions in extractor order. A failing
/// or short extractor is completed from the default ranking.
inline std::vector<Keyword> select_keywords(const TokenSequence& text, double ratio,
                                            const KeywordExtractor& extractor = {}) {
  const std::size_t q = std::min(keyword_count(text.size(), ratio), text.size());
  std::vector<std::size_t> ranked;
  if (extractor) {
    try {
      ranked = extractor(text);
    } catch (const std::exception& e) {
      warn(std::string("keyword extractor failed, using default ranking: ") + e.what());
      ranked.clear();
    }
  }
  std::vector<Keyword> out;
  std::vector<bool> taken(text.size(), false);
  auto take = [&](std::size_t i) {
    if (i < text.size() && !taken[i] && out.size() < q) {
      taken[i] = true;
      out.push_back({i, text[i]});
    }
  };
  for (std::size_t i : ranked) take(i);
  for (std::size_t i : default_keyword_ranking(text)) take(i);
  return out;
}

}  // namespace invuq::gaap
