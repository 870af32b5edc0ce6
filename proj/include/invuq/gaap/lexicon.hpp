#pragma once

#include <array>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "invuq/error.hpp"
#include "invuq/gaap/text.hpp"

namespace invuq::gaap {

enum class Relation { Synonym, Hypernym, Hyponym };

inline Relation parse_relation(std::string_view s) {
  if (s == "syn") return Relation::Synonym;
  if (s == "hyper") return Relation::Hypernym;
  if (s == "hypo") return Relation::Hyponym;
  throw Error(ErrorKind::InvalidInput, "unknown lexicon relation '" + std::string(s) + "'");
}

/// Substitutes per word, keyed case-insensitively. Deletion is not stored;
/// callers add it.
class SubstitutionLexicon {
 public:
  void add(std::string_view word, Relation rel, std::string alternative) {
    for (auto& c : alternative) {
      if (c == ' ') c = '_';
    }
    const std::string key = to_lower(word);
    if (alternative.empty() || to_lower(alternative) == key) return;
    auto& bucket = entries_[key][static_cast<std::size_t>(rel)];
    for (const auto& a : bucket) {
      if (a == alternative) return;
    }
    bucket.push_back(std::move(alternative));
  }

  /// Synonyms, then hypernyms, then hyponyms, without repeats.
  std::vector<std::string> alternatives(std::string_view word) const {
    std::vector<std::string> out;
    auto it = entries_.find(to_lower(word));
    if (it == entries_.end()) return out;
    for (const auto& bucket : it->second) {
      for (const auto& a : bucket) {
        if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
      }
    }
    return out;
  }

  const std::vector<std::string>& of(std::string_view word, Relation rel) const {
    static const std::vector<std::string> none;
    auto it = entries_.find(to_lower(word));
    return it == entries_.end() ? none : it->second[static_cast<std::size_t>(rel)];
  }

  bool contains(std::string_view word) const { return entries_.count(to_lower(word)) > 0; }
  std::size_t size() const { return entries_.size(); }

  /// One `word<TAB>relation<TAB>alternative` record per line; blank lines
  /// and lines starting with '#' are skipped.
  static SubstitutionLexicon parse(std::istream& in, const std::string& source = "lexicon") {
    SubstitutionLexicon lex;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      std::vector<std::string> fields;
      std::stringstream ss(line);
      std::string f;
      while (std::getline(ss, f, '\t')) fields.push_back(f);
      if (fields.size() != 3 || fields[0].empty() || fields[2].empty()) {
        throw Error(ErrorKind::InvalidInput, source + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
      }
      try {
        lex.add(fields[0], parse_relation(fields[1]), fields[2]);
      } catch (const Error& e) {
        throw Error(ErrorKind::InvalidInput, source + ":" + std::to_string(lineno) + ": " + e.message());
      }
    }
    return lex;
  }

  static SubstitutionLexicon load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Config, "cannot open lexicon " + path);
    return parse(in, path);
  }

 private:
  std::map<std::string, std::array<std::vector<std::string>, 3>> entries_;
};

}  // namespace invuq::gaap
