#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "invuq/error.hpp"
#include "invuq/providers/provider.hpp"

namespace invuq::pipeline {

using json = nlohmann::json;

struct DatasetItem {
  std::string id;
  std::string question;
  std::string reference;
  std::string category = "qa";  // qa, multiple-choice, math
  std::vector<std::string> choices;
};

inline std::string render_choices(const std::vector<std::string>& choices) {
  std::string out;
  for (std::size_t k = 0; k < choices.size(); ++k) {
    if (k) out += ' ';
    out += '(';
    out += static_cast<char>('A' + static_cast<int>(k % 26));
    out += ") " + choices[k];
  }
  return out;
}

/// Prompt for `question` (the original or a perturbation) under the item's
/// category template.
inline std::string render_prompt(const DatasetItem& item, const std::string& question,
                                 const providers::PromptTemplates& templates) {
  return providers::render(templates.for_category(item.category),
                           {{"question", question}, {"choices", render_choices(item.choices)}});
}

/// One JSON object per line with keys id, question, answer, and optionally
/// category and choices. Blank lines are ignored.
inline std::vector<DatasetItem> parse_dataset(std::istream& in, const std::string& source = "dataset") {
  std::vector<DatasetItem> items;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw Error(ErrorKind::InvalidInput, source + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) fail("expected a JSON object");
    auto text = [&](const char* key, bool required) -> std::string {
      if (!j.contains(key) || j[key].is_null()) {
        if (required) fail(std::string("missing '") + key + "'");
        return {};
      }
      if (j[key].is_number()) return j[key].dump();
      if (!j[key].is_string()) fail(std::string("'") + key + "' must be a string");
      return j[key].get<std::string>();
    };
    DatasetItem item;
    item.id = text("id", true);
    item.question = text("question", true);
    item.reference = text("answer", true);
    if (j.contains("category")) item.category = text("category", true);
    if (item.id.empty()) fail("empty id");
    if (item.question.empty()) fail("empty question");
    if (item.reference.empty()) fail("empty answer");
    if (item.category != "qa" && item.category != "multiple-choice" && item.category != "math") {
      fail("unknown category '" + item.category + "'");
    }
    if (j.contains("choices")) {
      if (!j["choices"].is_array()) fail("'choices' must be an array");
      for (const auto& c : j["choices"]) {
        if (!c.is_string()) fail("choices must be strings");
        item.choices.push_back(c.get<std::string>());
      }
    }
    if (item.category == "multiple-choice" && item.choices.empty()) fail("multiple-choice item without choices");
    if (!ids.insert(item.id).second) fail("duplicate id '" + item.id + "'");
    items.push_back(std::move(item));
  }
  return items;
}

inline std::vector<DatasetItem> ingest_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open dataset " + path);
  return parse_dataset(in, path);
}

}  // namespace invuq::pipeline
