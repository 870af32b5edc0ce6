#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <string_view>

namespace invuq::providers {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n\f\v";
  const auto lo = s.find_first_not_of(ws);
  if (lo == std::string_view::npos) return {};
  return s.substr(lo, s.find_last_not_of(ws) - lo + 1);
}

inline std::string_view strip_echo(std::string_view s, std::string_view question, std::string_view prompt) {
  question = trim(question);
  prompt = trim(prompt);
  for (;;) {
    const auto t = trim(s);
    // The full prompt first: it usually starts with the question.
    if (!prompt.empty() && t.substr(0, prompt.size()) == prompt) {
      s = t.substr(prompt.size());
    } else if (!question.empty() && t.substr(0, question.size()) == question) {
      s = t.substr(question.size());
    } else {
      return s;
    }
  }
}

inline std::string_view cut_formatting(std::string_view line) {
  static constexpr std::array<std::string_view, 3> markers{"[INST]", "[/INST]", "#"};
  std::size_t cut = line.size();
  for (auto m : markers) cut = std::min(cut, line.find(m));
  return line.substr(0, cut);
}

inline std::string clean_once(std::string_view raw, std::string_view question, std::string_view prompt) {
  std::string_view rest = strip_echo(raw, question, prompt);
  while (!rest.empty()) {
    const auto nl = rest.find('\n');
    const auto line = trim(cut_formatting(rest.substr(0, nl)));
    if (!line.empty()) return std::string(line);
    if (nl == std::string_view::npos) break;
    rest = rest.substr(nl + 1);
  }
  return {};
}

}  // namespace detail

/// Drops a leading echo of the question (or of the whole prompt, when given), cuts each line at the first
/// [INST], [/INST] or '#', and keeps the first non-empty trimmed line.
/// Repeated to a fixed point so cleaning a cleaned answer is a no-op (each
/// pass returns a substring, so this terminates). An empty result means the
/// model gave no usable answer.
inline std::string clean_response(std::string_view raw, std::string_view question, std::string_view prompt = {}) {
  std::string current = detail::clean_once(raw, question, prompt);
  for (;;) {
    std::string next = detail::clean_once(current, question, prompt);
    if (next == current) break;
    current = std::move(next);
  }
  return current;
}

}  // namespace invuq::providers
