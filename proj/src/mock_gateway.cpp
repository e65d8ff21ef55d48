#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "anypredict/gateway.hpp"

namespace anypredict::llm {

namespace {

constexpr std::array<std::string_view, 4> kKinds = {"categorical", "binary", "numerical", "text"};
constexpr std::array<std::string_view, 5> kOpeners = {"", "To summarize, ", "In other words, ",
                                                      "Put differently, ", "Restated, "};

std::vector<std::string> split(std::string_view s, std::string_view sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + sep.size();
  }
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> schema_names(std::string_view definition) {
  std::vector<std::string> names;
  for (const auto& line : split(definition, "\n")) {
    std::size_t best = std::string::npos;
    for (auto kind : kKinds) {
      const auto pos = line.find("(" + std::string(kind) + "): ");
      best = std::min(best, pos);
    }
    if (best != std::string::npos && best > 0) names.push_back(line.substr(0, best));
  }
  // Longest first so "tumor size" wins over "tumor".
  std::stable_sort(names.begin(), names.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });
  return names;
}

std::string sentence(const std::string& segment, const std::vector<std::string>& names) {
  for (const auto& name : names) {
    if (segment == name) return "The patient has " + name + ".";
    if (segment.size() > name.size() + 1 && segment.starts_with(name) && segment[name.size()] == ' ')
      return "The " + name + " is " + segment.substr(name.size() + 1) + ".";
  }
  const auto space = segment.rfind(' ');
  if (names.empty() && space != std::string::npos)
    return "The " + segment.substr(0, space) + " is " + segment.substr(space + 1) + ".";
  return "The patient has " + segment + ".";
}

std::vector<std::string> describe(std::string_view linearization, const std::vector<std::string>& names,
                                  bool lossy) {
  auto segments = split(linearization, "; ");
  if (lossy && segments.size() > 1) segments.pop_back();
  std::vector<std::string> out;
  for (const auto& s : segments)
    if (!s.empty()) out.push_back(sentence(s, names));
  return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += sep;
    out += p;
  }
  return out;
}

std::string paraphrase5(std::vector<std::string> sentences) {
  std::string out;
  for (std::size_t j = 0; j < kOpeners.size(); ++j) {
    auto rotated = sentences;
    if (!rotated.empty()) std::rotate(rotated.begin(), rotated.begin() + j % rotated.size(), rotated.end());
    std::string text = join(rotated, " ");
    if (!kOpeners[j].empty() && !text.empty()) {
      text[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(text[0])));
      text = std::string(kOpeners[j]) + text;
    }
    if (!out.empty()) out += '\n';
    out += std::to_string(j + 1) + ". " + text;
  }
  return out;
}

// Text after position `from` up to the end of its sentence.
std::string sentence_tail(std::string_view text, std::size_t from) {
  auto rest = text.substr(from);
  auto end = rest.find(". ");
  if (end == std::string_view::npos) end = rest.size();
  auto answer = rest.substr(0, end);
  while (!answer.empty() && (answer.back() == '.' || answer.back() == ' ')) answer.remove_suffix(1);
  return std::string(answer);
}

std::string answer_value(std::string_view description, std::string_view feature) {
  const auto hay = lower(description);
  const auto name = lower(feature);
  const std::string pattern = "the " + name + " is ";
  if (auto pos = hay.find(pattern); pos != std::string::npos)
    return sentence_tail(description, pos + pattern.size());
  if (auto pos = hay.find(name); pos != std::string::npos) {
    auto from = pos + name.size();
    for (std::string_view joiner : {" is ", ": ", " "}) {
      if (hay.compare(from, joiner.size(), joiner) == 0) {
        from += joiner.size();
        break;
      }
    }
    return sentence_tail(description, from);
  }
  return "unknown";
}

}  // namespace

std::string MockGateway::complete(const CompletionRequest& request) {
  const auto parsed = parse_prompt(request.rendered_prompt);
  if (!parsed) return "I am unable to describe this input.";
  const auto names = schema_names(parsed->schema_definition);
  switch (parsed->mode) {
    case PromptMode::describe:
      return join(describe(parsed->body, names, lossy_), " ");
    case PromptMode::paraphrase5:
      return paraphrase5(describe(parsed->body, names, lossy_));
    case PromptMode::correct: {
      auto text = parsed->body;
      const auto missed = join(describe(parsed->extra, names, false), " ");
      if (!missed.empty()) text += (text.empty() ? "" : " ") + missed;
      return text;
    }
    case PromptMode::qa_categorical:
      return answer_value(parsed->body, parsed->extra);
    case PromptMode::qa_binary:
      return lower(parsed->body).find(lower(parsed->extra)) != std::string::npos ? "yes" : "no";
  }
  return {};
}

}  // namespace anypredict::llm
