#include "anypredict/prompt.hpp"

#include "anypredict/error.hpp"

namespace anypredict::llm {

namespace {

constexpr std::string_view kSchemaHead = "\nHere is the schema definition of the table: \n\n";
constexpr std::string_view kSampleHead = " \n\nThis is a sample from the table:\n\n";
constexpr std::string_view kDescribeTail = "\n\nPlease describe the sample using natural language.\n";
constexpr std::string_view kParaphraseTail =
    "\n\nPlease paraphrase the sample in 5 different ways in natural language.\n";
constexpr std::string_view kCorrectHead = " \n\nPlease paraphrase the following in natural language.\n\n";
constexpr std::string_view kCorrectJoin = " + ";
constexpr std::string_view kQaHead = "\n";
constexpr std::string_view kQaCategoricalHead = "\n\nWhat is the value of ";
constexpr std::string_view kQaCategoricalTail = "?\n";
constexpr std::string_view kQaBinaryHead = "\n\nIs ";
constexpr std::string_view kQaBinaryTail = " present in the above paragraph? (a) yes (b) no. \n";

std::string cat(std::initializer_list<std::string_view> parts) {
  std::string out;
  for (auto p : parts) out += p;
  return out;
}

std::string_view require(std::optional<std::string_view> extra) {
  if (!extra) throw MissingCorrectionPayload();
  return *extra;
}

}  // namespace

std::string_view to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::describe: return "describe";
    case PromptMode::paraphrase5: return "paraphrase5";
    case PromptMode::correct: return "correct";
    case PromptMode::qa_categorical: return "qa_categorical";
    case PromptMode::qa_binary: return "qa_binary";
  }
  return "describe";
}

double default_temperature(PromptMode mode) {
  return mode == PromptMode::qa_categorical || mode == PromptMode::qa_binary ? 0.0 : 0.7;
}

PromptBundle build_prompt(PromptMode mode, std::string_view schema_definition,
                          std::string_view body, std::optional<std::string_view> extra) {
  PromptBundle b;
  b.mode = mode;
  switch (mode) {
    case PromptMode::describe:
    case PromptMode::paraphrase5:
      b.prefix = cat({kSchemaHead, schema_definition, kSampleHead});
      b.body = std::string(body);
      b.suffix = std::string(mode == PromptMode::describe ? kDescribeTail : kParaphraseTail);
      break;
    case PromptMode::correct:
      b.prefix = cat({kSchemaHead, schema_definition, kCorrectHead});
      b.body = cat({body, kCorrectJoin, require(extra)});
      b.suffix = "\n";
      break;
    case PromptMode::qa_categorical:
      b.prefix = std::string(kQaHead);
      b.body = std::string(body);
      b.suffix = cat({kQaCategoricalHead, require(extra), kQaCategoricalTail});
      break;
    case PromptMode::qa_binary:
      b.prefix = std::string(kQaHead);
      b.body = std::string(body);
      b.suffix = cat({kQaBinaryHead, require(extra), kQaBinaryTail});
      break;
  }
  return b;
}

std::optional<ParsedPrompt> parse_prompt(std::string_view text) {
  ParsedPrompt p;
  if (text.starts_with(kSchemaHead)) {
    text.remove_prefix(kSchemaHead.size());
    if (text.ends_with(kDescribeTail) || text.ends_with(kParaphraseTail)) {
      const bool describe = text.ends_with(kDescribeTail);
      text.remove_suffix(describe ? kDescribeTail.size() : kParaphraseTail.size());
      const auto split = text.rfind(kSampleHead);
      if (split == std::string_view::npos) return std::nullopt;
      p.mode = describe ? PromptMode::describe : PromptMode::paraphrase5;
      p.schema_definition = std::string(text.substr(0, split));
      p.body = std::string(text.substr(split + kSampleHead.size()));
      return p;
    }
    const auto split = text.find(kCorrectHead);
    if (split == std::string_view::npos || !text.ends_with("\n")) return std::nullopt;
    p.mode = PromptMode::correct;
    p.schema_definition = std::string(text.substr(0, split));
    auto payload = text.substr(split + kCorrectHead.size());
    payload.remove_suffix(1);
    // Prefer a join right after a sentence end; the missed linearization may itself hold " + ".
    auto join = payload.find(std::string(".") + std::string(kCorrectJoin));
    if (join != std::string_view::npos) ++join;
    else join = payload.rfind(kCorrectJoin);
    if (join == std::string_view::npos) return std::nullopt;
    p.body = std::string(payload.substr(0, join));
    p.extra = std::string(payload.substr(join + kCorrectJoin.size()));
    return p;
  }
  if (!text.starts_with(kQaHead)) return std::nullopt;
  text.remove_prefix(kQaHead.size());
  if (text.ends_with(kQaBinaryTail)) {
    text.remove_suffix(kQaBinaryTail.size());
    const auto split = text.rfind(kQaBinaryHead);
    if (split == std::string_view::npos) return std::nullopt;
    p.mode = PromptMode::qa_binary;
    p.body = std::string(text.substr(0, split));
    p.extra = std::string(text.substr(split + kQaBinaryHead.size()));
    return p;
  }
  if (text.ends_with(kQaCategoricalTail)) {
    text.remove_suffix(kQaCategoricalTail.size());
    const auto split = text.rfind(kQaCategoricalHead);
    if (split == std::string_view::npos) return std::nullopt;
    p.mode = PromptMode::qa_categorical;
    p.body = std::string(text.substr(0, split));
    p.extra = std::string(text.substr(split + kQaCategoricalHead.size()));
    return p;
  }
  return std::nullopt;
}

}  // namespace anypredict::llm
