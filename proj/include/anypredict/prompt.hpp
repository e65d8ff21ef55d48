#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace anypredict::llm {

enum class PromptMode { describe, paraphrase5, correct, qa_categorical, qa_binary };

std::string_view to_string(PromptMode mode);

// prefix + body + suffix is the exact text sent to the model.
struct PromptBundle {
  std::string prefix;
  std::string body;
  std::string suffix;
  PromptMode mode = PromptMode::describe;

  std::string rendered() const { return prefix + body + suffix; }
};

// Instantiates the consolidation, augmentation, correction and QA-probe templates.
//
//   describe / paraphrase5: body is the linearized row.
//   correct: body is the previous paraphrase, `extra` the linearization of the
//            features that went missing; both are joined as the template shows.
//   qa_categorical / qa_binary: body is the generated description, `extra` the
//            feature name being probed; `schema_definition` is unused.
//
// Throws MissingCorrectionPayload when `extra` is required but absent.
PromptBundle build_prompt(PromptMode mode, std::string_view schema_definition,
                          std::string_view body,
                          std::optional<std::string_view> extra = std::nullopt);

// Inverse of build_prompt over rendered text. Used by the offline mock backend,
// which only ever sees the rendered prompt.
struct ParsedPrompt {
  PromptMode mode = PromptMode::describe;
  std::string schema_definition;
  std::string body;
  std::string extra;
};

std::optional<ParsedPrompt> parse_prompt(std::string_view rendered);

// Default sampling temperature per mode: diverse for generation, greedy for probes.
double default_temperature(PromptMode mode);

}  // namespace anypredict::llm
