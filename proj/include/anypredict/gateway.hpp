#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include "anypredict/prompt.hpp"

namespace anypredict::llm {

struct CompletionRequest {
  std::string rendered_prompt;
  double temperature = 0.7;
  int max_tokens = 512;
  std::optional<std::int64_t> seed_hint;
};

CompletionRequest make_request(const PromptBundle& prompt, int max_tokens = 512);

// SHA-256 over (rendered_prompt, temperature, max_tokens); the cache key.
std::string request_digest(const CompletionRequest& request);

enum class Backend { live, replay, mock };

std::string_view to_string(Backend backend);
Backend parse_backend(std::string_view name);

struct GatewayConfig {
  Backend backend = Backend::mock;
  std::optional<std::string> endpoint_url;
  // live/mock: completions are appended here when set. replay: read from here.
  std::optional<std::filesystem::path> cache_path;
  std::chrono::milliseconds request_timeout{60'000};
  int max_retries = 3;
  double rate_limit = 0.0;  // requests per second; 0 disables throttling
  std::string model = "gpt-3.5-turbo-0301";
  std::string api_key_env = "ANYPRED_API_KEY";
  std::chrono::milliseconds initial_backoff{1'000};
  // Mock only: drop the final linearized segment when describing or paraphrasing.
  bool lossy_mock = false;
};

// Throws ConfigError: live needs endpoint_url, replay needs cache_path.
void validate(const GatewayConfig& config);

class Gateway {
 public:
  virtual ~Gateway() = default;
  // Safe for concurrent callers.
  virtual std::string complete(const CompletionRequest& request) = 0;
};

// Deterministic offline backend. Describes each "; " segment of the linearization
// as "The {name} is {value}." (bare binary segments as "The patient has {name}."),
// emits five rotated numbered variants for paraphrase prompts, appends the missed
// features for correction prompts, and answers QA probes by scanning the text.
class MockGateway final : public Gateway {
 public:
  explicit MockGateway(bool lossy = false) : lossy_(lossy) {}
  std::string complete(const CompletionRequest& request) override;

 private:
  bool lossy_;
};

// JSON Lines of {digest, request, response, timestamp}; one line per write.
class CompletionCache {
 public:
  explicit CompletionCache(std::filesystem::path path);

  std::optional<std::string> find(const std::string& digest) const;
  // No-op when the digest is already cached.
  void append(const CompletionRequest& request, const std::string& response);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::string> entries_;
};

class ReplayGateway final : public Gateway {
 public:
  explicit ReplayGateway(const std::filesystem::path& cache_path) : cache_(cache_path) {}
  std::string complete(const CompletionRequest& request) override;

 private:
  CompletionCache cache_;
};

class RecordingGateway final : public Gateway {
 public:
  RecordingGateway(std::unique_ptr<Gateway> inner, const std::filesystem::path& cache_path)
      : inner_(std::move(inner)), cache_(cache_path) {}
  std::string complete(const CompletionRequest& request) override;

 private:
  std::unique_ptr<Gateway> inner_;
  CompletionCache cache_;
};

// Spaces dispatches at least 1/rate seconds apart.
class TokenBucket {
 public:
  explicit TokenBucket(double rate_per_second) : rate_(rate_per_second) {}
  void acquire();

 private:
  double rate_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point next_{};
};

// Chat-completions over HTTP(S) with bearer auth, retries and exponential backoff.
class LiveGateway final : public Gateway {
 public:
  explicit LiveGateway(GatewayConfig config);
  std::string complete(const CompletionRequest& request) override;

 private:
  GatewayConfig config_;
  std::string base_;  // scheme://host[:port]
  std::string path_;
  TokenBucket bucket_;
};

std::unique_ptr<Gateway> make_gateway(const GatewayConfig& config);

// One-shot convenience over make_gateway.
std::string complete(const CompletionRequest& request, const GatewayConfig& config);

}  // namespace anypredict::llm
