#include "anypredict/gateway.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <thread>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "anypredict/digest.hpp"
#include "anypredict/error.hpp"
#include "httplib.h"
#include "json.hpp"

namespace anypredict::llm {

namespace {

using json = nlohmann::json;

json request_json(const CompletionRequest& r) {
  json j = {{"rendered_prompt", r.rendered_prompt},
            {"temperature", r.temperature},
            {"max_tokens", r.max_tokens}};
  if (r.seed_hint) j["seed_hint"] = *r.seed_hint;
  return j;
}

std::string utc_timestamp() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", now);
}

// Writes the whole line with one append-mode write so concurrent writers never interleave.
void append_line(const std::filesystem::path& path, const std::string& line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw GatewayError("cannot open cache " + path.string());
  std::size_t off = 0;
  while (off < line.size()) {
    const auto n = ::write(fd, line.data() + off, line.size() - off);
    if (n <= 0) {
      ::close(fd);
      throw GatewayError("short write to cache " + path.string());
    }
    off += static_cast<std::size_t>(n);
  }
  ::close(fd);
}

}  // namespace

CompletionRequest make_request(const PromptBundle& prompt, int max_tokens) {
  return {prompt.rendered(), default_temperature(prompt.mode), max_tokens, std::nullopt};
}

std::string request_digest(const CompletionRequest& r) {
  const json key = {{"rendered_prompt", r.rendered_prompt},
                    {"temperature", r.temperature},
                    {"max_tokens", r.max_tokens}};
  return sha256_hex(key.dump());
}

std::string_view to_string(Backend backend) {
  switch (backend) {
    case Backend::live: return "live";
    case Backend::replay: return "replay";
    case Backend::mock: return "mock";
  }
  return "mock";
}

Backend parse_backend(std::string_view name) {
  if (name == "live") return Backend::live;
  if (name == "replay") return Backend::replay;
  if (name == "mock") return Backend::mock;
  throw ConfigError(fmt::format("unknown gateway backend '{}'", name));
}

void validate(const GatewayConfig& c) {
  if (c.backend == Backend::live && (!c.endpoint_url || c.endpoint_url->empty()))
    throw ConfigError("live gateway requires endpoint_url");
  if (c.backend == Backend::replay && !c.cache_path)
    throw ConfigError("replay gateway requires cache_path");
  if (c.max_retries < 0) throw ConfigError("max_retries must be non-negative");
  if (c.rate_limit < 0) throw ConfigError("rate_limit must be non-negative");
}

// ---- cache ----

CompletionCache::CompletionCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      entries_.try_emplace(j.at("digest").get<std::string>(), j.at("response").get<std::string>());
    } catch (const json::exception& e) {
      throw GatewayError(fmt::format("corrupt cache line {} in {}: {}", lineno, path_.string(), e.what()));
    }
  }
}

std::optional<std::string> CompletionCache::find(const std::string& digest) const {
  std::lock_guard lock(mutex_);
  if (auto it = entries_.find(digest); it != entries_.end()) return it->second;
  return std::nullopt;
}

void CompletionCache::append(const CompletionRequest& request, const std::string& response) {
  const auto digest = request_digest(request);
  std::lock_guard lock(mutex_);
  if (entries_.contains(digest)) return;
  const json line = {{"digest", digest},
                     {"request", request_json(request)},
                     {"response", response},
                     {"timestamp", utc_timestamp()}};
  append_line(path_, line.dump() + "\n");
  entries_.emplace(digest, response);
}

std::size_t CompletionCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::string ReplayGateway::complete(const CompletionRequest& request) {
  const auto digest = request_digest(request);
  if (auto hit = cache_.find(digest)) return *hit;
  throw CacheMiss(digest);
}

std::string RecordingGateway::complete(const CompletionRequest& request) {
  auto response = inner_->complete(request);
  cache_.append(request, response);
  return response;
}

// ---- live ----

void TokenBucket::acquire() {
  if (rate_ <= 0) return;
  const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / rate_));
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mutex_);
    slot = std::max(std::chrono::steady_clock::now(), next_);
    next_ = slot + interval;
  }
  std::this_thread::sleep_until(slot);
}

LiveGateway::LiveGateway(GatewayConfig config)
    : config_(std::move(config)), bucket_(config_.rate_limit) {
  validate(config_);
  const std::string& url = *config_.endpoint_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint_url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  base_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

std::string LiveGateway::complete(const CompletionRequest& request) {
  json body = {{"model", config_.model},
               {"messages", json::array({{{"role", "user"}, {"content", request.rendered_prompt}}})},
               {"temperature", request.temperature},
               {"max_tokens", request.max_tokens}};
  if (request.seed_hint) body["seed"] = *request.seed_hint;
  const auto payload = body.dump();

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);

  httplib::Client client(base_);
  const auto timeout = config_.request_timeout;
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                                (timeout.count() % 1000) * 1000);
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                          (timeout.count() % 1000) * 1000);
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                           (timeout.count() % 1000) * 1000);

  bool timed_out = false;
  int last_status = 0;
  std::string last_body;
  auto backoff = config_.initial_backoff;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    bucket_.acquire();
    auto res = client.Post(path_, headers, payload, "application/json");
    if (!res) {
      const auto err = res.error();
      timed_out = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout ||
                  err == httplib::Error::Write;
      last_status = 0;
      last_body = httplib::to_string(err);
      continue;
    }
    timed_out = false;
    last_status = res->status;
    last_body = res->body;
    if (res->status == 200) {
      try {
        const auto j = json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const json::exception& e) {
        throw GatewayError(std::string("malformed completion response: ") + e.what(), 200, res->body);
      }
    }
    const bool retryable = res->status == 408 || res->status == 429 || res->status >= 500;
    if (!retryable) break;
  }
  if (timed_out) throw Timeout(fmt::format("request to {}{} timed out", base_, path_));
  throw GatewayError(fmt::format("completion request failed with status {}", last_status),
                     last_status, last_body);
}

std::unique_ptr<Gateway> make_gateway(const GatewayConfig& config) {
  validate(config);
  std::unique_ptr<Gateway> gw;
  switch (config.backend) {
    case Backend::replay:
      return std::make_unique<ReplayGateway>(*config.cache_path);
    case Backend::live:
      gw = std::make_unique<LiveGateway>(config);
      break;
    case Backend::mock:
      gw = std::make_unique<MockGateway>(config.lossy_mock);
      break;
  }
  if (config.cache_path) return std::make_unique<RecordingGateway>(std::move(gw), *config.cache_path);
  return gw;
}

std::string complete(const CompletionRequest& request, const GatewayConfig& config) {
  return make_gateway(config)->complete(request);
}

}  // namespace anypredict::llm
