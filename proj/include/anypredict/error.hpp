#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace anypredict {

// Broad failure classes. The CLI maps each to an exit code.
enum class ErrorCategory { config, upstream, gateway, data };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

class GatewayError : public Error {
 public:
  GatewayError(const std::string& what, int status = 0, std::string body = {})
      : Error(ErrorCategory::gateway, what), status_(status), body_(std::move(body)) {}
  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }

 private:
  int status_;
  std::string body_;
};

class PipelineOrderError : public Error {
 public:
  explicit PipelineOrderError(const std::string& what) : Error(ErrorCategory::upstream, what) {}
};

// tabular_core

class SchemaMismatch : public DataError {
 public:
  explicit SchemaMismatch(std::vector<std::string> columns);
  const std::vector<std::string>& columns() const noexcept { return columns_; }

 private:
  std::vector<std::string> columns_;
};

class ParseError : public DataError {
 public:
  ParseError(std::size_t row, std::string column, const std::string& detail);
  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

// llm_gateway

class CacheMiss : public GatewayError {
 public:
  explicit CacheMiss(std::string digest)
      : GatewayError("replay cache miss for request " + digest), digest_(std::move(digest)) {}
  const std::string& digest() const noexcept { return digest_; }

 private:
  std::string digest_;
};

class Timeout : public GatewayError {
 public:
  explicit Timeout(const std::string& what) : GatewayError(what) {}
};

class MissingCorrectionPayload : public DataError {
 public:
  MissingCorrectionPayload() : DataError("prompt mode requires an extra payload") {}
};

// consolidator

class EmptyLinearization : public DataError {
 public:
  EmptyLinearization(const std::string& dataset_id, std::size_t row)
      : DataError("row " + std::to_string(row) + " of " + dataset_id + " linearizes to nothing") {}
};

class ParseFailure : public DataError {
 public:
  explicit ParseFailure(std::string raw)
      : DataError("no numbered items in completion"), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

// auditor

class ProvenanceError : public DataError {
 public:
  explicit ProvenanceError(const std::string& what) : DataError(what) {}
};

// valuation

class TooLargeForExact : public DataError {
 public:
  explicit TooLargeForExact(std::size_t n)
      : DataError("exact Shapley enumeration limited to 12 points, got " + std::to_string(n)) {}
};

class DimensionError : public DataError {
 public:
  explicit DimensionError(const std::string& what) : DataError(what) {}
};

// predictor

class DegenerateLabels : public DataError {
 public:
  explicit DegenerateLabels(const std::string& what) : DataError(what) {}
};

class UndefinedMetric : public DataError {
 public:
  explicit UndefinedMetric(const std::string& what) : DataError(what) {}
};

// A regimen is missing one of its inputs; usually an upstream step was skipped.
class RegimenInputError : public Error {
 public:
  explicit RegimenInputError(const std::string& what) : Error(ErrorCategory::upstream, what) {}
};

// pipeline

class NotFound : public ConfigError {
 public:
  explicit NotFound(const std::string& what) : ConfigError(what) {}
};

}  // namespace anypredict
