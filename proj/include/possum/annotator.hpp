#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "possum/backend.hpp"
#include "possum/domain.hpp"

namespace possum {

struct SpeculationDist {
  double mean = 0.0;
  double spread = 0.0;  // sd of a normal clamped to [0, 100]
};

/// Simulated annotator behaviour. Confusion rows are keyed by truth category and map to
/// (reported category, probability) pairs; titles without a row report the truth.
struct OracleConfig {
  std::map<std::string, std::map<std::string, std::vector<std::pair<std::string, double>>>> confusion;
  std::map<std::string, SpeculationDist> speculation;
  double rejection_rate = 0.0;
  std::uint64_t seed = 0;
  /// state -> party -> candidate name, used to answer feature-builder prompts.
  std::map<std::string, std::map<std::string, std::string>> candidates;

  /// Throws InvalidArgument when a row does not sum to 1 or the rate is outside [0,1].
  void validate() const;
  static OracleConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Fig.-2-style answer blocks for `defs`, sampled from the confusion rows.
/// `salt` separates the random streams of different users and prompts. Throws MissingTruth.
std::string oracle_annotate(const AttributeMap& truth, const std::vector<FeatureDef>& defs, const OracleConfig& cfg,
                            std::string_view salt = {});

/// Reads "[KEY=value]" truth tokens out of free text.
AttributeMap read_truth_tokens(std::string_view text);
std::string truth_token(const std::string& key, const std::string& value);

/// Deterministic stand-in for an LLM. Truth comes from tokens embedded in the prompt
/// (ENTITY, STATE and one per feature title); per-call randomness is derived from the
/// seed, the username and the prompt text, so call order and threading cannot matter.
class MockOracle : public AnnotatorBackend {
 public:
  explicit MockOracle(OracleConfig cfg);
  std::string complete(const std::string& prompt) override;
  std::string model_name() const override { return "mock-oracle"; }
  std::string temperature() const override { return "n/a"; }

  const OracleConfig& config() const { return cfg_; }
  std::size_t calls() const;

 private:
  std::string answer_builder(const std::string& prompt) const;
  OracleConfig cfg_;
  mutable std::mutex mutex_;
  std::size_t calls_ = 0;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds backoff{200};  // doubled after each failed attempt
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Retries RateLimited and Transport failures; Refused is returned immediately.
/// Throws Exhausted after max_attempts.
std::string retrying_complete(AnnotatorBackend& backend, const std::string& prompt, const RetryPolicy& policy,
                              const Sleeper& sleep = {});

/// OpenAI-style chat-completions endpoint over plain HTTP, configured from the environment:
/// POSSUM_LLM_BASE_URL (http://host:port), POSSUM_LLM_MODEL, POSSUM_LLM_API_KEY_VAR (name of
/// the variable holding the key) and optionally POSSUM_LLM_TEMPERATURE.
class LiveAdapter : public AnnotatorBackend {
 public:
  static LiveAdapter from_env();
  LiveAdapter(std::string base_url, std::string model, std::string api_key, std::optional<double> temperature);
  std::string complete(const std::string& prompt) override;
  std::string model_name() const override { return model_; }
  std::string temperature() const override;

 private:
  std::string base_url_;
  std::string model_;
  std::string api_key_;
  std::optional<double> temperature_;
};

}  // namespace possum
