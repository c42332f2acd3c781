#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "possum/annotator.hpp"
#include "possum/filters.hpp"
#include "possum/model.hpp"
#include "possum/pool.hpp"
#include "possum/poststrat.hpp"
#include "possum/prompts.hpp"
#include "possum/sampler.hpp"

namespace possum {

/// A vote-choice title answered by the strategy ensemble.
struct VoteFeature {
  FeatureDef base;
  /// Builder template for the state-conditioned choice set; empty disables the
  /// Moderately and Highly informative strategies.
  std::string state_template;
};

struct PollConfig {
  std::string poll_id = "poll";
  Date fieldwork_date{};
  int window_days = 30;
  int m_politics = 20;
  double lambda = 2.0;
  /// Features extracted jointly, without background, before the quota check.
  std::vector<FeatureDef> quota_features;
  /// Frame schema title -> feature title. The area title is filled from the geographic reply.
  std::map<std::string, std::string> quota_map;
  std::string area_title = "state";
  /// Demographic features for the full extraction.
  std::vector<FeatureDef> features;
  std::vector<VoteFeature> votes;
  /// state -> previous-election shares, rendered as background.
  std::map<std::string, std::vector<std::pair<std::string, double>>> backgrounds;
  bool ensemble = true;
  /// Stateless users skip the quota (they have no cell) and are kept for the no-state term.
  bool keep_stateless = true;
  PromptOptions prompt;
  RetryPolicy retry{3, std::chrono::milliseconds(0)};
  int threads = 1;
  std::uint64_t seed = 1;
};

struct PollStats {
  int pooled = 0, after_temporal = 0, after_null_geography = 0, persons = 0, in_usa = 0, stateless = 0;
  int accepted = 0, quota_rejected = 0, no_cell = 0, refused = 0, failed = 0;
  nlohmann::json to_json() const;
};

struct PollResult {
  std::vector<SiliconResponse> responses;
  std::vector<AuditRecord> audit;
  ProcessingLedger ledger;
  QuotaState quotas;
  PollStats stats;
};

/// The full exclusion cascade followed by annotation of every accepted user. Per-user
/// annotation may run on several threads; quota decisions are taken in pool order, so the
/// result does not depend on the thread count.
PollResult poll_users(const SubjectPool& pool, const ProcessingLedger& ledger, const QuotaState& quotas,
                      AnnotatorBackend& annotator, PlatformClient& client, const PollConfig& cfg);

/// Per-cell quota and fill, with the cell attributes.
std::string quota_report_csv(const QuotaState& quotas);

struct InferConfig {
  ModelSpec model;
  SamplerSettings sampler;
  /// Model title (effect, interaction or frame attribute) -> response feature title.
  std::map<std::string, std::string> title_map;
  std::string outcome_title;
  /// Outcome category -> model choice; categories absent here drop the response.
  std::map<std::string, std::string> outcome_map;
  bool include_speculative = true;
  int speculation_threshold = 80;
  std::set<std::string> relevant_titles;  // response titles checked for speculation
  std::vector<std::string> crosstab_titles;
  std::string margin_a = "R", margin_b = "D";
};

struct InferStats {
  int responses = 0, speculative_dropped = 0, outcome_dropped = 0, training = 0, stateless = 0;
  nlohmann::json to_json() const;
};

struct InferResult {
  PosteriorDraws posterior;
  std::vector<CrosstabMap> maps;
  std::vector<CrosstabProbs> crosstabs;  // parallel to maps
  std::vector<Estimate> estimates;
  InferStats stats;
};

/// Maps responses onto model observations under the speculation policy.
std::vector<Observation> responses_to_observations(const std::vector<SiliconResponse>& responses,
                                                   const InferConfig& cfg, InferStats* stats = nullptr);

/// Fits the model and post-stratifies over the frame: national, by area and by each crosstab title.
InferResult make_inference(const std::vector<SiliconResponse>& responses, const StratFrame& frame,
                           const InferConfig& cfg);

}  // namespace possum
