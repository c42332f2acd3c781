#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "possum/annotator.hpp"
#include "possum/domain.hpp"
#include "possum/pipeline.hpp"
#include "possum/pool.hpp"

namespace possum {

/// One categorical attribute of the synthetic electorate. `lean` shifts the latent
/// Republican-vs-Democrat propensity of everyone in that category.
struct SimAttribute {
  std::string title;          // frame title, e.g. "age"
  std::string feature_title;  // annotation title, e.g. "AGE"
  std::string symbol_prefix;  // e.g. "A" gives A1, A2, ...
  std::vector<std::string> categories;
  std::vector<double> probs;
  std::vector<double> lean;
  bool ordinal = false;
};

struct SimArea {
  std::string name;
  double size = 1.0;
  double lean = 0.0;
};

/// A vote: category logits are intercept + lean_scale * total lean (+ loyalty to the past vote).
struct SimVote {
  std::string title, feature_title, symbol_prefix;
  std::vector<std::string> categories;
  std::vector<std::string> names;        // short choice names; empty entries are not modelled
  std::vector<std::string> placeholders; // builder placeholder party tag per category, empty for none
  std::vector<double> intercept, lean_scale;
};

struct PopulationConfig {
  std::vector<SimArea> areas;
  std::vector<std::pair<std::string, std::string>> edges;
  std::vector<SimAttribute> attributes;
  SimVote past_vote;
  SimVote vote;
  /// past-vote category -> logit shift per current category.
  std::vector<std::vector<double>> loyalty;
  int size = 50000;
  std::uint64_t seed = 1;

  /// Throws InvalidArgument on invalid probabilities, shapes or an asymmetric graph.
  void validate() const;
  nlohmann::json to_json() const;
  static PopulationConfig from_json(const nlohmann::json& j);
};

/// Eight areas, three current choices, five attributes.
PopulationConfig default_population_config();

struct Person {
  int area = 0;
  std::vector<int> attr;  // per SimAttribute
  int past = 0;
  int vote = 0;
};

struct TrueShares {
  std::vector<double> national;                   // per current category
  std::vector<std::vector<double>> by_area;       // area x category
  std::vector<std::vector<double>> past_by_area;  // area x past category
  /// attribute title -> category -> shares
  std::map<std::string, std::map<std::string, std::vector<double>>> by_attribute;
};

struct Population {
  PopulationConfig config;
  std::vector<Person> people;
  TrueShares truth;

  /// Attribute map of a person keyed by frame titles (area, attributes and past vote).
  AttributeMap frame_attributes(const Person& p, const std::string& area_title = "state") const;
  /// Exact tabulation of the population over every nonempty attribute combination.
  StratFrame frame(const std::vector<std::string>& titles, const std::string& area_title = "state") const;
};

Population generate_population(const PopulationConfig& cfg);

struct SelectionConfig {
  double base_log_odds = -2.0;
  /// attribute title (or the past-vote title) -> category -> inclusion log-odds.
  std::map<std::string, std::map<std::string, double>> log_odds;
  /// Log-odds of entering through the political query rather than a trending topic.
  double political_base = 0.0;
  std::map<std::string, std::map<std::string, double>> political_attention;
  double stateless_rate = 0.05;
  double foreign_rate = 0.02;
  double organisation_rate = 0.02;
  double null_location_rate = 0.02;
  std::vector<std::string> topics{"sports", "music", "weather"};
  int pool_tweets = 2;
  int timeline_tweets = 6;

  void validate() const;
  nlohmann::json to_json() const;
  static SelectionConfig from_json(const nlohmann::json& j);
};

/// Selection on past vote and income strong enough to bias the raw margin.
SelectionConfig default_selection_config();

struct SimPlatform {
  MockPlatformClient client;
  std::map<std::string, int> person_of;  // user_id -> person index, -1 for non-population accounts
  std::string fixture;                   // JSONL replay of the client contents
  int included = 0, stateless = 0;
};

/// Samples who is on the platform and writes their synthetic profiles.
void simulate_platform(const Population& pop, const SelectionConfig& sel, std::uint64_t seed, SimPlatform& out);

struct PipelineSettings {
  int omega = 40000;
  std::string political_terms = "election OR president OR vote";
  int sample_size = 1000;
  std::vector<std::string> quota_titles{"state", "sex", "age"};
  int window_days = 30;
  int m_politics = 20;
  double lambda = 2.0;
  bool ensemble = true;
  bool include_speculative = true;
  OracleConfig oracle;
  SamplerSettings sampler{4, 1000, 500, 4, 10, 0.8, 1, 1};
  int threads = 1;
  std::string pool_date = "2024-10-01";

  nlohmann::json to_json() const;
  static PipelineSettings from_json(const nlohmann::json& j);
};

struct SimConfig {
  PopulationConfig population;
  SelectionConfig selection;
  PipelineSettings pipeline;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing sections fall back to the defaults. Throws InvalidArgument.
  static SimConfig from_json(const nlohmann::json& j);
};

SimConfig default_sim_config();

/// Feature definitions, vote ensemble set-up and model spec derived from a population config.
std::vector<FeatureDef> sim_feature_defs(const PopulationConfig& cfg);
PollConfig sim_poll_config(const Population& pop, const PipelineSettings& s, std::uint64_t seed);
InferConfig sim_infer_config(const Population& pop, const PipelineSettings& s, std::uint64_t seed);

/// Stage pieces shared by run_end_to_end and the command-line tool. Every seed is derived
/// from the run seed the same way in both.
Population sim_population(const SimConfig& cfg, std::uint64_t seed);
/// Post-stratification frame over state, attributes and past vote.
StratFrame sim_strat_frame(const Population& pop);
QuotaState sim_quotas(const Population& pop, const PipelineSettings& s, std::uint64_t seed);
OracleConfig sim_oracle_config(const Population& pop, const PipelineSettings& s, std::uint64_t seed);
std::uint64_t sim_platform_seed(std::uint64_t seed);
std::uint64_t sim_poll_seed(std::uint64_t seed);
std::uint64_t sim_sampler_seed(std::uint64_t seed);
/// Vote margin R − D per area, national first, as CSV columns area, margin, margin_prev.
std::string sim_results_csv(const Population& pop);

struct SimReport {
  nlohmann::json json;
  double truth_margin = 0, raw_margin = 0, post_margin = 0;
  double raw_state_rmse = 0, post_state_rmse = 0;
  std::map<std::string, double> crosstab_rmse;  // attribute title -> RMSE of crosstab margins
  std::vector<Estimate> estimates;
  std::string draws_csv;
};

/// pool -> filters -> quotas -> oracle annotation -> MrP -> post-stratification -> eval.
/// Stage failures are rethrown with the stage name prefixed.
SimReport run_end_to_end(const SimConfig& cfg, std::uint64_t seed);

}  // namespace possum
