#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "possum/model.hpp"

namespace possum {

struct SamplerSettings {
  int chains = 8;
  int iterations = 5000;  // per chain, warmup included
  int warmup = 4750;
  int thin = 4;
  int max_tree_depth = 15;
  double target_accept = 0.8;
  std::uint64_t seed = 1;
  int threads = 1;

  /// Throws InvalidArgument unless iterations > warmup >= 0, chains >= 1, thin >= 1.
  void validate() const;
  nlohmann::json to_json() const;
  static SamplerSettings from_json(const nlohmann::json& j);
};

/// Post-warmup transitions kept under thinning. Thinning runs over the post-warmup
/// stream of all chains concatenated, keeping every `thin`-th transition.
int retained_draw_count(const SamplerSettings& s);

struct Diagnostics {
  int divergences = 0;
  int treedepth_saturated = 0;
  int post_warmup_transitions = 0;
  std::vector<double> step_size;  // per chain, after adaptation
  std::vector<std::string> names;
  std::vector<double> rhat;  // split-R̂ per scalar in `names`
  double max_rhat() const;
  nlohmann::json to_json() const;
};

/// Retained unconstrained draws with their provenance.
struct RawDraws {
  std::vector<Eigen::VectorXd> theta;
  std::vector<int> chain, iteration;  // iteration counts post-warmup transitions from 0
  Diagnostics diagnostics;
};

/// NUTS (multinomial, generalized U-turn) with dual-averaging step size and windowed
/// diagonal metric adaptation. Chains may run concurrently; the result depends only on
/// the settings, never on the thread count. Throws AllDivergent.
RawDraws run_nuts(const LogDensity& target, const SamplerSettings& settings);

/// Split-R̂ over equal-length chains (each split in half).
double split_rhat(const std::vector<std::vector<double>>& chains);

struct PosteriorDraws {
  std::vector<ParameterVector> draws;
  std::vector<int> chain, iteration;
  std::vector<Eigen::VectorXd> theta;
  Diagnostics diagnostics;
};

/// Samples the model and unpacks every retained draw; diagnostics R̂ is over the
/// constrained scalars of `scalar_names`.
PosteriorDraws sample(const MrpModel& model, const SamplerSettings& settings);

/// One row per draw: chain, iter, then one column per scalar parameter.
std::string draws_to_csv(const MrpModel& model, const PosteriorDraws& post);

}  // namespace possum
