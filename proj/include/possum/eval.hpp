#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "possum/util.hpp"

namespace possum {

struct AreaEstimate {
  std::string area;
  double point = 0;
  double lo = 0, hi = 0;  // 5% and 95% quantiles
  std::vector<double> draws;

  /// Median point with 5/95% bounds.
  static AreaEstimate from_draws(std::string area, std::vector<double> draws);
};

struct PollsterRecord {
  std::string pollster;
  std::string rating;
  std::vector<std::string> candidates;
  std::map<std::string, std::vector<double>> counts;  // area -> N_1..N_J in `candidates` order
  Date start{}, end{};
};

/// Throws LengthMismatch on unequal or empty inputs.
double bias(const std::vector<double>& preds, const std::vector<double>& obs);
double rmse(const std::vector<double>& preds, const std::vector<double>& obs);
/// Ranks starting at 1, ties sharing their average rank.
std::vector<double> average_ranks(const std::vector<double>& x);
/// Throws DegenerateRanks if either side is constant, InvalidArgument for n < 2.
double spearman(const std::vector<double>& preds, const std::vector<double>& obs);
/// Share of observations inside the closed 90% interval.
double coverage90(const std::vector<AreaEstimate>& est, const std::vector<double>& obs);
/// Share of areas whose predicted margin sign matches the observed one; a zero point margin is wrong.
double winner_accuracy(const std::vector<double>& pred_margin, const std::vector<double>& obs_margin);

struct OvlGrid {
  int points = 2048;
  double pad_bandwidths = 3.0;
};
/// Silverman bandwidth on the pooled sample. Throws TooFewDraws below 10 draws per side.
double silverman_bandwidth(const std::vector<double>& x);
double ovl(const std::vector<double>& a, const std::vector<double>& b, const OvlGrid& grid = {});

/// H(0) = 1/2.
double heaviside(double x);
double misdirection_prob(const std::vector<double>& margin_draws_2024, double margin_2020, double observed_2024);
/// (Δ̂) − (Δ) with Δ taken against the previous margin.
double change_bias(double margin_hat_2024, double margin_2020, double margin_obs_2024);
double change_bias(double delta_hat, double delta_obs);
/// Tail mass on the observed side of the draw median.
double posterior_pvalue(const std::vector<double>& draws, double observed);

struct TemporalCorrResult {
  double prob = 0;
  int degenerate = 0;  // draws whose ranks were constant, counted as not positive
  std::vector<std::string> warnings;
};
/// draws x T. Throws InvalidArgument for T < 3.
TemporalCorrResult temporal_corr_prob(const Eigen::MatrixXd& series_draws, const std::vector<double>& reference);

struct DirichletDraws {
  Eigen::MatrixXd pi;     // S x J
  std::vector<double> margin;  // π_a − π_b per draw
};
/// Zero counts below `floor` are lifted to it; with the default 0 the component stays degenerate at 0.
/// Throws AllZero.
DirichletDraws dirichlet_margin_draws(const std::vector<double>& counts, int S, std::uint64_t seed, int a = 0,
                                      int b = 1, double floor = 0.0);

struct MetricReport {
  int n = 0;
  double bias = 0, rmse = 0, coverage = 0, accuracy = 0;
  std::optional<double> spearman;
  nlohmann::json to_json() const;
};
/// Full area-level suite on margins; Spearman only when it is defined.
MetricReport evaluate_areas(const std::vector<AreaEstimate>& est, const std::vector<double>& obs);

struct PollsterComparison {
  std::string pollster, rating;
  std::vector<std::string> areas;
  double d_bias = 0, d_rmse = 0, d_coverage = 0, d_accuracy = 0;
  std::optional<double> d_spearman;  // only with more than 3 shared areas
  double ovl = 0;                    // mean over shared areas
  MetricReport possum, reference;
};

struct CompareOptions {
  int draws = 4000;
  std::uint64_t seed = 1;
  std::string choice_a = "R", choice_b = "D";
};

/// Pollster area estimates from Dirichlet margin draws, seeded per pollster and area.
std::map<std::string, AreaEstimate> pollster_estimates(const PollsterRecord& p, const CompareOptions& opt);

/// Δ = PoSSUM − pollster on each pollster's own area set. Throws NoSharedAreas.
std::vector<PollsterComparison> compare_pollsters(const std::map<std::string, AreaEstimate>& possum,
                                                  const std::vector<PollsterRecord>& pollsters,
                                                  const std::map<std::string, double>& results,
                                                  const CompareOptions& opt = {});

/// CSV columns: pollster, rating, area, candidate, count, start_date, end_date.
std::vector<PollsterRecord> pollsters_from_csv(std::string_view text);
std::string comparisons_to_csv(const std::vector<PollsterComparison>& rows);
nlohmann::json comparisons_to_json(const std::vector<PollsterComparison>& rows);

}  // namespace possum
