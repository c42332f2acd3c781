#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "possum/domain.hpp"

namespace possum {

/// Target shares of one variable inside one geography ("*" means the whole frame).
struct MarginTarget {
  std::string geography = "*";
  std::string variable;
  std::map<std::string, double> shares;
};

std::vector<MarginTarget> margin_targets_from_csv(std::string_view text);
std::string margin_targets_to_csv(const std::vector<MarginTarget>& targets);

struct AuxRecord {
  AttributeMap attrs;
  std::string past_vote;
};

struct SmoothingOptions {
  double kappa = 5.0;
  /// Vote categories in output order; defaults to the sorted observed categories.
  std::vector<std::string> vote_categories;
};

/// Past-vote distribution per demographic combination (normalized category values).
struct SmoothedCrosstab {
  std::vector<std::string> titles;
  std::vector<std::string> vote_categories;
  std::map<std::vector<std::string>, std::vector<double>> probs;

  const std::vector<double>* find(const AttributeMap& attrs) const;
};

/// Cell counts shrunk toward a margin-implied prior with weight kappa / (kappa + n_cell).
/// The prior multiplies the overall vote shares by each title's vote-conditional margin.
/// Combinations of `cover` (if given) are included even when no aux record falls in them.
/// Throws EmptyAux.
SmoothedCrosstab smooth_crosstabs(const std::vector<AuxRecord>& aux, const std::vector<std::string>& titles,
                                  const SmoothingOptions& options, const StratFrame* cover = nullptr);

/// Splits every cell by vote category. Throws MissingCombo.
StratFrame extend_frame(const StratFrame& frame, const SmoothedCrosstab& smoothed, const std::string& vote_title);

struct RakeOptions {
  double tol = 1e-6;
  int max_iter = 1000;
  std::string geography_title = "state";
};

struct RakeResult {
  StratFrame frame;
  int sweeps = 0;
  double max_error = 0.0;
  std::vector<double> trace;  // max margin error after each sweep
};

/// Iterative proportional fitting. Throws StructuralZero, NonConvergence.
RakeResult rake_with_trace(const StratFrame& frame, const std::vector<MarginTarget>& targets,
                           const RakeOptions& options = {});
StratFrame rake(const StratFrame& frame, const std::vector<MarginTarget>& targets, double tol = 1e-6,
                int max_iter = 1000);
/// Largest |achieved share - target share| over all targets.
double max_margin_error(const StratFrame& frame, const std::vector<MarginTarget>& targets,
                        const std::string& geography_title = "state");

/// Multinomial allocation of omega_star quota units proportional to the weights.
QuotaState sample_daughter_frame(const StratFrame& mother, int omega_star, std::uint64_t seed);

}  // namespace possum
