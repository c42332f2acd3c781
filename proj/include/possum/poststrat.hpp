#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "possum/domain.hpp"
#include "possum/model.hpp"
#include "possum/sampler.hpp"

namespace possum {

/// Frame cells mapped onto the model's indices.
struct CellDesign {
  std::vector<int> area;
  std::vector<std::vector<int>> level;  // per cell, per effect
  std::vector<int> interaction_level;   // -1 without an interaction
  std::vector<double> weight;
};

/// Throws UnknownCategory when a cell lacks a modelled title or carries an unknown level.
CellDesign design_cells(const ModelSpec& spec, const StratFrame& frame);

/// μ̃ over all J choices (the reference entry is 0) for a cell with a known area.
/// Never includes the no-state or poll-walk terms. Throws UnknownCategory.
Eigen::VectorXd cell_linear_predictor(const ParameterVector& draw, const StratCell& cell, const ModelSpec& spec);
Eigen::VectorXd cell_linear_predictor(const ParameterVector& draw, const CellDesign& cells, int c,
                                      const ModelSpec& spec);

Eigen::VectorXd softmax(const Eigen::VectorXd& mu);

/// Cell -> crosstab index, -1 for cells outside every crosstab.
struct CrosstabMap {
  std::string dimension;  // "national", an area title or an attribute title
  std::vector<std::string> labels;
  std::vector<int> of_cell;
};

CrosstabMap national_map(const StratFrame& frame);
/// One crosstab per category of `title`, in first-appearance order.
CrosstabMap crosstab_by(const StratFrame& frame, const std::string& title);

/// Per draw, a cells x J matrix of probabilities.
using CellProbs = std::vector<Eigen::MatrixXd>;
/// Per draw, a crosstabs x J matrix.
using CrosstabProbs = std::vector<Eigen::MatrixXd>;

/// Weighted average per draw. `weights` holds either one vector shared by every draw or
/// one per draw. Throws EmptyCrosstab when a crosstab's weight sum is not positive,
/// InvalidArgument on negative weights or mismatched shapes.
CrosstabProbs poststratify(const CellProbs& cell_probs, const std::vector<Eigen::VectorXd>& weights,
                           const CrosstabMap& map);

/// Streams draws through the frame without holding every cell probability at once.
std::vector<CrosstabProbs> poststratify_draws(const std::vector<ParameterVector>& draws, const ModelSpec& spec,
                                              const StratFrame& frame, const std::vector<CrosstabMap>& maps);

/// draws x crosstabs matrix of π_a − π_b.
Eigen::MatrixXd margin_draws(const CrosstabProbs& post, int choice_a, int choice_b);

struct Estimate {
  std::string dimension, label, quantity;  // quantity: a choice name or "margin"
  double mean = 0, q05 = 0, q50 = 0, q95 = 0;
};

/// Per-crosstab summaries for every choice and, when both indices are valid, the margin a − b.
std::vector<Estimate> summarize(const CrosstabMap& map, const CrosstabProbs& post, const ModelSpec& spec,
                                int margin_a = -1, int margin_b = -1);

/// Columns: dimension, label, quantity, mean, q05, q50, q95.
std::string estimates_to_csv(const std::vector<Estimate>& est);
std::vector<Estimate> estimates_from_csv(std::string_view text);

}  // namespace possum
