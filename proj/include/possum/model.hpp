#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "possum/domain.hpp"
#include "possum/graph.hpp"

namespace possum {

enum class EffectPrior { RandomWalk, Unstructured };

/// An individual-level categorical predictor with its ordered levels.
struct EffectSpec {
  std::string title;
  EffectPrior prior = EffectPrior::Unstructured;
  std::vector<std::string> levels;
};

/// ζ_{v,j} ν_{s,j}: a per-level slope on the area's past share of choice j.
struct InteractionSpec {
  std::string title;
  std::vector<std::string> levels;
  Eigen::MatrixXd nu;  // S x J, standardized per column
};

struct ModelSpec {
  std::vector<std::string> choices;
  int reference = 0;
  std::string area_title = "state";
  std::vector<std::string> areas;
  AreaGraph graph;
  bool include_area_effect = true;
  Eigen::MatrixXd z;                           // S x P, standardized per column
  std::vector<std::string> covariate_names;    // P
  std::vector<std::vector<int>> covariates;    // per choice: columns of z; empty for the reference
  std::vector<EffectSpec> effects;
  std::optional<InteractionSpec> interaction;
  bool include_no_state = true;
  bool include_poll_walk = false;
  int n_polls = 1;

  int J() const { return static_cast<int>(choices.size()); }
  int S() const { return static_cast<int>(areas.size()); }
  /// -1 when absent.
  int area_index(std::string_view area) const;
  int choice_index(std::string_view choice) const;
  /// Throws InvalidArgument on inconsistent shapes, an asymmetric graph or predictors on the reference.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

/// Column-wise standardization to mean 0, sd 1 (population sd); constant columns become 0.
Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& m);

struct Observation {
  AttributeMap attrs;
  std::optional<std::string> area;  // empty for stateless users
  std::string choice;
  int poll = 0;
};

struct TrainingData {
  std::vector<int> y;
  std::vector<int> area;                 // -1 for stateless
  std::vector<std::vector<int>> level;   // per observation, per effect
  std::vector<int> interaction_level;    // per observation; -1 when no interaction
  std::vector<int> poll;

  std::size_t size() const { return y.size(); }
  /// Every observation repeated `times` times.
  TrainingData replicated(int times) const;
};

/// Maps observations onto the ModelSpec indices. Throws UnknownCategory.
TrainingData build_training_data(const ModelSpec& spec, const std::vector<Observation>& obs);

/// Constrained parameters of one draw. Matrices carry a zero column for the reference choice.
struct ParameterVector {
  Eigen::VectorXd alpha;                      // J
  Eigen::MatrixXd lambda, phi, psi;           // S x J
  Eigen::VectorXd sigma_lambda, xi;           // J
  std::vector<Eigen::MatrixXd> effect;        // per effect: L x J
  std::vector<Eigen::VectorXd> effect_sigma;  // per effect: J
  Eigen::MatrixXd beta;                       // P x J
  Eigen::MatrixXd zeta;                       // V x J
  Eigen::VectorXd zeta_sigma;                 // J
  Eigen::VectorXd no_state;                   // J (Ξ)
  Eigen::MatrixXd poll;                       // n_polls x J
  double poll_sigma = 0.0;
};

/// Offsets of each block inside the unconstrained vector, for one non-reference choice k.
struct ParameterLayout {
  int K = 0;  // J - 1
  int dim = 0;
  int alpha = 0;
  int area_log_sigma = -1, area_logit_xi = -1, area_phi = -1, area_u = -1, area_free = 0;
  std::vector<int> effect_log_sigma, effect_raw;
  std::vector<int> beta;  // per k: start of that choice's covariate coefficients
  int zeta_log_sigma = -1, zeta_raw = -1;
  int no_state = -1;
  int poll_log_sigma = -1, poll_raw = -1;
};

/// Target density for gradient-based samplers.
class LogDensity {
 public:
  virtual ~LogDensity() = default;
  virtual int dim() const = 0;
  /// Log density (up to a constant) and, when `grad` is non-null, its gradient.
  virtual double log_density(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const = 0;
  virtual std::vector<std::string> parameter_names() const;
};

/// The hierarchical categorical model on the unconstrained scale: log scales, logit mixing
/// weights, standardized effects and free ICAR coordinates.
class MrpModel : public LogDensity {
 public:
  MrpModel(ModelSpec spec, TrainingData data);

  int dim() const override { return layout_.dim; }
  /// Throws NonFinite.
  double log_density(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const override;
  std::vector<std::string> parameter_names() const override;
  /// The categorical log-likelihood alone.
  double log_likelihood(const Eigen::VectorXd& theta) const;

  ParameterVector unpack(const Eigen::VectorXd& theta) const;
  std::vector<std::string> scalar_names() const;
  Eigen::VectorXd flatten(const ParameterVector& p) const;

  const ModelSpec& spec() const { return spec_; }
  const TrainingData& data() const { return data_; }
  const ParameterLayout& layout() const { return layout_; }
  const IcarStructure& icar() const { return icar_; }
  /// Non-reference choice indices in order.
  const std::vector<int>& free_choices() const { return free_; }

 private:
  double evaluate(const Eigen::VectorXd& theta, Eigen::VectorXd* grad, bool prior) const;
  ModelSpec spec_;
  TrainingData data_;
  ParameterLayout layout_;
  IcarStructure icar_;
  std::vector<int> free_;
  std::vector<double> icar_root_;  // per area: 1/sqrt(scaling) of its component, 0 if isolated
};

/// Value and gradient of the log posterior at an unconstrained point.
std::pair<double, Eigen::VectorXd> log_posterior(const Eigen::VectorXd& theta, const TrainingData& data,
                                                 const ModelSpec& spec);

}  // namespace possum
