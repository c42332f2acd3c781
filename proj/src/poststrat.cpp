#include "possum/poststrat.hpp"

#include <cmath>

#include "possum/error.hpp"

namespace possum {

namespace {

int level_index(const std::vector<std::string>& levels, const AttributeMap& attrs, const std::string& title) {
  auto it = attrs.find(title);
  if (it == attrs.end()) throw Error(Errc::UnknownCategory, "cell lacks '" + title + "'");
  auto key = normalize(it->second);
  for (int l = 0; l < static_cast<int>(levels.size()); ++l)
    if (normalize(levels[l]) == key) return l;
  throw Error(Errc::UnknownCategory, "'" + it->second + "' is not a level of " + title);
}

int area_of(const ModelSpec& spec, const AttributeMap& attrs) {
  auto it = attrs.find(spec.area_title);
  if (it == attrs.end()) throw Error(Errc::UnknownCategory, "cell lacks '" + spec.area_title + "'");
  int s = spec.area_index(it->second);
  if (s < 0) throw Error(Errc::UnknownCategory, "'" + it->second + "' is not a modelled area");
  return s;
}

}  // namespace

CellDesign design_cells(const ModelSpec& spec, const StratFrame& frame) {
  CellDesign d;
  for (const auto& cell : frame.cells) {
    d.area.push_back(area_of(spec, cell.attributes));
    std::vector<int> lv;
    for (const auto& e : spec.effects) lv.push_back(level_index(e.levels, cell.attributes, e.title));
    d.level.push_back(std::move(lv));
    d.interaction_level.push_back(
        spec.interaction ? level_index(spec.interaction->levels, cell.attributes, spec.interaction->title) : -1);
    d.weight.push_back(cell.weight);
  }
  return d;
}

Eigen::VectorXd cell_linear_predictor(const ParameterVector& p, const CellDesign& cells, int c,
                                      const ModelSpec& spec) {
  const int J = spec.J(), s = cells.area[c];
  Eigen::VectorXd mu(J);
  for (int j = 0; j < J; ++j) {
    double m = p.alpha(j) + p.lambda(s, j);
    for (std::size_t e = 0; e < spec.effects.size(); ++e) m += p.effect[e](cells.level[c][e], j);
    if (j < static_cast<int>(spec.covariates.size()))
      for (int q : spec.covariates[j]) m += p.beta(q, j) * spec.z(s, q);
    if (spec.interaction) m += p.zeta(cells.interaction_level[c], j) * spec.interaction->nu(s, j);
    mu(j) = m;
  }
  return mu;
}

Eigen::VectorXd cell_linear_predictor(const ParameterVector& draw, const StratCell& cell, const ModelSpec& spec) {
  StratFrame one;
  one.cells.push_back(cell);
  return cell_linear_predictor(draw, design_cells(spec, one), 0, spec);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& mu) {
  const double mx = mu.maxCoeff();
  Eigen::VectorXd e = (mu.array() - mx).exp();
  return e / e.sum();
}

CrosstabMap national_map(const StratFrame& frame) {
  return {"national", {"national"}, std::vector<int>(frame.cells.size(), 0)};
}

CrosstabMap crosstab_by(const StratFrame& frame, const std::string& title) {
  CrosstabMap m;
  m.dimension = title;
  for (const auto& cell : frame.cells) {
    auto it = cell.attributes.find(title);
    if (it == cell.attributes.end()) throw Error(Errc::UnknownCategory, "cell lacks '" + title + "'");
    auto pos = std::find(m.labels.begin(), m.labels.end(), it->second);
    if (pos == m.labels.end()) {
      m.labels.push_back(it->second);
      pos = m.labels.end() - 1;
    }
    m.of_cell.push_back(static_cast<int>(pos - m.labels.begin()));
  }
  return m;
}

CrosstabProbs poststratify(const CellProbs& cell_probs, const std::vector<Eigen::VectorXd>& weights,
                           const CrosstabMap& map) {
  if (weights.empty()) throw Error(Errc::InvalidArgument, "no weights given");
  if (weights.size() != 1 && weights.size() != cell_probs.size())
    throw Error(Errc::InvalidArgument, "weights must be shared or given per draw");
  const int F = static_cast<int>(map.labels.size());
  CrosstabProbs out;
  for (std::size_t d = 0; d < cell_probs.size(); ++d) {
    const auto& P = cell_probs[d];
    const auto& w = weights.size() == 1 ? weights[0] : weights[d];
    if (w.size() != P.rows() || static_cast<Eigen::Index>(map.of_cell.size()) != P.rows())
      throw Error(Errc::InvalidArgument, "cell counts disagree");
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(F, P.cols());
    Eigen::VectorXd wsum = Eigen::VectorXd::Zero(F);
    for (Eigen::Index c = 0; c < P.rows(); ++c) {
      if (w(c) < 0 || !std::isfinite(w(c))) throw Error(Errc::InvalidArgument, "weights must be nonnegative");
      const int f = map.of_cell[c];
      if (f < 0) continue;
      acc.row(f) += w(c) * P.row(c);
      wsum(f) += w(c);
    }
    for (int f = 0; f < F; ++f) {
      if (!(wsum(f) > 0)) throw Error(Errc::EmptyCrosstab, "crosstab '" + map.labels[f] + "' has no weight");
      acc.row(f) /= wsum(f);
    }
    out.push_back(std::move(acc));
  }
  return out;
}

std::vector<CrosstabProbs> poststratify_draws(const std::vector<ParameterVector>& draws, const ModelSpec& spec,
                                              const StratFrame& frame, const std::vector<CrosstabMap>& maps) {
  const auto cells = design_cells(spec, frame);
  const int C = static_cast<int>(frame.cells.size());
  Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(cells.weight.data(), C);
  std::vector<CrosstabProbs> out(maps.size());
  for (const auto& p : draws) {
    Eigen::MatrixXd probs(C, spec.J());
    for (int c = 0; c < C; ++c) probs.row(c) = softmax(cell_linear_predictor(p, cells, c, spec)).transpose();
    CellProbs one{std::move(probs)};
    for (std::size_t m = 0; m < maps.size(); ++m) out[m].push_back(std::move(poststratify(one, {w}, maps[m])[0]));
  }
  return out;
}

Eigen::MatrixXd margin_draws(const CrosstabProbs& post, int a, int b) {
  if (post.empty()) return {};
  Eigen::MatrixXd out(post.size(), post[0].rows());
  for (std::size_t d = 0; d < post.size(); ++d) out.row(d) = (post[d].col(a) - post[d].col(b)).transpose();
  return out;
}

std::vector<Estimate> summarize(const CrosstabMap& map, const CrosstabProbs& post, const ModelSpec& spec, int a,
                                int b) {
  std::vector<Estimate> out;
  auto add = [&](int f, const std::string& quantity, std::vector<double> v) {
    Estimate e;
    e.dimension = map.dimension;
    e.label = map.labels[f];
    e.quantity = quantity;
    e.mean = mean(v);
    e.q05 = quantile(v, 0.05);
    e.q50 = quantile(v, 0.5);
    e.q95 = quantile(std::move(v), 0.95);
    out.push_back(std::move(e));
  };
  for (int f = 0; f < static_cast<int>(map.labels.size()); ++f) {
    for (int j = 0; j < spec.J(); ++j) {
      std::vector<double> v;
      for (const auto& d : post) v.push_back(d(f, j));
      add(f, spec.choices[j], std::move(v));
    }
    if (a >= 0 && b >= 0 && a < spec.J() && b < spec.J()) {
      std::vector<double> v;
      for (const auto& d : post) v.push_back(d(f, a) - d(f, b));
      add(f, "margin", std::move(v));
    }
  }
  return out;
}

std::string estimates_to_csv(const std::vector<Estimate>& est) {
  std::vector<std::string> header{"dimension", "label", "quantity", "mean", "q05", "q50", "q95"};
  std::string out = csv_line(header);
  for (const auto& e : est) {
    std::vector<std::string> row{e.dimension,         e.label,          e.quantity,        format_double(e.mean),
                                 format_double(e.q05), format_double(e.q50), format_double(e.q95)};
    out += csv_line(row);
  }
  return out;
}

std::vector<Estimate> estimates_from_csv(std::string_view text) {
  auto t = parse_csv(text);
  for (const char* col : {"dimension", "label", "quantity", "mean", "q05", "q50", "q95"})
    if (!t.has_column(col)) throw Error(Errc::InvalidArgument, std::string("estimates lack column ") + col);
  std::vector<Estimate> out;
  for (const auto& r : t.rows) {
    Estimate e;
    e.dimension = r[t.column("dimension")];
    e.label = r[t.column("label")];
    e.quantity = r[t.column("quantity")];
    e.mean = std::stod(r[t.column("mean")]);
    e.q05 = std::stod(r[t.column("q05")]);
    e.q50 = std::stod(r[t.column("q50")]);
    e.q95 = std::stod(r[t.column("q95")]);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace possum
