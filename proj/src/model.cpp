#include "possum/model.hpp"

#include <cmath>
#include <numbers>

#include "possum/error.hpp"

namespace possum {

using nlohmann::json;

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // log(2π)/2
const double kLogHalfNormal = std::log(2.0) - kHalfLog2Pi;
const double kLogPi = std::log(std::numbers::pi);

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

std::string prior_name(EffectPrior p) { return p == EffectPrior::RandomWalk ? "random_walk" : "unstructured"; }

}  // namespace

// --- spec ------------------------------------------------------------------

int ModelSpec::area_index(std::string_view area) const {
  auto key = normalize(area);
  for (int s = 0; s < S(); ++s)
    if (normalize(areas[s]) == key) return s;
  return -1;
}

int ModelSpec::choice_index(std::string_view choice) const {
  auto key = normalize(choice);
  for (int j = 0; j < J(); ++j)
    if (normalize(choices[j]) == key) return j;
  return -1;
}

void ModelSpec::validate() const {
  if (J() < 2) throw Error(Errc::InvalidArgument, "need at least two choices");
  if (reference < 0 || reference >= J()) throw Error(Errc::InvalidArgument, "reference choice out of range");
  if (graph.size() != S()) throw Error(Errc::InvalidArgument, "graph size differs from the area count");
  if (!graph.symmetric()) throw Error(Errc::InvalidArgument, "area graph is not symmetric");
  if (z.size() > 0 && z.rows() != S()) throw Error(Errc::InvalidArgument, "z must have one row per area");
  if (z.cols() != static_cast<Eigen::Index>(covariate_names.size()))
    throw Error(Errc::InvalidArgument, "covariate names do not match z columns");
  if (!covariates.empty() && static_cast<int>(covariates.size()) != J())
    throw Error(Errc::InvalidArgument, "covariate lists must be given per choice");
  for (int j = 0; j < static_cast<int>(covariates.size()); ++j) {
    if (j == reference && !covariates[j].empty())
      throw Error(Errc::InvalidArgument, "the reference choice takes no predictors");
    for (int p : covariates[j])
      if (p < 0 || p >= z.cols()) throw Error(Errc::InvalidArgument, "covariate column out of range");
  }
  for (const auto& e : effects)
    if (e.levels.empty()) throw Error(Errc::InvalidArgument, "effect '" + e.title + "' has no levels");
  if (interaction) {
    if (interaction->nu.rows() != S() || interaction->nu.cols() != J())
      throw Error(Errc::InvalidArgument, "nu must be S x J");
    if (interaction->levels.empty()) throw Error(Errc::InvalidArgument, "interaction has no levels");
  }
  if (include_poll_walk && n_polls < 1) throw Error(Errc::InvalidArgument, "n_polls must be positive");
}

json ModelSpec::to_json() const {
  json j;
  j["choices"] = choices;
  j["reference"] = choices.at(reference);
  j["area_title"] = area_title;
  j["areas"] = areas;
  json edges = json::array();
  for (auto [a, b] : graph.edges()) edges.push_back({areas[a], areas[b]});
  j["edges"] = edges;
  j["include_area_effect"] = include_area_effect;
  j["covariate_names"] = covariate_names;
  json zrows = json::array();
  for (int s = 0; s < z.rows(); ++s) {
    json row = json::array();
    for (int p = 0; p < z.cols(); ++p) row.push_back(z(s, p));
    zrows.push_back(row);
  }
  j["z"] = zrows;
  json cov = json::object();
  for (int c = 0; c < static_cast<int>(covariates.size()); ++c) {
    json names = json::array();
    for (int p : covariates[c]) names.push_back(covariate_names[p]);
    cov[choices[c]] = names;
  }
  j["covariates"] = cov;
  json eff = json::array();
  for (const auto& e : effects) eff.push_back({{"title", e.title}, {"prior", prior_name(e.prior)}, {"levels", e.levels}});
  j["effects"] = eff;
  if (interaction) {
    json nu = json::array();
    for (int s = 0; s < interaction->nu.rows(); ++s) {
      json row = json::array();
      for (int c = 0; c < interaction->nu.cols(); ++c) row.push_back(interaction->nu(s, c));
      nu.push_back(row);
    }
    j["interaction"] = {{"title", interaction->title}, {"levels", interaction->levels}, {"nu", nu}};
  }
  j["include_no_state"] = include_no_state;
  j["include_poll_walk"] = include_poll_walk;
  j["n_polls"] = n_polls;
  return j;
}

ModelSpec ModelSpec::from_json(const json& j) {
  ModelSpec spec;
  spec.choices = j.at("choices").get<std::vector<std::string>>();
  spec.reference = spec.choice_index(j.at("reference").get<std::string>());
  if (spec.reference < 0) throw Error(Errc::InvalidArgument, "reference is not one of the choices");
  spec.area_title = j.value("area_title", "state");
  spec.areas = j.at("areas").get<std::vector<std::string>>();
  std::vector<std::pair<int, int>> edges;
  for (const auto& e : j.value("edges", json::array())) {
    int a = spec.area_index(e.at(0).get<std::string>()), b = spec.area_index(e.at(1).get<std::string>());
    if (a < 0 || b < 0) throw Error(Errc::InvalidArgument, "edge names an unknown area");
    edges.emplace_back(a, b);
  }
  spec.graph = AreaGraph::from_edges(spec.S(), edges);
  spec.include_area_effect = j.value("include_area_effect", true);
  spec.covariate_names = j.value("covariate_names", std::vector<std::string>{});
  const int P = static_cast<int>(spec.covariate_names.size());
  spec.z = Eigen::MatrixXd::Zero(spec.S(), P);
  if (P > 0) {
    const auto& rows = j.at("z");
    if (static_cast<int>(rows.size()) != spec.S()) throw Error(Errc::InvalidArgument, "z must have one row per area");
    for (int s = 0; s < spec.S(); ++s)
      for (int p = 0; p < P; ++p) spec.z(s, p) = rows.at(s).at(p).get<double>();
  }
  spec.covariates.assign(spec.J(), {});
  if (auto it = j.find("covariates"); it != j.end())
    for (const auto& [choice, names] : it->items()) {
      int c = spec.choice_index(choice);
      if (c < 0) throw Error(Errc::InvalidArgument, "covariates for unknown choice " + choice);
      for (const auto& n : names) {
        auto pos = std::find(spec.covariate_names.begin(), spec.covariate_names.end(), n.get<std::string>());
        if (pos == spec.covariate_names.end()) throw Error(Errc::InvalidArgument, "unknown covariate " + n.dump());
        spec.covariates[c].push_back(static_cast<int>(pos - spec.covariate_names.begin()));
      }
    }
  for (const auto& e : j.value("effects", json::array())) {
    EffectSpec es;
    es.title = e.at("title").get<std::string>();
    es.prior = e.value("prior", "unstructured") == "random_walk" ? EffectPrior::RandomWalk : EffectPrior::Unstructured;
    es.levels = e.at("levels").get<std::vector<std::string>>();
    spec.effects.push_back(std::move(es));
  }
  if (auto it = j.find("interaction"); it != j.end() && !it->is_null()) {
    InteractionSpec in;
    in.title = it->at("title").get<std::string>();
    in.levels = it->at("levels").get<std::vector<std::string>>();
    in.nu = Eigen::MatrixXd::Zero(spec.S(), spec.J());
    const auto& rows = it->at("nu");
    for (int s = 0; s < spec.S(); ++s)
      for (int c = 0; c < spec.J(); ++c) in.nu(s, c) = rows.at(s).at(c).get<double>();
    spec.interaction = std::move(in);
  }
  spec.include_no_state = j.value("include_no_state", true);
  spec.include_poll_walk = j.value("include_poll_walk", false);
  spec.n_polls = j.value("n_polls", 1);
  spec.validate();
  return spec;
}

Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    double mu = m.col(c).mean();
    double sd = std::sqrt((m.col(c).array() - mu).square().mean());
    if (sd > 0) out.col(c) = (m.col(c).array() - mu) / sd;
    else out.col(c).setZero();
  }
  return out;
}

// --- data ------------------------------------------------------------------

TrainingData TrainingData::replicated(int times) const {
  TrainingData out;
  for (int t = 0; t < times; ++t) {
    out.y.insert(out.y.end(), y.begin(), y.end());
    out.area.insert(out.area.end(), area.begin(), area.end());
    out.level.insert(out.level.end(), level.begin(), level.end());
    out.interaction_level.insert(out.interaction_level.end(), interaction_level.begin(), interaction_level.end());
    out.poll.insert(out.poll.end(), poll.begin(), poll.end());
  }
  return out;
}

namespace {

int level_of(const std::vector<std::string>& levels, const AttributeMap& attrs, const std::string& title) {
  auto it = attrs.find(title);
  if (it == attrs.end()) throw Error(Errc::UnknownCategory, "observation lacks '" + title + "'");
  auto key = normalize(it->second);
  for (int l = 0; l < static_cast<int>(levels.size()); ++l)
    if (normalize(levels[l]) == key) return l;
  throw Error(Errc::UnknownCategory, "'" + it->second + "' is not a level of " + title);
}

}  // namespace

TrainingData build_training_data(const ModelSpec& spec, const std::vector<Observation>& obs) {
  TrainingData d;
  for (const auto& o : obs) {
    int y = spec.choice_index(o.choice);
    if (y < 0) throw Error(Errc::UnknownCategory, "'" + o.choice + "' is not a choice");
    int s = -1;
    if (o.area) {
      s = spec.area_index(*o.area);
      if (s < 0) throw Error(Errc::UnknownCategory, "'" + *o.area + "' is not an area");
    }
    std::vector<int> levels;
    for (const auto& e : spec.effects) levels.push_back(level_of(e.levels, o.attrs, e.title));
    int v = spec.interaction ? level_of(spec.interaction->levels, o.attrs, spec.interaction->title) : -1;
    if (spec.include_poll_walk && (o.poll < 0 || o.poll >= spec.n_polls))
      throw Error(Errc::UnknownCategory, "poll index " + std::to_string(o.poll) + " out of range");
    d.y.push_back(y);
    d.area.push_back(s);
    d.level.push_back(std::move(levels));
    d.interaction_level.push_back(v);
    d.poll.push_back(spec.include_poll_walk ? o.poll : 0);
  }
  return d;
}

// --- model -----------------------------------------------------------------

std::vector<std::string> LogDensity::parameter_names() const {
  std::vector<std::string> out;
  for (int i = 0; i < dim(); ++i) out.push_back("theta[" + std::to_string(i) + "]");
  return out;
}

MrpModel::MrpModel(ModelSpec spec, TrainingData data) : spec_(std::move(spec)), data_(std::move(data)) {
  spec_.validate();
  if (spec_.covariates.empty()) spec_.covariates.assign(spec_.J(), {});
  for (int j = 0; j < spec_.J(); ++j)
    if (j != spec_.reference) free_.push_back(j);
  const int n = static_cast<int>(data_.size());
  const int E = static_cast<int>(spec_.effects.size());
  for (int i = 0; i < n; ++i) {
    if (data_.y[i] < 0 || data_.y[i] >= spec_.J()) throw Error(Errc::InvalidArgument, "choice index out of range");
    if (data_.area[i] < -1 || data_.area[i] >= spec_.S()) throw Error(Errc::InvalidArgument, "area index out of range");
    if (static_cast<int>(data_.level[i].size()) != E) throw Error(Errc::InvalidArgument, "effect index count");
    for (int e = 0; e < E; ++e)
      if (data_.level[i][e] < 0 || data_.level[i][e] >= static_cast<int>(spec_.effects[e].levels.size()))
        throw Error(Errc::InvalidArgument, "effect level out of range");
    if (spec_.interaction && (data_.interaction_level[i] < 0 ||
                              data_.interaction_level[i] >= static_cast<int>(spec_.interaction->levels.size())))
      throw Error(Errc::InvalidArgument, "interaction level out of range");
  }

  const int K = spec_.J() - 1, S = spec_.S();
  auto& L = layout_;
  L.K = K;
  int off = 0;
  L.alpha = off;
  off += K;
  if (spec_.include_area_effect && S > 0) {
    icar_ = icar_structure(spec_.graph);
    L.area_log_sigma = off;
    off += K;
    if (!icar_.members.empty()) {
      L.area_logit_xi = off;
      off += K;
    }
    L.area_phi = off;
    off += S * K;
    L.area_free = icar_.free_dim();
    if (L.area_free > 0) {
      L.area_u = off;
      off += L.area_free * K;
    }
    icar_root_.assign(S, 0.0);
    for (int s = 0; s < S; ++s)
      if (icar_.component[s] >= 0) icar_root_[s] = 1.0 / std::sqrt(icar_.scaling[icar_.component[s]]);
  }
  for (const auto& e : spec_.effects) {
    L.effect_log_sigma.push_back(off);
    off += K;
    L.effect_raw.push_back(off);
    off += static_cast<int>(e.levels.size()) * K;
  }
  for (int k = 0; k < K; ++k) {
    L.beta.push_back(off);
    off += static_cast<int>(spec_.covariates[free_[k]].size());
  }
  if (spec_.interaction) {
    L.zeta_log_sigma = off;
    off += K;
    L.zeta_raw = off;
    off += static_cast<int>(spec_.interaction->levels.size()) * K;
  }
  if (spec_.include_no_state) {
    L.no_state = off;
    off += K;
  }
  if (spec_.include_poll_walk) {
    L.poll_log_sigma = off;
    off += 1;
    L.poll_raw = off;
    off += spec_.n_polls * K;
  }
  L.dim = off;
}

std::vector<std::string> MrpModel::parameter_names() const {
  const auto& L = layout_;
  std::vector<std::string> names(L.dim);
  auto ch = [&](int k) { return spec_.choices[free_[k]]; };
  for (int k = 0; k < L.K; ++k) {
    names[L.alpha + k] = "alpha[" + ch(k) + "]";
    if (L.area_log_sigma >= 0) {
      names[L.area_log_sigma + k] = "log_sigma_lambda[" + ch(k) + "]";
      if (L.area_logit_xi >= 0) names[L.area_logit_xi + k] = "logit_xi[" + ch(k) + "]";
      for (int s = 0; s < spec_.S(); ++s)
        names[L.area_phi + k * spec_.S() + s] = "phi[" + spec_.areas[s] + "," + ch(k) + "]";
      for (int c = 0; c < L.area_free; ++c)
        names[L.area_u + k * L.area_free + c] = "icar_u[" + std::to_string(c) + "," + ch(k) + "]";
    }
    for (std::size_t e = 0; e < spec_.effects.size(); ++e) {
      const auto& es = spec_.effects[e];
      names[L.effect_log_sigma[e] + k] = "log_sigma[" + es.title + "," + ch(k) + "]";
      const int Le = static_cast<int>(es.levels.size());
      for (int l = 0; l < Le; ++l) names[L.effect_raw[e] + k * Le + l] = "raw[" + es.title + ":" + es.levels[l] + "," + ch(k) + "]";
    }
    const auto& cov = spec_.covariates[free_[k]];
    for (std::size_t p = 0; p < cov.size(); ++p)
      names[L.beta[k] + p] = "beta[" + spec_.covariate_names[cov[p]] + "," + ch(k) + "]";
    if (spec_.interaction) {
      names[L.zeta_log_sigma + k] = "log_sigma_zeta[" + ch(k) + "]";
      const int V = static_cast<int>(spec_.interaction->levels.size());
      for (int v = 0; v < V; ++v)
        names[L.zeta_raw + k * V + v] = "raw_zeta[" + spec_.interaction->levels[v] + "," + ch(k) + "]";
    }
    if (L.no_state >= 0) names[L.no_state + k] = "Xi[" + ch(k) + "]";
    if (L.poll_raw >= 0)
      for (int p = 0; p < spec_.n_polls; ++p)
        names[L.poll_raw + k * spec_.n_polls + p] = "raw_poll[" + std::to_string(p) + "," + ch(k) + "]";
  }
  if (L.poll_log_sigma >= 0) names[L.poll_log_sigma] = "log_sigma_poll";
  return names;
}

double MrpModel::log_density(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
  return evaluate(theta, grad, true);
}

double MrpModel::log_likelihood(const Eigen::VectorXd& theta) const { return evaluate(theta, nullptr, false); }

double MrpModel::evaluate(const Eigen::VectorXd& th, Eigen::VectorXd* grad, bool prior) const {
  const auto& L = layout_;
  if (th.size() != L.dim) throw Error(Errc::InvalidArgument, "parameter vector has the wrong length");
  const int K = L.K, S = spec_.S(), E = static_cast<int>(spec_.effects.size());
  const int n = static_cast<int>(data_.size());
  const int V = spec_.interaction ? static_cast<int>(spec_.interaction->levels.size()) : 0;
  const int P = spec_.n_polls;
  const bool area_on = L.area_log_sigma >= 0;

  // natural parameters (non-reference columns only)
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(S, K), psi = Eigen::MatrixXd::Zero(S, K);
  Eigen::VectorXd sig_l = Eigen::VectorXd::Zero(K), xi = Eigen::VectorXd::Zero(K);
  if (area_on) {
    for (int k = 0; k < K; ++k) {
      sig_l(k) = std::exp(th[L.area_log_sigma + k]);
      if (L.area_logit_xi >= 0) xi(k) = 1.0 / (1.0 + std::exp(-th[L.area_logit_xi + k]));
      if (L.area_free > 0) psi.col(k) = icar_.basis * th.segment(L.area_u + k * L.area_free, L.area_free);
      const double c1 = std::sqrt(1.0 - xi(k)), c2 = std::sqrt(xi(k));
      for (int s = 0; s < S; ++s) {
        double phi = th[L.area_phi + k * S + s];
        lambda(s, k) = icar_.isolated[s] ? sig_l(k) * phi : sig_l(k) * (phi * c1 + psi(s, k) * c2 * icar_root_[s]);
      }
    }
  }
  std::vector<Eigen::MatrixXd> eff(E);
  Eigen::MatrixXd sig_e(E, K);
  for (int e = 0; e < E; ++e) {
    const int Le = static_cast<int>(spec_.effects[e].levels.size());
    eff[e].resize(Le, K);
    for (int k = 0; k < K; ++k) {
      sig_e(e, k) = std::exp(th[L.effect_log_sigma[e] + k]);
      double acc = 0.0;
      for (int l = 0; l < Le; ++l) {
        double r = th[L.effect_raw[e] + k * Le + l];
        acc = spec_.effects[e].prior == EffectPrior::RandomWalk ? acc + r : r;
        eff[e](l, k) = sig_e(e, k) * acc;
      }
    }
  }
  Eigen::MatrixXd fixed = Eigen::MatrixXd::Zero(S, K);
  for (int k = 0; k < K; ++k) {
    const auto& cov = spec_.covariates[free_[k]];
    for (std::size_t p = 0; p < cov.size(); ++p) fixed.col(k) += th[L.beta[k] + p] * spec_.z.col(cov[p]);
  }
  Eigen::MatrixXd zeta = Eigen::MatrixXd::Zero(V, K);
  Eigen::VectorXd sig_z = Eigen::VectorXd::Zero(K);
  for (int k = 0; k < K && V > 0; ++k) {
    sig_z(k) = std::exp(th[L.zeta_log_sigma + k]);
    for (int v = 0; v < V; ++v) zeta(v, k) = sig_z(k) * th[L.zeta_raw + k * V + v];
  }
  Eigen::MatrixXd poll = Eigen::MatrixXd::Zero(P, K);
  double sig_p = 0.0;
  if (L.poll_raw >= 0) {
    sig_p = std::exp(th[L.poll_log_sigma]);
    for (int k = 0; k < K; ++k) {
      double acc = 0.0;
      for (int p = 0; p < P; ++p) {
        acc += th[L.poll_raw + k * P + p];
        poll(p, k) = sig_p * acc;
      }
    }
  }

  // likelihood
  Eigen::VectorXd d_alpha = Eigen::VectorXd::Zero(K), d_xi_ns = Eigen::VectorXd::Zero(K);
  Eigen::MatrixXd d_area = Eigen::MatrixXd::Zero(S, K), d_zeta = Eigen::MatrixXd::Zero(V, K),
                  d_poll = Eigen::MatrixXd::Zero(P, K);
  std::vector<Eigen::MatrixXd> d_eff(E);
  for (int e = 0; e < E; ++e) d_eff[e] = Eigen::MatrixXd::Zero(eff[e].rows(), K);
  std::vector<double> mu(K), g(K);
  double ll = 0.0;
  for (int i = 0; i < n; ++i) {
    const int s = data_.area[i];
    const int v = data_.interaction_level[i];
    const int p = data_.poll[i];
    double mx = 0.0;
    for (int k = 0; k < K; ++k) {
      double m = th[L.alpha + k];
      if (s >= 0) {
        m += lambda(s, k) + fixed(s, k);
        if (V > 0) m += zeta(v, k) * spec_.interaction->nu(s, free_[k]);
      } else if (L.no_state >= 0) {
        m += th[L.no_state + k];
      }
      for (int e = 0; e < E; ++e) m += eff[e](data_.level[i][e], k);
      if (L.poll_raw >= 0) m += poll(p, k);
      mu[k] = m;
      mx = std::max(mx, m);
    }
    double z = std::exp(-mx);
    for (int k = 0; k < K; ++k) z += std::exp(mu[k] - mx);
    const double lse = mx + std::log(z);
    const int y = data_.y[i];
    int ky = -1;
    for (int k = 0; k < K; ++k)
      if (free_[k] == y) ky = k;
    ll += (ky >= 0 ? mu[ky] : 0.0) - lse;
    if (!grad) continue;
    for (int k = 0; k < K; ++k) {
      g[k] = (k == ky ? 1.0 : 0.0) - std::exp(mu[k] - lse);
      d_alpha(k) += g[k];
      if (s >= 0) {
        d_area(s, k) += g[k];
        if (V > 0) d_zeta(v, k) += g[k] * spec_.interaction->nu(s, free_[k]);
      } else {
        d_xi_ns(k) += g[k];
      }
      for (int e = 0; e < E; ++e) d_eff[e](data_.level[i][e], k) += g[k];
      if (L.poll_raw >= 0) d_poll(p, k) += g[k];
    }
  }
  if (!prior) {
    if (!std::isfinite(ll)) throw Error(Errc::NonFinite, "log-likelihood is not finite");
    return ll;
  }

  double lp = ll;
  Eigen::VectorXd gr;
  if (grad) gr = Eigen::VectorXd::Zero(L.dim);
  auto normal = [&](int idx) {
    double x = th[idx];
    lp += -0.5 * x * x - kHalfLog2Pi;
    return -x;
  };
  auto half_normal_log = [&](int idx, double sigma) {
    lp += kLogHalfNormal - 0.5 * sigma * sigma + th[idx];  // includes the log-Jacobian of exp
    return 1.0 - sigma * sigma;
  };

  for (int k = 0; k < K; ++k) {
    double dg = normal(L.alpha + k);
    if (grad) gr[L.alpha + k] = d_alpha(k) + dg;
  }
  if (area_on) {
    for (int k = 0; k < K; ++k) {
      const double sg = sig_l(k), x = xi(k);
      const double c1 = std::sqrt(1.0 - x), c2 = std::sqrt(x);
      double ga = half_normal_log(L.area_log_sigma + k, sg);
      for (int s = 0; s < S; ++s) ga += d_area(s, k) * lambda(s, k);
      if (grad) gr[L.area_log_sigma + k] = ga;
      if (L.area_logit_xi >= 0) {
        const double b = th[L.area_logit_xi + k];
        const double log_x = -softplus(-b), log_1mx = -softplus(b);
        lp += -kLogPi + 0.5 * log_x + 0.5 * log_1mx;  // Beta(1/2,1/2) plus log-Jacobian
        double gb = 0.5 - x;
        for (int s = 0; s < S; ++s) {
          if (icar_.isolated[s]) continue;
          double phi = th[L.area_phi + k * S + s];
          gb += d_area(s, k) * sg * (-phi * x * c1 / 2.0 + psi(s, k) * icar_root_[s] * (1.0 - x) * c2 / 2.0);
        }
        if (grad) gr[L.area_logit_xi + k] = gb;
      }
      Eigen::VectorXd d_psi = Eigen::VectorXd::Zero(S);
      for (int s = 0; s < S; ++s) {
        const int idx = L.area_phi + k * S + s;
        double dg = normal(idx);
        double scale = icar_.isolated[s] ? sg : sg * c1;
        if (grad) gr[idx] = d_area(s, k) * scale + dg;
        if (!icar_.isolated[s]) d_psi(s) = d_area(s, k) * sg * c2 * icar_root_[s];
      }
      if (L.area_free > 0) {
        double icar = 0.0;
        for (auto [a, b2] : icar_.edges) {
          double diff = psi(a, k) - psi(b2, k);
          icar += diff * diff;
          d_psi(a) -= diff;
          d_psi(b2) += diff;
        }
        lp += -0.5 * icar;
        if (grad) gr.segment(L.area_u + k * L.area_free, L.area_free) = icar_.basis.transpose() * d_psi;
      }
    }
  }
  for (int e = 0; e < E; ++e) {
    const int Le = static_cast<int>(eff[e].rows());
    const bool rw = spec_.effects[e].prior == EffectPrior::RandomWalk;
    for (int k = 0; k < K; ++k) {
      const double sg = sig_e(e, k);
      double ga = half_normal_log(L.effect_log_sigma[e] + k, sg);
      for (int l = 0; l < Le; ++l) ga += d_eff[e](l, k) * eff[e](l, k);
      if (grad) gr[L.effect_log_sigma[e] + k] = ga;
      double tail = 0.0;
      for (int l = Le - 1; l >= 0; --l) {
        const int idx = L.effect_raw[e] + k * Le + l;
        double dg = normal(idx);
        tail = rw ? tail + d_eff[e](l, k) : d_eff[e](l, k);
        if (grad) gr[idx] = sg * tail + dg;
      }
    }
  }
  for (int k = 0; k < K; ++k) {
    const auto& cov = spec_.covariates[free_[k]];
    for (std::size_t p = 0; p < cov.size(); ++p) {
      const int idx = L.beta[k] + static_cast<int>(p);
      double dg = normal(idx);
      if (grad) gr[idx] = spec_.z.col(cov[p]).dot(d_area.col(k)) + dg;
    }
  }
  for (int k = 0; k < K && V > 0; ++k) {
    double ga = half_normal_log(L.zeta_log_sigma + k, sig_z(k));
    for (int v = 0; v < V; ++v) {
      ga += d_zeta(v, k) * zeta(v, k);
      const int idx = L.zeta_raw + k * V + v;
      double dg = normal(idx);
      if (grad) gr[idx] = sig_z(k) * d_zeta(v, k) + dg;
    }
    if (grad) gr[L.zeta_log_sigma + k] = ga;
  }
  if (L.no_state >= 0)
    for (int k = 0; k < K; ++k) {
      double dg = normal(L.no_state + k);
      if (grad) gr[L.no_state + k] = d_xi_ns(k) + dg;
    }
  if (L.poll_raw >= 0) {
    double ga = half_normal_log(L.poll_log_sigma, sig_p);
    for (int k = 0; k < K; ++k) {
      double tail = 0.0;
      for (int p = P - 1; p >= 0; --p) {
        ga += d_poll(p, k) * poll(p, k);
        const int idx = L.poll_raw + k * P + p;
        double dg = normal(idx);
        tail += d_poll(p, k);
        if (grad) gr[idx] = sig_p * tail + dg;
      }
    }
    if (grad) gr[L.poll_log_sigma] = ga;
  }

  if (!std::isfinite(lp)) throw Error(Errc::NonFinite, "log density is not finite");
  if (grad) {
    if (!gr.allFinite()) throw Error(Errc::NonFinite, "gradient is not finite");
    *grad = std::move(gr);
  }
  return lp;
}

ParameterVector MrpModel::unpack(const Eigen::VectorXd& th) const {
  const auto& L = layout_;
  const int J = spec_.J(), K = L.K, S = spec_.S();
  ParameterVector p;
  p.alpha = Eigen::VectorXd::Zero(J);
  p.lambda = p.phi = p.psi = Eigen::MatrixXd::Zero(S, J);
  p.sigma_lambda = p.xi = Eigen::VectorXd::Zero(J);
  const int P = static_cast<int>(spec_.covariate_names.size());
  p.beta = Eigen::MatrixXd::Zero(P, J);
  const int V = spec_.interaction ? static_cast<int>(spec_.interaction->levels.size()) : 0;
  p.zeta = Eigen::MatrixXd::Zero(V, J);
  p.zeta_sigma = Eigen::VectorXd::Zero(J);
  p.no_state = Eigen::VectorXd::Zero(J);
  p.poll = Eigen::MatrixXd::Zero(spec_.n_polls, J);
  for (const auto& e : spec_.effects) {
    p.effect.push_back(Eigen::MatrixXd::Zero(e.levels.size(), J));
    p.effect_sigma.push_back(Eigen::VectorXd::Zero(J));
  }
  if (L.poll_log_sigma >= 0) p.poll_sigma = std::exp(th[L.poll_log_sigma]);

  for (int k = 0; k < K; ++k) {
    const int j = free_[k];
    p.alpha(j) = th[L.alpha + k];
    if (L.area_log_sigma >= 0) {
      const double sg = std::exp(th[L.area_log_sigma + k]);
      const double x = L.area_logit_xi >= 0 ? 1.0 / (1.0 + std::exp(-th[L.area_logit_xi + k])) : 0.0;
      p.sigma_lambda(j) = sg;
      p.xi(j) = x;
      if (L.area_free > 0) p.psi.col(j) = icar_.basis * th.segment(L.area_u + k * L.area_free, L.area_free);
      for (int s = 0; s < S; ++s) {
        p.phi(s, j) = th[L.area_phi + k * S + s];
        p.lambda(s, j) = icar_.isolated[s]
                             ? sg * p.phi(s, j)
                             : sg * (p.phi(s, j) * std::sqrt(1.0 - x) + p.psi(s, j) * std::sqrt(x) * icar_root_[s]);
      }
    }
    for (std::size_t e = 0; e < spec_.effects.size(); ++e) {
      const int Le = static_cast<int>(spec_.effects[e].levels.size());
      const double sg = std::exp(th[L.effect_log_sigma[e] + k]);
      p.effect_sigma[e](j) = sg;
      double acc = 0.0;
      for (int l = 0; l < Le; ++l) {
        double r = th[L.effect_raw[e] + k * Le + l];
        acc = spec_.effects[e].prior == EffectPrior::RandomWalk ? acc + r : r;
        p.effect[e](l, j) = sg * acc;
      }
    }
    const auto& cov = spec_.covariates[j];
    for (std::size_t c = 0; c < cov.size(); ++c) p.beta(cov[c], j) = th[L.beta[k] + c];
    if (V > 0) {
      p.zeta_sigma(j) = std::exp(th[L.zeta_log_sigma + k]);
      for (int v = 0; v < V; ++v) p.zeta(v, j) = p.zeta_sigma(j) * th[L.zeta_raw + k * V + v];
    }
    if (L.no_state >= 0) p.no_state(j) = th[L.no_state + k];
    if (L.poll_raw >= 0) {
      double acc = 0.0;
      for (int q = 0; q < spec_.n_polls; ++q) {
        acc += th[L.poll_raw + k * spec_.n_polls + q];
        p.poll(q, j) = p.poll_sigma * acc;
      }
    }
  }
  return p;
}

std::vector<std::string> MrpModel::scalar_names() const {
  std::vector<std::string> names;
  const auto& L = layout_;
  for (int j : free_) {
    const auto& c = spec_.choices[j];
    names.push_back("alpha[" + c + "]");
    if (L.area_log_sigma >= 0) {
      names.push_back("sigma_lambda[" + c + "]");
      names.push_back("xi[" + c + "]");
      for (const auto& a : spec_.areas) names.push_back("lambda[" + a + "," + c + "]");
      for (const auto& a : spec_.areas) names.push_back("phi[" + a + "," + c + "]");
      for (const auto& a : spec_.areas) names.push_back("psi[" + a + "," + c + "]");
    }
    for (const auto& e : spec_.effects) {
      names.push_back("sigma[" + e.title + "," + c + "]");
      for (const auto& l : e.levels) names.push_back((e.prior == EffectPrior::RandomWalk ? "eta[" : "gamma[") +
                                                     e.title + ":" + l + "," + c + "]");
    }
    for (int p : spec_.covariates[j]) names.push_back("beta[" + spec_.covariate_names[p] + "," + c + "]");
    if (spec_.interaction) {
      names.push_back("sigma_zeta[" + c + "]");
      for (const auto& l : spec_.interaction->levels) names.push_back("zeta[" + l + "," + c + "]");
    }
    if (L.no_state >= 0) names.push_back("Xi[" + c + "]");
    if (L.poll_raw >= 0)
      for (int q = 0; q < spec_.n_polls; ++q) names.push_back("eta_poll[" + std::to_string(q) + "," + c + "]");
  }
  if (layout_.poll_log_sigma >= 0) names.push_back("sigma_poll");
  return names;
}

Eigen::VectorXd MrpModel::flatten(const ParameterVector& p) const {
  std::vector<double> out;
  const auto& L = layout_;
  for (int j : free_) {
    out.push_back(p.alpha(j));
    if (L.area_log_sigma >= 0) {
      out.push_back(p.sigma_lambda(j));
      out.push_back(p.xi(j));
      for (int s = 0; s < spec_.S(); ++s) out.push_back(p.lambda(s, j));
      for (int s = 0; s < spec_.S(); ++s) out.push_back(p.phi(s, j));
      for (int s = 0; s < spec_.S(); ++s) out.push_back(p.psi(s, j));
    }
    for (std::size_t e = 0; e < spec_.effects.size(); ++e) {
      out.push_back(p.effect_sigma[e](j));
      for (Eigen::Index l = 0; l < p.effect[e].rows(); ++l) out.push_back(p.effect[e](l, j));
    }
    for (int c : spec_.covariates[j]) out.push_back(p.beta(c, j));
    if (spec_.interaction) {
      out.push_back(p.zeta_sigma(j));
      for (Eigen::Index v = 0; v < p.zeta.rows(); ++v) out.push_back(p.zeta(v, j));
    }
    if (L.no_state >= 0) out.push_back(p.no_state(j));
    if (L.poll_raw >= 0)
      for (int q = 0; q < spec_.n_polls; ++q) out.push_back(p.poll(q, j));
  }
  if (L.poll_log_sigma >= 0) out.push_back(p.poll_sigma);
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

std::pair<double, Eigen::VectorXd> log_posterior(const Eigen::VectorXd& theta, const TrainingData& data,
                                                 const ModelSpec& spec) {
  MrpModel model(spec, data);
  Eigen::VectorXd grad;
  double v = model.log_density(theta, &grad);
  return {v, grad};
}

}  // namespace possum
