// One PASS/FAIL line per acceptance criterion. Exit status is the number of failures.
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include <unistd.h>

#include <boost/math/distributions/chi_squared.hpp>

#include "commands.hpp"
#include "possum/eval.hpp"
#include "possum/filters.hpp"
#include "possum/frame_builder.hpp"
#include "possum/graph.hpp"
#include "possum/model.hpp"
#include "possum/pool.hpp"
#include "possum/prompts.hpp"
#include "possum/sampler.hpp"
#include "possum/simharness.hpp"
#include "possum/util.hpp"

using namespace possum;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (!pass) detail << "; ";
      detail << what;
      pass = false;
    }
  }
};

int failures = 0;

void report(const std::string& name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  auto t0 = Clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.require(false, std::string("exception: ") + e.what());
  }
  const std::string info = o.detail.str();
  std::printf("%s  %-28s  %.1fs  %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), seconds_since(t0), info.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

// --- hand oracles ------------------------------------------------------------

double oracle_bias(const std::vector<double>& p, const std::vector<double>& o) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] - o[i];
  return s / p.size();
}

double oracle_rmse(const std::vector<double>& p, const std::vector<double>& o) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - o[i]) * (p[i] - o[i]);
  return std::sqrt(s / p.size());
}

// rank = 1 + #smaller + (#equal others) / 2
std::vector<double> oracle_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, same = 0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x[j] < x[i]) less += 1;
      if (j != i && x[j] == x[i]) same += 1;
    }
    r[i] = 1 + less + same / 2;
  }
  return r;
}

double oracle_spearman(const std::vector<double>& p, const std::vector<double>& o) {
  auto a = oracle_ranks(p), b = oracle_ranks(o);
  const double n = a.size();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// --- criteria ----------------------------------------------------------------

void metric_suite(Outcome& o) {
  auto t0 = Clock::now();
  std::mt19937_64 rng(20241105);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  double worst = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const int n = 3 + static_cast<int>(rng() % 10);
    std::vector<double> p(n), ob(n);
    std::vector<AreaEstimate> est(n);
    for (int i = 0; i < n; ++i) {
      p[i] = u(rng);
      ob[i] = u(rng);
      if (inst % 4 == 0) p[i] = std::round(p[i] * 10) / 10;  // ties
      est[i] = {"a" + std::to_string(i), p[i], p[i] - std::abs(u(rng)), p[i] + std::abs(u(rng)), {}};
    }
    int inside = 0;
    for (int i = 0; i < n; ++i) inside += est[i].lo <= ob[i] && ob[i] <= est[i].hi;
    worst = std::max(worst, std::abs(bias(p, ob) - oracle_bias(p, ob)));
    worst = std::max(worst, std::abs(rmse(p, ob) - oracle_rmse(p, ob)));
    worst = std::max(worst, std::abs(coverage90(est, ob) - static_cast<double>(inside) / n));
    auto rp = oracle_ranks(p);
    if (std::adjacent_find(rp.begin(), rp.end(), std::not_equal_to<>()) != rp.end())
      worst = std::max(worst, std::abs(spearman(p, ob) - oracle_spearman(p, ob)));
  }
  o.detail << "max |metric - oracle| " << worst;
  o.require(worst <= 1e-10, "metric mismatch");

  std::mt19937_64 g(7);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> a(100000), b(100000);
  for (auto& x : a) x = z(g);
  for (auto& x : b) x = 1.0 + z(g);
  const double v = ovl(a, b), closed = 2 * normal_cdf(-0.5);
  o.detail << "; OVL " << v << " (closed form " << closed << ")";
  o.require(std::abs(v - 0.6171) <= 0.01, "OVL outside 0.6171 +- 0.01");

  const double cb = change_bias(2.1, 2.3);
  o.detail << "; change bias " << cb;
  o.require(std::abs(cb - (-0.2)) <= 1e-12, "change bias is not -0.2");
  o.require(seconds_since(t0) < 30, "over 30 s");
}

ModelSpec gradient_spec() {
  ModelSpec m;
  m.choices = {"D", "R", "O"};
  m.reference = 0;
  m.areas = {"a", "b", "c", "d", "e"};
  m.graph = AreaGraph::from_edges(5, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
  Eigen::MatrixXd z(5, 2);
  z << 0.3, -1, 1.2, 0.4, -0.5, 0.9, 0.1, -0.2, -1.1, 0.5;
  m.z = standardize_columns(z);
  m.covariate_names = {"z1", "z2"};
  m.covariates = {{}, {0, 1}, {0}};
  m.effects = {{"age", EffectPrior::RandomWalk, {"y", "m", "o", "x"}}, {"sex", EffectPrior::Unstructured, {"f", "m"}}};
  InteractionSpec in;
  in.title = "past";
  in.levels = {"D", "R", "N"};
  Eigen::MatrixXd nu(5, 3);
  nu << 0.4, 0.5, 0.1, 0.3, 0.6, 0.1, 0.5, 0.4, 0.1, 0.45, 0.45, 0.1, 0.2, 0.7, 0.1;
  in.nu = standardize_columns(nu);
  m.interaction = in;
  m.include_no_state = true;
  m.include_poll_walk = true;
  m.n_polls = 3;
  return m;
}

std::vector<Observation> random_observations(const ModelSpec& m, int n, std::uint64_t seed, bool stateless) {
  std::mt19937_64 rng(seed);
  std::vector<Observation> obs;
  for (int i = 0; i < n; ++i) {
    Observation ob;
    if (!stateless || i % 7 != 0) ob.area = m.areas[rng() % m.areas.size()];
    for (const auto& e : m.effects) ob.attrs[e.title] = e.levels[rng() % e.levels.size()];
    if (m.interaction) ob.attrs[m.interaction->title] = m.interaction->levels[rng() % m.interaction->levels.size()];
    ob.choice = m.choices[rng() % m.choices.size()];
    ob.poll = m.include_poll_walk ? static_cast<int>(rng() % m.n_polls) : 0;
    obs.push_back(ob);
  }
  return obs;
}

void sampler_correctness(Outcome& o) {
  auto t0 = Clock::now();
  // (a) gradient against central differences
  {
    auto spec = gradient_spec();
    auto data = build_training_data(spec, random_observations(spec, 60, 3, true));
    MrpModel model(spec, data);
    std::mt19937_64 rng(11);
    std::normal_distribution<double> z(0.0, 0.7);
    double worst = 0;
    for (int p = 0; p < 50; ++p) {
      Eigen::VectorXd th(model.dim());
      for (int i = 0; i < th.size(); ++i) th[i] = z(rng);
      auto [f, g] = log_posterior(th, data, spec);
      for (int i = 0; i < th.size(); ++i) {
        const double h = 1e-5;
        Eigen::VectorXd up = th, dn = th;
        up[i] += h;
        dn[i] -= h;
        const double fd = (log_posterior(up, data, spec).first - log_posterior(dn, data, spec).first) / (2 * h);
        worst = std::max(worst, std::abs(g[i] - fd) / std::max({1.0, std::abs(fd), std::abs(g[i])}));
      }
    }
    o.detail << "(a) max rel grad err " << worst;
    o.require(worst <= 1e-5, "gradient mismatch");
  }
  // (b) intercept-only two-choice model against a dense grid
  {
    ModelSpec m;
    m.choices = {"A", "B"};
    m.areas = {"X"};
    m.graph = AreaGraph::from_edges(1, {});
    m.include_area_effect = false;
    m.include_no_state = false;
    m.z = Eigen::MatrixXd(1, 0);
    m.covariates = {{}, {}};
    std::vector<Observation> obs;
    const int n = 100, k = 30;
    for (int i = 0; i < n; ++i) obs.push_back({{}, std::string("X"), i < k ? "B" : "A", 0});
    MrpModel model(m, build_training_data(m, obs));
    SamplerSettings s{4, 3000, 1000, 1, 10, 0.8, 5, 1};
    auto post = sample(model, s);
    std::vector<double> a;
    for (const auto& d : post.draws) a.push_back(d.alpha(1));
    double mu = mean(a), var = 0;
    for (double x : a) var += (x - mu) * (x - mu);
    const double sd = std::sqrt(var / (a.size() - 1));
    // grid oracle: N(0,1) prior times the binomial likelihood
    double zsum = 0, m1 = 0, m2 = 0, lmax = -1e300;
    const int G = 200001;
    std::vector<double> lg(G);
    for (int i = 0; i < G; ++i) {
      const double x = -6 + 12.0 * i / (G - 1);
      lg[i] = -0.5 * x * x - k * std::log1p(std::exp(-x)) - (n - k) * std::log1p(std::exp(x));
      lmax = std::max(lmax, lg[i]);
    }
    for (int i = 0; i < G; ++i) {
      const double x = -6 + 12.0 * i / (G - 1), w = std::exp(lg[i] - lmax);
      zsum += w;
      m1 += w * x;
      m2 += w * x * x;
    }
    const double gmu = m1 / zsum, gsd = std::sqrt(m2 / zsum - gmu * gmu);
    o.detail << "; (b) mean " << mu << " vs " << gmu << ", sd " << sd << " vs " << gsd;
    o.require(std::abs(mu - gmu) <= 0.02 && std::abs(sd - gsd) <= 0.02, "grid oracle mismatch");
  }
  // (c) simulation-based calibration
  {
    ModelSpec m;
    m.choices = {"A", "B"};
    m.areas = {"X", "Y"};
    m.graph = AreaGraph::from_edges(2, {{0, 1}});
    m.include_area_effect = false;
    m.include_no_state = false;
    m.z = Eigen::MatrixXd(2, 0);
    m.covariates = {{}, {}};
    m.effects = {{"g", EffectPrior::Unstructured, {"l1", "l2", "l3"}}};
    const int reps = 200, draws = 99, bins = 10;
    std::vector<int> hist_alpha(bins, 0), hist_gamma(bins, 0);
    int failed = 0;
    for (int r = 0; r < reps; ++r) {
      auto rng = make_rng(9000 + r, {"sbc"});
      std::normal_distribution<double> z(0.0, 1.0);
      const double alpha = z(rng), sigma = std::abs(z(rng));
      double gamma[3];
      for (double& g : gamma) g = sigma * z(rng);
      std::vector<Observation> obs;
      for (int i = 0; i < 30; ++i) {
        const int l = i % 3;
        const double p = 1.0 / (1.0 + std::exp(-(alpha + gamma[l])));
        obs.push_back({{{"g", m.effects[0].levels[l]}}, m.areas[i % 2], uniform01(rng) < p ? "B" : "A", 0});
      }
      try {
        MrpModel model(m, build_training_data(m, obs));
        SamplerSettings s{3, 630, 300, 10, 10, 0.8, static_cast<std::uint64_t>(r + 1), 1};
        auto post = sample(model, s);
        if (static_cast<int>(post.draws.size()) != draws) throw std::runtime_error("unexpected draw count");
        int ra = 0, rg = 0;
        for (const auto& d : post.draws) {
          ra += d.alpha(1) < alpha;
          rg += d.effect[0](0, 1) < gamma[0];
        }
        ++hist_alpha[ra * bins / (draws + 1)];
        ++hist_gamma[rg * bins / (draws + 1)];
      } catch (const std::exception&) {
        ++failed;
      }
    }
    auto pvalue = [&](const std::vector<int>& h) {
      const double e = static_cast<double>(reps - failed) / bins;
      double chi = 0;
      for (int c : h) chi += (c - e) * (c - e) / e;
      return 1.0 - boost::math::cdf(boost::math::chi_squared(bins - 1), chi);
    };
    const double pa = pvalue(hist_alpha), pg = pvalue(hist_gamma);
    o.detail << "; (c) SBC p(alpha) " << pa << ", p(gamma1) " << pg << ", failed fits " << failed;
    o.require(failed == 0 && pa > 0.01 && pg > 0.01, "SBC uniformity rejected");
  }
  o.require(seconds_since(t0) < 15 * 60, "over 15 min");
}

AreaGraph random_connected_graph(int n, std::mt19937_64& rng) {
  std::vector<std::pair<int, int>> edges;
  for (int v = 1; v < n; ++v) edges.emplace_back(static_cast<int>(rng() % v), v);
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (uniform01(rng) < 0.25 &&
          std::find(edges.begin(), edges.end(), std::make_pair(a, b)) == edges.end() &&
          std::find(edges.begin(), edges.end(), std::make_pair(b, a)) == edges.end())
        edges.emplace_back(a, b);
  return AreaGraph::from_edges(n, edges);
}

void icar_bym2(Outcome& o) {
  std::mt19937_64 rng(17);
  double worst = 0;
  for (int t = 0; t < 10; ++t) {
    const int n = 2 + static_cast<int>(rng() % 11);
    auto g = random_connected_graph(n, rng);
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n, n);
    for (auto [a, b] : g.edges()) {
      Q(a, b) -= 1;
      Q(b, a) -= 1;
      Q(a, a) += 1;
      Q(b, b) += 1;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Q, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::VectorXd sv = svd.singularValues();
    for (int i = 0; i < sv.size(); ++i) sv[i] = sv[i] > 1e-9 ? 1.0 / sv[i] : 0.0;
    Eigen::MatrixXd pinv = svd.matrixV() * sv.asDiagonal() * svd.matrixU().transpose();
    double lg = 0;
    for (int i = 0; i < n; ++i) lg += std::log(pinv(i, i));
    const double eps = std::exp(lg / n), got = icar_scaling_factor(g).at(0);
    worst = std::max(worst, std::abs(got - eps) / eps);
  }
  o.detail << "max rel scaling err " << worst;
  o.require(worst <= 1e-10, "scaling factor mismatch");

  // sum-to-zero of ψ within each component on every retained draw
  ModelSpec m;
  m.choices = {"D", "R", "O"};
  m.areas = {"a", "b", "c", "d", "e", "f", "g"};
  m.graph = AreaGraph::from_edges(7, {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {1, 3}, {4, 5}});
  m.z = Eigen::MatrixXd(7, 0);
  m.covariates = {{}, {}, {}};
  m.include_no_state = false;
  auto obs = random_observations(m, 120, 5, false);
  MrpModel model(m, build_training_data(m, obs));
  auto post = sample(model, SamplerSettings{2, 400, 200, 1, 10, 0.8, 3, 1});
  double sum_err = 0;
  const std::vector<std::vector<int>> comps{{0, 1, 2, 3}, {4, 5}};
  for (const auto& d : post.draws)
    for (int j = 0; j < 3; ++j)
      for (const auto& c : comps) {
        double s = 0;
        for (int a : c) s += d.psi(a, j);
        sum_err = std::max(sum_err, std::abs(s));
      }
  o.detail << "; max |sum psi| " << sum_err << " over " << post.draws.size() << " draws";
  o.require(!post.draws.empty() && sum_err <= 1e-10, "psi does not sum to zero");
}

StratFrame grid_frame(const std::vector<std::pair<std::string, int>>& vars, std::mt19937_64& rng) {
  StratFrame f;
  for (const auto& [t, n] : vars) f.attribute_schema.push_back(t);
  std::vector<int> idx(vars.size(), 0);
  int id = 1;
  while (true) {
    StratCell c;
    c.cell_id = id++;
    for (std::size_t v = 0; v < vars.size(); ++v) c.attributes[vars[v].first] = "c" + std::to_string(idx[v]);
    c.weight = 0.1 + 9.9 * uniform01(rng);
    f.cells.push_back(c);
    std::size_t v = 0;
    while (v < vars.size() && ++idx[v] == vars[v].second) idx[v++] = 0;
    if (v == vars.size()) break;
  }
  return f;
}

double oracle_margin_error(const StratFrame& f, const std::vector<MarginTarget>& targets) {
  double total = 0, worst = 0;
  for (const auto& c : f.cells) total += c.weight;
  for (const auto& t : targets)
    for (const auto& [cat, share] : t.shares) {
      double m = 0;
      for (const auto& c : f.cells)
        if (c.attributes.at(t.variable) == cat) m += c.weight;
      worst = std::max(worst, std::abs(m / total - share));
    }
  return worst;
}

void frame_machinery(Outcome& o) {
  std::mt19937_64 rng(23);
  // 2x2 closed-form limit: margins fitted, odds ratio of the seed kept
  double worst22 = 0;
  for (int t = 0; t < 20; ++t) {
    auto f = grid_frame({{"a", 2}, {"b", 2}}, rng);
    const double r = 0.1 + 0.8 * uniform01(rng), c = 0.1 + 0.8 * uniform01(rng);
    std::vector<MarginTarget> targets{{"*", "a", {{"c0", r}, {"c1", 1 - r}}}, {"*", "b", {{"c0", c}, {"c1", 1 - c}}}};
    auto w = [&](const StratFrame& fr, int a, int b) {
      for (const auto& cell : fr.cells)
        if (cell.attributes.at("a") == "c" + std::to_string(a) && cell.attributes.at("b") == "c" + std::to_string(b))
          return cell.weight;
      return std::nan("");
    };
    const double N = f.total_weight(), R1 = r * N, C1 = c * N;
    const double OR = w(f, 0, 0) * w(f, 1, 1) / (w(f, 0, 1) * w(f, 1, 0));
    // (1-OR) x^2 + (N - R1 - C1 + OR (R1 + C1)) x - OR R1 C1 = 0
    const double qa = 1 - OR, qb = N - R1 - C1 + OR * (R1 + C1), qc = -OR * R1 * C1;
    double x;
    if (std::abs(qa) < 1e-14) x = -qc / qb;
    else {
      const double disc = std::sqrt(qb * qb - 4 * qa * qc);
      const double x1 = (-qb + disc) / (2 * qa), x2 = (-qb - disc) / (2 * qa);
      const double lo = std::max(0.0, R1 + C1 - N), hi = std::min(R1, C1);
      x = (x1 >= lo - 1e-12 && x1 <= hi + 1e-12) ? x1 : x2;
    }
    const double expect[2][2] = {{x, R1 - x}, {C1 - x, N - R1 - C1 + x}};
    auto raked = rake(f, targets, 1e-13, 1000);
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) worst22 = std::max(worst22, std::abs(w(raked, a, b) - expect[a][b]));
  }
  o.detail << "2x2 max err " << worst22;
  o.require(worst22 <= 1e-9, "2x2 closed form mismatch");

  int max_sweeps = 0;
  double max_err = 0;
  for (int t = 0; t < 50; ++t) {
    std::vector<std::pair<std::string, int>> vars;
    for (int v = 0; v < 4; ++v) vars.emplace_back("v" + std::to_string(v), 2 + static_cast<int>(rng() % 3));
    auto f = grid_frame(vars, rng);
    std::vector<MarginTarget> targets;
    for (const auto& [title, n] : vars) {
      MarginTarget mt{"*", title, {}};
      double s = 0;
      std::vector<double> raw(n);
      for (auto& x : raw) s += x = 0.2 + uniform01(rng);
      for (int k = 0; k < n; ++k) mt.shares["c" + std::to_string(k)] = raw[k] / s;
      targets.push_back(mt);
    }
    auto res = rake_with_trace(f, targets, RakeOptions{1e-6, 1000, "state"});
    max_sweeps = std::max(max_sweeps, res.sweeps);
    max_err = std::max(max_err, oracle_margin_error(res.frame, targets));
  }
  o.detail << "; 4-margin max err " << max_err << ", max sweeps " << max_sweeps;
  o.require(max_err < 1e-6 && max_sweeps <= 1000, "IPF did not converge");

  double worst_total = 0;
  for (int t = 0; t < 10; ++t) {
    auto f = grid_frame({{"state", 3}, {"sex", 2}, {"age", 4}}, rng);
    std::vector<AuxRecord> aux;
    const char* votes[] = {"D", "R", "N"};
    for (int i = 0; i < 200; ++i)
      aux.push_back({{{"state", "c" + std::to_string(rng() % 3)},
                      {"sex", "c" + std::to_string(rng() % 2)},
                      {"age", "c" + std::to_string(rng() % 4)}},
                     votes[rng() % 3]});
    auto sm = smooth_crosstabs(aux, {"sex", "age"}, SmoothingOptions{}, &f);
    auto ext = extend_frame(f, sm, "vote2020");
    worst_total = std::max(worst_total, std::abs(ext.total_weight() - f.total_weight()) / f.total_weight());
  }
  o.detail << "; extend_frame rel total err " << worst_total;
  o.require(worst_total <= 1e-9, "extend_frame changed the total weight");

  bool exact = true;
  for (int omega : {1500, 1000, 37, 1, 2500}) {
    auto f = grid_frame({{"state", 4}, {"sex", 2}, {"age", 6}}, rng);
    auto q = sample_daughter_frame(f, omega, 100 + omega);
    exact = exact && q.total_quota() == omega;
  }
  o.detail << "; daughter quotas exact " << (exact ? "yes" : "no");
  o.require(exact, "daughter quotas do not sum to the target");
}

std::string random_word(std::mt19937_64& rng) {
  static const std::vector<std::string> words{"voted", "for", "the", "Republican", "Party", "candidate,", "25k",
                                              "between", "50k-75k", "older", "65", "or", "white", "native",
                                              "American", "non-college", "stayed", "home", "$100k", "D.C."};
  return words[rng() % words.size()];
}

void pipeline_fidelity(Outcome& o) {
  std::mt19937_64 rng(29);
  // concurrent quota acceptance
  {
    auto f = grid_frame({{"state", 4}, {"sex", 5}}, rng);
    std::map<int, int> quota;
    for (const auto& c : f.cells) quota[c.cell_id] = static_cast<int>(rng() % 30);
    QuotaState qs(f, quota);
    const int attempts = 10000, threads = 8;
    std::vector<int> target(attempts);
    for (auto& t : target) t = static_cast<int>(rng() % f.cells.size());
    std::vector<std::atomic<int>> accepted(f.cells.size());
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (int i; (i = next.fetch_add(1)) < attempts;) {
          auto d = quota_filter(f.cells[target[i]].attributes, qs);
          if (d.outcome == QuotaOutcome::Accepted) accepted[target[i]].fetch_add(1);
        }
      });
    for (auto& th : pool) th.join();
    bool ok = true;
    for (std::size_t c = 0; c < f.cells.size(); ++c) {
      const int id = f.cells[c].cell_id;
      const int tries = static_cast<int>(std::count(target.begin(), target.end(), static_cast<int>(c)));
      ok = ok && qs.counter_of(id) <= qs.quota_of(id) && accepted[c] == qs.counter_of(id) &&
           qs.counter_of(id) == std::min(tries, qs.quota_of(id));
    }
    o.detail << "quota counters " << (ok ? "exact" : "wrong");
    o.require(ok, "quota counter exceeded or lost updates");
  }
  // quota-table rows
  {
    StratFrame f;
    f.attribute_schema = {"sex", "age", "income", "race", "vote2020"};
    auto cell = [](int id, const char* s, const char* a, const char* i, const char* r, const char* v) {
      return StratCell{id, {{"sex", s}, {"age", a}, {"income", i}, {"race", r}, {"vote2020", v}}, 1.0};
    };
    f.cells = {cell(1, "male", "65 or older", "up to 25k", "black", "D"),
               cell(2, "female", "25 to 34", "between 25k and 50k", "white", "D"),
               cell(3, "male", "35 to 44", "between 75k and 100k", "hispanic", "D"),
               cell(4, "female", "45 to 54", "between 75k and 100k", "white", "D"),
               cell(5, "female", "35 to 44", "between 25k and 50k", "black", "D")};
    QuotaState qs(f, {{1, 2}, {2, 3}, {3, 2}, {4, 6}, {5, 1}});
    const int counters[] = {0, 3, 2, 6, 1};
    for (int c = 1; c <= 5; ++c) qs.set_counter(c, counters[c - 1]);
    auto d1 = quota_filter(f.cells[0].attributes, qs), d2 = quota_filter(f.cells[1].attributes, qs);
    const bool ok = d1.outcome == QuotaOutcome::Accepted && d1.cell_id == 1 &&
                    d2.outcome == QuotaOutcome::Rejected && d2.cell_id == 2 && qs.counter_of(1) == 1 &&
                    qs.counter_of(2) == 3;
    o.detail << "; quota table " << (ok ? "accept/reject" : "wrong");
    o.require(ok, "quota table decisions");
  }
  // timeline depth and query weights
  {
    const int dp = timeline_depth(CaptureKind::political(), 20, 2.0);
    const int dt = timeline_depth(CaptureKind::trending("x"), 20, 2.0);
    o.detail << "; depths " << dp << "/" << dt;
    o.require(dp == 20 && dt == 40, "timeline depth");
    auto plan = build_query_plan("trump OR harris", {"a", "b", "c", "d"}, 40000);
    std::vector<int> w;
    for (const auto& q : plan.queries) w.push_back(q.weight);
    o.require(w == std::vector<int>{40000, 10000, 10000, 10000, 10000}, "query weights");
  }
  // render -> parse round trips
  {
    int lost = 0;
    for (int t = 0; t < 1000; ++t) {
      std::vector<FeatureDef> defs;
      const int nf = 1 + static_cast<int>(rng() % 5);
      std::string listing;
      for (int fi = 0; fi < nf; ++fi) {
        std::string title = "FEATURE" + std::to_string(fi) + (rng() % 2 ? " - VOTE CHOICE" : "");
        const int no = 2 + static_cast<int>(rng() % 6);
        std::vector<FeatureOption> opts;
        std::string prefix(1, static_cast<char>('A' + rng() % 26));
        for (int k = 0; k < no; ++k) {
          std::string cat = random_word(rng);
          for (int w = static_cast<int>(rng() % 6); w > 0; --w) cat += " " + random_word(rng);
          cat += " #" + std::to_string(k);
          opts.push_back({prefix + std::to_string(k + 1), cat});
        }
        defs.emplace_back(title, opts);
        listing += render_feature_block(defs.back()) + "\n";
      }
      auto parsed_defs = parse_feature_listing(listing);
      if (parsed_defs != defs) ++lost;
      std::string answer;
      std::vector<FeatureValue> values;
      for (const auto& d : defs) {
        const auto& opt = d.options()[rng() % d.options().size()];
        FeatureValue v{d.title(), opt.symbol, opt.category, "Because " + random_word(rng) + " " + random_word(rng) + ".",
                       static_cast<int>(rng() % 101)};
        values.push_back(v);
        answer += render_answer(v) + "\n";
      }
      auto parsed = parse_annotation(answer, defs);
      if (parsed.entries != values || !parsed.warnings.empty()) ++lost;
    }
    o.detail << "; round-trip losses " << lost;
    o.require(lost == 0, "prompt round trip lost information");
  }
  // strictly greater speculation threshold
  {
    SiliconResponse r;
    r.values["T"] = {"T", "T1", "x", "", 80};
    const bool at80 = is_highly_speculative(r, {"T"}, 80);
    r.values["T"].speculation = 81;
    const bool at81 = is_highly_speculative(r, {"T"}, 80);
    o.detail << "; speculation 80->" << at80 << " 81->" << at81;
    o.require(!at80 && at81, "speculation threshold");
  }
}

void end_to_end(Outcome& o) {
  const auto cfg = default_sim_config();
  bool all = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto t0 = Clock::now();
    auto rep = run_end_to_end(cfg, seed);
    const double secs = seconds_since(t0);
    const double raw_bias = std::abs(rep.raw_margin - rep.truth_margin);
    const double err = std::abs(rep.post_margin - rep.truth_margin);
    const bool ok = raw_bias >= 0.05 && err < 0.02 && rep.post_state_rmse < 0.5 * rep.raw_state_rmse && secs < 600;
    all = all && ok;
    char buf[200];
    std::snprintf(buf, sizeof buf, "%sseed %d: raw bias %.3f, post err %.4f, state rmse %.4f vs raw %.4f, %.0fs",
                  seed == 1 ? "" : "; ", static_cast<int>(seed), raw_bias, err, rep.post_state_rmse,
                  rep.raw_state_rmse, secs);
    o.detail << buf;
  }
  o.require(all, "recovery gap not met on every seed");
}

struct StandardNormal : LogDensity {
  int dim() const override { return 1; }
  double log_density(const Eigen::VectorXd& th, Eigen::VectorXd* g) const override {
    if (g) *g = -th;
    return -0.5 * th.squaredNorm();
  }
};

void settings_arithmetic(Outcome& o) {
  SamplerSettings s{8, 5000, 4750, 4, 15, 0.8, 1, 1};
  const int predicted = retained_draw_count(s);
  auto raw = run_nuts(StandardNormal{}, s);
  o.detail << "retained " << predicted << " predicted, " << raw.theta.size() << " produced";
  o.require(predicted == 500 && raw.theta.size() == 500, "not 500 retained draws");
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path());
  return files;
}

void determinism(Outcome& o) {
  const fs::path root = fs::temp_directory_path() / ("possum_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  nlohmann::json cfg = {{"population", {{"size", 12000}}},
                        {"pipeline", {{"sample_size", 300},
                                      {"sampler", {{"chains", 2}, {"iterations", 300}, {"warmup", 150}, {"thin", 2}}}}}};
  write_file(root / "config.json", cfg.dump());
  const std::string c = (root / "config.json").string();
  auto run_all = [&](const fs::path& out) {
    const std::string d = out.string();
    std::vector<std::vector<std::string>> cmds{
        {"fixture", "--config", c, "--seed", "3", "--output", d},
        {"pool", "--config", c, "--seed", "3", "--fixture", d + "/fixture.jsonl", "--output", d},
        {"poll", "--config", c, "--seed", "3", "--pool", d + "/pool.jsonl", "--fixture", d + "/fixture.jsonl",
         "--quota-frame", d + "/quota_frame.csv", "--threads", "2", "--output", d},
        {"infer", "--config", c, "--seed", "3", "--responses", d + "/responses.jsonl", "--frame", d + "/frame.csv",
         "--output", d},
        {"eval", "--config", c, "--seed", "3", "--draws", d + "/margin_draws.csv", "--results", d + "/results.csv",
         "--output", d},
        {"simulate", "--config", c, "--seed", "3", "--output", d + "/sim"}};
    std::vector<int> codes;
    for (auto& cmd : cmds) {
      cmd.insert(cmd.begin(), "possum");
      codes.push_back(cli::run(cmd));
    }
    return codes;
  };
  auto ca = run_all(root / "a"), cb = run_all(root / "b");
  auto sa = snapshot(root / "a"), sb = snapshot(root / "b");
  int differing = 0;
  for (const auto& [name, content] : sa)
    if (!sb.count(name) || sb[name] != content) ++differing;
  bool codes_ok = true;
  for (std::size_t i = 0; i < ca.size(); ++i) codes_ok = codes_ok && ca[i] == cb[i] && (ca[i] == 0 || ca[i] == 4);
  o.detail << sa.size() << " files compared, " << differing << " differ";
  o.require(codes_ok, "a command failed");
  o.require(differing == 0 && sa.size() == sb.size() && sa.size() >= 15, "outputs are not byte-identical");
  fs::remove_all(root);
}

}  // namespace

int main() {
  report("metric-formula-suite", metric_suite);
  report("sampler-correctness", sampler_correctness);
  report("icar-bym2", icar_bym2);
  report("frame-machinery", frame_machinery);
  report("pipeline-fidelity", pipeline_fidelity);
  report("end-to-end-recovery", end_to_end);
  report("estimation-settings", settings_arithmetic);
  report("determinism", determinism);
  std::printf("%d failed\n", failures);
  return failures;
}
