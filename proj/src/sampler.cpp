#include "possum/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <random>
#include <thread>

#include "possum/error.hpp"
#include "possum/util.hpp"

namespace possum {

using nlohmann::json;

void SamplerSettings::validate() const {
  if (chains < 1) throw Error(Errc::InvalidArgument, "chains must be at least 1");
  if (warmup < 0 || iterations <= warmup) throw Error(Errc::InvalidArgument, "iterations must exceed warmup");
  if (thin < 1) throw Error(Errc::InvalidArgument, "thin must be at least 1");
  if (max_tree_depth < 1) throw Error(Errc::InvalidArgument, "max_tree_depth must be at least 1");
  if (!(target_accept > 0 && target_accept < 1)) throw Error(Errc::InvalidArgument, "target_accept must be in (0,1)");
}

json SamplerSettings::to_json() const {
  return {{"chains", chains},   {"iterations", iterations},         {"warmup", warmup},
          {"thin", thin},       {"max_tree_depth", max_tree_depth}, {"target_accept", target_accept},
          {"seed", seed},       {"threads", threads}};
}

SamplerSettings SamplerSettings::from_json(const json& j) {
  SamplerSettings s;
  s.chains = j.value("chains", s.chains);
  s.iterations = j.value("iterations", s.iterations);
  s.warmup = j.value("warmup", s.warmup);
  s.thin = j.value("thin", s.thin);
  s.max_tree_depth = j.value("max_tree_depth", s.max_tree_depth);
  s.target_accept = j.value("target_accept", s.target_accept);
  s.seed = j.value("seed", s.seed);
  s.threads = j.value("threads", s.threads);
  s.validate();
  return s;
}

int retained_draw_count(const SamplerSettings& s) {
  s.validate();
  const long total = static_cast<long>(s.chains) * (s.iterations - s.warmup);
  return static_cast<int>((total + s.thin - 1) / s.thin);
}

double Diagnostics::max_rhat() const {
  double m = 1.0;
  for (double r : rhat)
    if (std::isfinite(r)) m = std::max(m, r);
  return m;
}

json Diagnostics::to_json() const {
  json r = json::object();
  for (std::size_t i = 0; i < names.size() && i < rhat.size(); ++i)
    r[names[i]] = std::isfinite(rhat[i]) ? json(rhat[i]) : json(nullptr);
  return {{"divergences", divergences},
          {"treedepth_saturated", treedepth_saturated},
          {"post_warmup_transitions", post_warmup_transitions},
          {"step_size", step_size},
          {"max_rhat", max_rhat()},
          {"rhat", r}};
}

double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::size_t n = std::numeric_limits<std::size_t>::max();
  for (const auto& c : chains) n = std::min(n, c.size());
  const std::size_t half = n / 2;
  if (chains.empty() || half < 2) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> means, vars;
  for (const auto& c : chains)
    for (int h = 0; h < 2; ++h) {
      const double* x = c.data() + h * half + (h ? n - 2 * half : 0);
      double m = 0;
      for (std::size_t i = 0; i < half; ++i) m += x[i];
      m /= half;
      double v = 0;
      for (std::size_t i = 0; i < half; ++i) v += (x[i] - m) * (x[i] - m);
      means.push_back(m);
      vars.push_back(v / (half - 1));
    }
  const double M = static_cast<double>(means.size());
  const double grand = possum::mean(means);
  double B = 0;
  for (double m : means) B += (m - grand) * (m - grand);
  B *= static_cast<double>(half) / (M - 1);
  const double W = possum::mean(vars);
  if (W <= 0) return B <= 0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (half - 1.0) / half * W + B / half;
  return std::sqrt(var_plus / W);
}

namespace {

constexpr double kMaxDeltaH = 1000.0;
const double kInf = std::numeric_limits<double>::infinity();

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct Point {
  Eigen::VectorXd q, p, g;  // g is the gradient of the log density
  double V = kInf;          // potential: minus log density
};

struct DualAveraging {
  double delta = 0.8, gamma = 0.05, kappa = 0.75, t0 = 10.0;
  double mu = 0, s_bar = 0, x_bar = 0;
  int counter = 0;
  void restart() {
    counter = 0;
    s_bar = x_bar = 0;
  }
  void learn(double& eps, double stat) {
    ++counter;
    stat = std::min(1.0, stat);
    const double eta = 1.0 / (counter + t0);
    s_bar = (1.0 - eta) * s_bar + eta * (delta - stat);
    const double x = mu - s_bar * std::sqrt(static_cast<double>(counter)) / gamma;
    const double x_eta = std::pow(static_cast<double>(counter), -kappa);
    x_bar = (1.0 - x_eta) * x_bar + x_eta * x;
    eps = std::exp(x);
  }
};

// Stan-style windows: 75 / 25 doubling / 50, shrunk to 15% / 75% / 10% for short warmups.
struct Windows {
  int num_warmup = 0, init_buffer = 75, term_buffer = 50, base_window = 25;
  int counter = 0, window_size = 0, next_window = 0;
  bool enabled = true;
  explicit Windows(int warmup) : num_warmup(warmup) {
    if (warmup < 20) {
      enabled = false;
      return;
    }
    if (init_buffer + base_window + term_buffer > warmup) {
      init_buffer = static_cast<int>(0.15 * warmup);
      term_buffer = static_cast<int>(0.1 * warmup);
      base_window = warmup - (init_buffer + term_buffer);
    }
    window_size = base_window;
    next_window = init_buffer + window_size - 1;
  }
  bool in_window() const {
    return counter >= init_buffer && counter < num_warmup - term_buffer && counter != num_warmup;
  }
  bool window_end() const { return counter == next_window && counter != num_warmup; }
  void compute_next() {
    if (next_window == num_warmup - term_buffer - 1) return;
    window_size *= 2;
    next_window = counter + window_size;
    if (next_window != num_warmup - term_buffer - 1) {
      if (next_window + 2 * window_size >= num_warmup - term_buffer) next_window = num_warmup - term_buffer - 1;
    }
  }
};

class Chain {
 public:
  Chain(const LogDensity& target, const SamplerSettings& s, int chain)
      : target_(target), s_(s), rng_(make_rng(s.seed, {"nuts-chain", std::to_string(chain)})) {
    inv_metric_ = Eigen::VectorXd::Ones(target.dim());
    da_.delta = s.target_accept;
  }

  struct Output {
    std::vector<Eigen::VectorXd> post;  // every post-warmup transition
    int divergences = 0, saturated = 0;
    double step = 0;
  };

  Output run() {
    initialize();
    init_stepsize();
    da_.mu = std::log(10.0 * eps_);
    da_.restart();
    Windows win(s_.warmup);
    Eigen::VectorXd w_mean = Eigen::VectorXd::Zero(dim()), w_m2 = Eigen::VectorXd::Zero(dim());
    int w_n = 0;
    Output out;
    for (int it = 0; it < s_.iterations; ++it) {
      const bool warm = it < s_.warmup;
      auto info = transition();
      if (warm) {
        da_.learn(eps_, info.accept);
        if (win.enabled) {
          if (win.in_window()) {
            ++w_n;
            Eigen::VectorXd d = z_.q - w_mean;
            w_mean += d / w_n;
            w_m2 += d.cwiseProduct(z_.q - w_mean);
          }
          if (win.window_end()) {
            win.compute_next();
            if (w_n > 1) {
              const double n = w_n;
              Eigen::VectorXd var = w_m2 / (n - 1.0);
              inv_metric_ = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
            }
            w_n = 0;
            w_mean.setZero();
            w_m2.setZero();
            ++win.counter;
            init_stepsize();
            da_.mu = std::log(10.0 * eps_);
            da_.restart();
          } else {
            ++win.counter;
          }
        }
        if (it == s_.warmup - 1) eps_ = std::exp(da_.x_bar);
      } else {
        out.post.push_back(z_.q);
        if (info.divergent) ++out.divergences;
        if (info.depth >= s_.max_tree_depth) ++out.saturated;
      }
    }
    out.step = eps_;
    return out;
  }

 private:
  struct Info {
    double accept = 0;
    bool divergent = false;
    int depth = 0;
  };

  int dim() const { return target_.dim(); }

  double uniform() { return uniform01(rng_); }

  // Evaluates potential and gradient at z.q; a throwing or non-finite density gives V = inf.
  void evaluate(Point& z) const {
    try {
      double lp = target_.log_density(z.q, &z.g);
      z.V = std::isfinite(lp) ? -lp : kInf;
    } catch (const Error& e) {
      if (e.code() != Errc::NonFinite) throw;
      z.V = kInf;
    }
  }

  double kinetic(const Point& z) const { return 0.5 * z.p.dot(inv_metric_.cwiseProduct(z.p)); }
  double hamiltonian(const Point& z) const { return z.V + kinetic(z); }
  Eigen::VectorXd p_sharp(const Point& z) const { return inv_metric_.cwiseProduct(z.p); }

  void sample_momentum(Point& z) {
    std::normal_distribution<double> nd(0.0, 1.0);
    z.p.resize(dim());
    for (int i = 0; i < dim(); ++i) z.p[i] = nd(rng_) / std::sqrt(inv_metric_[i]);
  }

  void leapfrog(Point& z, double eps) const {
    if (!std::isfinite(z.V)) return;
    z.p += 0.5 * eps * z.g;
    z.q += eps * inv_metric_.cwiseProduct(z.p);
    evaluate(z);
    if (!std::isfinite(z.V)) return;
    z.p += 0.5 * eps * z.g;
  }

  void initialize() {
    std::uniform_real_distribution<double> ud(-2.0, 2.0);
    z_.q.resize(dim());
    for (int attempt = 0; attempt < 100; ++attempt) {
      for (int i = 0; i < dim(); ++i) z_.q[i] = ud(rng_);
      evaluate(z_);
      if (std::isfinite(z_.V) && z_.g.allFinite()) return;
    }
    throw Error(Errc::NonFinite, "no finite initial point after 100 attempts");
  }

  void init_stepsize() {
    Point init = z_;
    auto trial = [&] {
      Point z = init;
      sample_momentum(z);
      const double H0 = hamiltonian(z);
      leapfrog(z, eps_);
      double h = hamiltonian(z);
      if (std::isnan(h)) h = kInf;
      return H0 - h;
    };
    const double log08 = std::log(0.8);
    const int direction = trial() > log08 ? 1 : -1;
    for (int guard = 0; guard < 200; ++guard) {
      const double dH = trial();
      if (direction == 1 && !(dH > log08)) break;
      if (direction == -1 && !(dH < log08)) break;
      eps_ = direction == 1 ? 2.0 * eps_ : 0.5 * eps_;
      if (eps_ > 1e7) throw Error(Errc::NonFinite, "step size diverged upward during initialization");
      if (eps_ == 0) throw Error(Errc::NonFinite, "step size collapsed to zero during initialization");
    }
    z_ = init;
  }

  static bool criterion(const Eigen::VectorXd& sharp_minus, const Eigen::VectorXd& sharp_plus,
                        const Eigen::VectorXd& rho) {
    return sharp_plus.dot(rho) > 0 && sharp_minus.dot(rho) > 0;
  }

  bool build_tree(int depth, Point& z, Point& z_propose, Eigen::VectorXd& sharp_beg, Eigen::VectorXd& sharp_end,
                  Eigen::VectorXd& rho, Eigen::VectorXd& p_beg, Eigen::VectorXd& p_end, double H0, double sign,
                  int& n_leapfrog, double& log_sum_weight, double& sum_metro) {
    if (depth == 0) {
      leapfrog(z, sign * eps_);
      ++n_leapfrog;
      double h = hamiltonian(z);
      if (std::isnan(h)) h = kInf;
      if (h - H0 > kMaxDeltaH) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, H0 - h);
      sum_metro += H0 - h > 0 ? 1.0 : std::exp(H0 - h);
      z_propose = z;
      if (divergent_) return false;
      sharp_beg = p_sharp(z);
      sharp_end = sharp_beg;
      rho += z.p;
      p_beg = z.p;
      p_end = p_beg;
      return true;
    }
    const int n = dim();
    Eigen::VectorXd p_init_end(n), sharp_init_end(n), rho_init = Eigen::VectorXd::Zero(n);
    double lsw_init = -kInf;
    if (!build_tree(depth - 1, z, z_propose, sharp_beg, sharp_init_end, rho_init, p_beg, p_init_end, H0, sign,
                    n_leapfrog, lsw_init, sum_metro))
      return false;
    Point z_propose_final = z;
    Eigen::VectorXd p_final_beg(n), sharp_final_beg(n), rho_final = Eigen::VectorXd::Zero(n);
    double lsw_final = -kInf;
    if (!build_tree(depth - 1, z, z_propose_final, sharp_final_beg, sharp_end, rho_final, p_final_beg, p_end, H0,
                    sign, n_leapfrog, lsw_final, sum_metro))
      return false;
    const double lsw_subtree = log_sum_exp(lsw_init, lsw_final);
    log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
    if (lsw_final > lsw_subtree) {
      z_propose = z_propose_final;
    } else if (uniform() < std::exp(lsw_final - lsw_subtree)) {
      z_propose = z_propose_final;
    }
    Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(sharp_beg, sharp_end, rho_subtree);
    persist = persist && criterion(sharp_beg, sharp_final_beg, rho_init + p_final_beg);
    persist = persist && criterion(sharp_init_end, sharp_end, rho_final + p_init_end);
    return persist;
  }

  Info transition() {
    sample_momentum(z_);
    evaluate(z_);
    const int n = dim();
    Point z_fwd = z_, z_bck = z_, z_sample = z_, z_propose = z_;
    Eigen::VectorXd p_fwd_fwd = z_.p, sharp_fwd_fwd = p_sharp(z_);
    Eigen::VectorXd p_fwd_bck = z_.p, sharp_fwd_bck = sharp_fwd_fwd;
    Eigen::VectorXd p_bck_fwd = z_.p, sharp_bck_fwd = sharp_fwd_fwd;
    Eigen::VectorXd p_bck_bck = z_.p, sharp_bck_bck = sharp_fwd_fwd;
    Eigen::VectorXd rho = z_.p;
    double log_sum_weight = 0.0;
    const double H0 = hamiltonian(z_);
    int n_leapfrog = 0;
    double sum_metro = 0.0;
    int depth = 0;
    divergent_ = false;

    while (depth < s_.max_tree_depth) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(n), rho_bck = Eigen::VectorXd::Zero(n);
      bool valid = false;
      double lsw_subtree = -kInf;
      if (uniform() > 0.5) {
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        sharp_bck_fwd = sharp_fwd_bck;
        valid = build_tree(depth, z_fwd, z_propose, sharp_fwd_bck, sharp_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd, H0,
                           1.0, n_leapfrog, lsw_subtree, sum_metro);
      } else {
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        sharp_fwd_bck = sharp_bck_fwd;
        valid = build_tree(depth, z_bck, z_propose, sharp_bck_fwd, sharp_bck_bck, rho_bck, p_bck_fwd, p_bck_bck, H0,
                           -1.0, n_leapfrog, lsw_subtree, sum_metro);
      }
      if (!valid) break;
      ++depth;
      if (lsw_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform() < std::exp(lsw_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
      rho = rho_bck + rho_fwd;
      bool persist = criterion(sharp_bck_bck, sharp_fwd_fwd, rho);
      persist = persist && criterion(sharp_bck_bck, sharp_fwd_bck, rho_bck + p_fwd_bck);
      persist = persist && criterion(sharp_bck_fwd, sharp_fwd_fwd, rho_fwd + p_bck_fwd);
      if (!persist) break;
    }
    z_ = z_sample;
    Info info;
    info.accept = n_leapfrog > 0 ? sum_metro / n_leapfrog : 0.0;
    info.divergent = divergent_;
    info.depth = depth;
    return info;
  }

  const LogDensity& target_;
  SamplerSettings s_;
  std::mt19937_64 rng_;
  Eigen::VectorXd inv_metric_;
  double eps_ = 1.0;
  DualAveraging da_;
  Point z_;
  bool divergent_ = false;
};

RawDraws run_impl(const LogDensity& target, const SamplerSettings& settings,
                  const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& transform,
                  std::vector<std::string> names) {
  settings.validate();
  const int C = settings.chains;
  std::vector<Chain::Output> outs(C);
  std::vector<std::exception_ptr> errors(C);
  auto run_chain = [&](int c) {
    try {
      Chain chain(target, settings, c);
      outs[c] = chain.run();
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  const int threads = std::max(1, std::min(settings.threads, C));
  if (threads == 1) {
    for (int c = 0; c < C; ++c) run_chain(c);
  } else {
    for (int start = 0; start < C; start += threads) {
      std::vector<std::thread> pool;
      for (int c = start; c < std::min(C, start + threads); ++c) pool.emplace_back(run_chain, c);
      for (auto& t : pool) t.join();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  RawDraws raw;
  auto& d = raw.diagnostics;
  const int per_chain = settings.iterations - settings.warmup;
  long global = 0;
  for (int c = 0; c < C; ++c) {
    d.divergences += outs[c].divergences;
    d.treedepth_saturated += outs[c].saturated;
    d.step_size.push_back(outs[c].step);
    for (int t = 0; t < per_chain; ++t, ++global)
      if (global % settings.thin == 0) {
        raw.theta.push_back(outs[c].post[t]);
        raw.chain.push_back(c);
        raw.iteration.push_back(t);
      }
  }
  d.post_warmup_transitions = C * per_chain;
  if (2 * d.divergences > d.post_warmup_transitions)
    throw Error(Errc::AllDivergent, std::to_string(d.divergences) + " of " +
                                        std::to_string(d.post_warmup_transitions) + " post-warmup transitions diverged");

  // split-R̂ on every post-warmup transition
  std::vector<std::vector<Eigen::VectorXd>> scalars(C);
  for (int c = 0; c < C; ++c)
    for (const auto& q : outs[c].post) scalars[c].push_back(transform ? transform(q) : q);
  const int P = scalars.empty() || scalars[0].empty() ? 0 : static_cast<int>(scalars[0][0].size());
  if (names.size() != static_cast<std::size_t>(P)) {
    names.clear();
    for (int i = 0; i < P; ++i) names.push_back("theta[" + std::to_string(i) + "]");
  }
  d.names = std::move(names);
  for (int i = 0; i < P; ++i) {
    std::vector<std::vector<double>> per(C);
    for (int c = 0; c < C; ++c)
      for (const auto& v : scalars[c]) per[c].push_back(v[i]);
    d.rhat.push_back(split_rhat(per));
  }
  return raw;
}

}  // namespace

RawDraws run_nuts(const LogDensity& target, const SamplerSettings& settings) {
  return run_impl(target, settings, nullptr, target.parameter_names());
}

PosteriorDraws sample(const MrpModel& model, const SamplerSettings& settings) {
  auto raw = run_impl(
      model, settings, [&](const Eigen::VectorXd& q) { return model.flatten(model.unpack(q)); },
      model.scalar_names());
  PosteriorDraws post;
  post.chain = std::move(raw.chain);
  post.iteration = std::move(raw.iteration);
  post.diagnostics = std::move(raw.diagnostics);
  for (const auto& q : raw.theta) post.draws.push_back(model.unpack(q));
  post.theta = std::move(raw.theta);
  return post;
}

std::string draws_to_csv(const MrpModel& model, const PosteriorDraws& post) {
  std::vector<std::string> header{"chain", "iter"};
  for (auto& n : model.scalar_names()) header.push_back(n);
  std::string out = csv_line(header);
  for (std::size_t d = 0; d < post.draws.size(); ++d) {
    std::vector<std::string> row{std::to_string(post.chain[d]), std::to_string(post.iteration[d])};
    Eigen::VectorXd v = model.flatten(post.draws[d]);
    for (Eigen::Index i = 0; i < v.size(); ++i) row.push_back(format_double(v[i]));
    out += csv_line(row);
  }
  return out;
}

}  // namespace possum
