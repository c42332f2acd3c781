#include "possum/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "possum/error.hpp"

namespace possum {

using nlohmann::json;

AreaEstimate AreaEstimate::from_draws(std::string area, std::vector<double> draws) {
  if (draws.empty()) throw Error(Errc::TooFewDraws, "no draws for " + area);
  AreaEstimate e;
  e.area = std::move(area);
  e.point = quantile(draws, 0.5);
  e.lo = quantile(draws, 0.05);
  e.hi = quantile(draws, 0.95);
  e.draws = std::move(draws);
  return e;
}

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw Error(Errc::LengthMismatch, std::to_string(a) + " predictions for " + std::to_string(b) + " observations");
  if (a == 0) throw Error(Errc::LengthMismatch, "no observations");
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean(x), my = mean(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

bool constant(const std::vector<double>& x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

}  // namespace

double bias(const std::vector<double>& preds, const std::vector<double>& obs) {
  check_lengths(preds.size(), obs.size());
  double s = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += preds[i] - obs[i];
  return s / preds.size();
}

double rmse(const std::vector<double>& preds, const std::vector<double>& obs) {
  check_lengths(preds.size(), obs.size());
  double s = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += (obs[i] - preds[i]) * (obs[i] - preds[i]);
  return std::sqrt(s / preds.size());
}

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (i + j) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& preds, const std::vector<double>& obs) {
  check_lengths(preds.size(), obs.size());
  if (preds.size() < 2) throw Error(Errc::InvalidArgument, "Spearman needs at least two pairs");
  if (constant(preds) || constant(obs)) throw Error(Errc::DegenerateRanks, "constant ranks");
  return pearson(average_ranks(preds), average_ranks(obs));
}

double coverage90(const std::vector<AreaEstimate>& est, const std::vector<double>& obs) {
  check_lengths(est.size(), obs.size());
  int hit = 0;
  for (std::size_t i = 0; i < est.size(); ++i)
    if (est[i].lo <= obs[i] && obs[i] <= est[i].hi) ++hit;
  return static_cast<double>(hit) / est.size();
}

double winner_accuracy(const std::vector<double>& pred, const std::vector<double>& obs) {
  check_lengths(pred.size(), obs.size());
  int hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] != 0 && obs[i] != 0 && (pred[i] > 0) == (obs[i] > 0)) ++hit;
  return static_cast<double>(hit) / pred.size();
}

double silverman_bandwidth(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  const double m = mean(x);
  double ss = 0;
  for (double v : x) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / (n - 1));
  const double iqr = quantile(x, 0.75) - quantile(x, 0.25);
  double spread = iqr > 0 ? std::min(sd, iqr / 1.34) : sd;
  return 0.9 * spread * std::pow(n, -0.2);
}

double ovl(const std::vector<double>& a, const std::vector<double>& b, const OvlGrid& grid) {
  if (a.size() < 10 || b.size() < 10) throw Error(Errc::TooFewDraws, "OVL needs at least 10 draws per sample");
  if (grid.points < 2) throw Error(Errc::InvalidArgument, "OVL grid needs at least two points");
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const double h = silverman_bandwidth(pooled);
  const auto [lo_it, hi_it] = std::minmax_element(pooled.begin(), pooled.end());
  if (!(h > 0)) return *lo_it == *hi_it ? 1.0 : 0.0;
  const double lo = *lo_it - grid.pad_bandwidths * h, hi = *hi_it + grid.pad_bandwidths * h;
  const double step = (hi - lo) / (grid.points - 1);

  auto density = [&](std::vector<double> x) {
    std::sort(x.begin(), x.end());
    std::vector<double> f(grid.points, 0.0);
    const double norm = 1.0 / (x.size() * h * std::sqrt(2.0 * M_PI));
    for (int g = 0; g < grid.points; ++g) {
      const double y = lo + g * step;
      auto first = std::lower_bound(x.begin(), x.end(), y - 8.0 * h);
      auto last = std::upper_bound(x.begin(), x.end(), y + 8.0 * h);
      double s = 0;
      for (auto it = first; it != last; ++it) {
        const double u = (y - *it) / h;
        s += std::exp(-0.5 * u * u);
      }
      f[g] = s * norm;
    }
    return f;
  };
  const auto fa = density(a), fb = density(b);
  double area = 0;
  for (int g = 0; g + 1 < grid.points; ++g)
    area += 0.5 * step * (std::min(fa[g], fb[g]) + std::min(fa[g + 1], fb[g + 1]));
  return std::clamp(area, 0.0, 1.0);
}

double heaviside(double x) { return x > 0 ? 1.0 : (x < 0 ? 0.0 : 0.5); }

double misdirection_prob(const std::vector<double>& draws, double margin_2020, double observed_2024) {
  if (draws.empty()) throw Error(Errc::TooFewDraws, "misdirection needs draws");
  const double d = observed_2024 - margin_2020 > 0 ? 1.0 : 0.0;
  double s = 0;
  for (double m : draws) s += heaviside(m - margin_2020);
  return std::abs(d - s / draws.size());
}

double change_bias(double margin_hat_2024, double margin_2020, double margin_obs_2024) {
  return change_bias(margin_hat_2024 - margin_2020, margin_obs_2024 - margin_2020);
}

double change_bias(double delta_hat, double delta_obs) { return delta_hat - delta_obs; }

double posterior_pvalue(const std::vector<double>& draws, double observed) {
  if (draws.empty()) throw Error(Errc::TooFewDraws, "p-value needs draws");
  const double med = quantile(draws, 0.5);
  std::size_t count = 0;
  if (observed >= med) {
    for (double d : draws) count += d >= observed;
  } else {
    for (double d : draws) count += d <= observed;
  }
  return static_cast<double>(count) / draws.size();
}

TemporalCorrResult temporal_corr_prob(const Eigen::MatrixXd& series, const std::vector<double>& reference) {
  const Eigen::Index T = static_cast<Eigen::Index>(reference.size());
  if (T < 3) throw Error(Errc::InvalidArgument, "temporal correlation needs at least three periods");
  if (series.cols() != T) throw Error(Errc::LengthMismatch, "series length differs from the reference");
  if (series.rows() == 0) throw Error(Errc::TooFewDraws, "no draws");
  TemporalCorrResult r;
  int positive = 0;
  for (Eigen::Index d = 0; d < series.rows(); ++d) {
    std::vector<double> row(T);
    for (Eigen::Index t = 0; t < T; ++t) row[t] = series(d, t);
    try {
      if (spearman(row, reference) > 0) ++positive;
    } catch (const Error& e) {
      if (e.code() != Errc::DegenerateRanks) throw;
      ++r.degenerate;
    }
  }
  if (r.degenerate > 0)
    r.warnings.push_back(std::to_string(r.degenerate) + " draws had constant ranks and count as non-positive");
  r.prob = static_cast<double>(positive) / series.rows();
  return r;
}

DirichletDraws dirichlet_margin_draws(const std::vector<double>& counts, int S, std::uint64_t seed, int a, int b,
                                      double floor) {
  const int J = static_cast<int>(counts.size());
  if (S < 1) throw Error(Errc::InvalidArgument, "draw count must be positive");
  if (a < 0 || b < 0 || a >= J || b >= J) throw Error(Errc::InvalidArgument, "margin choice out of range");
  std::vector<double> alpha(counts);
  for (double& x : alpha) {
    if (x < 0 || !std::isfinite(x)) throw Error(Errc::InvalidArgument, "counts must be nonnegative");
    x = std::max(x, floor);
  }
  if (std::none_of(alpha.begin(), alpha.end(), [](double x) { return x > 0; }))
    throw Error(Errc::AllZero, "every count is zero");
  auto rng = make_rng(seed, {"dirichlet"});
  std::vector<std::gamma_distribution<double>> gammas;
  for (double x : alpha) gammas.emplace_back(x > 0 ? x : 1.0, 1.0);
  DirichletDraws out;
  out.pi.resize(S, J);
  out.margin.resize(S);
  for (int s = 0; s < S; ++s) {
    double total = 0;
    for (int j = 0; j < J; ++j) {
      out.pi(s, j) = alpha[j] > 0 ? gammas[j](rng) : 0.0;
      total += out.pi(s, j);
    }
    out.pi.row(s) /= total;
    out.margin[s] = out.pi(s, a) - out.pi(s, b);
  }
  return out;
}

json MetricReport::to_json() const {
  return {{"n", n},
          {"bias", bias},
          {"rmse", rmse},
          {"spearman", spearman ? json(*spearman) : json(nullptr)},
          {"coverage90", coverage},
          {"accuracy", accuracy}};
}

MetricReport evaluate_areas(const std::vector<AreaEstimate>& est, const std::vector<double>& obs) {
  check_lengths(est.size(), obs.size());
  std::vector<double> point;
  for (const auto& e : est) point.push_back(e.point);
  MetricReport r;
  r.n = static_cast<int>(est.size());
  r.bias = possum::bias(point, obs);
  r.rmse = possum::rmse(point, obs);
  r.coverage = coverage90(est, obs);
  r.accuracy = winner_accuracy(point, obs);
  if (est.size() >= 2 && !constant(point) && !constant(obs)) r.spearman = possum::spearman(point, obs);
  return r;
}

std::map<std::string, AreaEstimate> pollster_estimates(const PollsterRecord& p, const CompareOptions& opt) {
  auto idx = [&](const std::string& c) {
    auto it = std::find_if(p.candidates.begin(), p.candidates.end(),
                           [&](const std::string& x) { return normalize(x) == normalize(c); });
    if (it == p.candidates.end()) throw Error(Errc::UnknownCategory, p.pollster + " has no counts for " + c);
    return static_cast<int>(it - p.candidates.begin());
  };
  const int a = idx(opt.choice_a), b = idx(opt.choice_b);
  std::map<std::string, AreaEstimate> out;
  for (const auto& [area, counts] : p.counts) {
    auto d = dirichlet_margin_draws(counts, opt.draws, mix_seed(opt.seed, fnv1a(p.pollster + "|" + area)), a, b);
    out.emplace(area, AreaEstimate::from_draws(area, std::move(d.margin)));
  }
  return out;
}

std::vector<PollsterComparison> compare_pollsters(const std::map<std::string, AreaEstimate>& possum,
                                                  const std::vector<PollsterRecord>& pollsters,
                                                  const std::map<std::string, double>& results,
                                                  const CompareOptions& opt) {
  std::vector<PollsterComparison> out;
  for (const auto& p : pollsters) {
    auto ref = pollster_estimates(p, opt);
    PollsterComparison c;
    c.pollster = p.pollster;
    c.rating = p.rating;
    std::vector<AreaEstimate> mine, theirs;
    std::vector<double> obs;
    double ovl_sum = 0;
    for (const auto& [area, est] : ref) {
      auto m = possum.find(area);
      auto r = results.find(area);
      if (m == possum.end() || r == results.end()) continue;
      c.areas.push_back(area);
      mine.push_back(m->second);
      theirs.push_back(est);
      obs.push_back(r->second);
      ovl_sum += m->second.draws.size() >= 10 ? ovl(m->second.draws, est.draws) : 0.0;
    }
    if (c.areas.empty()) throw Error(Errc::NoSharedAreas, p.pollster + " shares no area with the estimates");
    c.possum = evaluate_areas(mine, obs);
    c.reference = evaluate_areas(theirs, obs);
    c.d_bias = c.possum.bias - c.reference.bias;
    c.d_rmse = c.possum.rmse - c.reference.rmse;
    c.d_coverage = c.possum.coverage - c.reference.coverage;
    c.d_accuracy = c.possum.accuracy - c.reference.accuracy;
    if (c.areas.size() > 3 && c.possum.spearman && c.reference.spearman)
      c.d_spearman = *c.possum.spearman - *c.reference.spearman;
    c.ovl = ovl_sum / c.areas.size();
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<PollsterRecord> pollsters_from_csv(std::string_view text) {
  auto t = parse_csv(text);
  const auto cp = t.column("pollster"), cr = t.column("rating"), ca = t.column("area"), cc = t.column("candidate"),
             cn = t.column("count"), cs = t.column("start_date"), ce = t.column("end_date");
  std::vector<PollsterRecord> out;
  // area -> candidate -> count, per pollster
  std::vector<std::map<std::string, std::map<std::string, double>>> raw;
  for (const auto& row : t.rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const PollsterRecord& p) { return p.pollster == row[cp]; });
    if (it == out.end()) {
      PollsterRecord p;
      p.pollster = row[cp];
      p.rating = row[cr];
      p.start = parse_date(row[cs]);
      p.end = parse_date(row[ce]);
      out.push_back(std::move(p));
      raw.emplace_back();
      it = out.end() - 1;
    }
    auto& p = *it;
    p.start = std::min(p.start, parse_date(row[cs]));
    p.end = std::max(p.end, parse_date(row[ce]));
    if (std::find(p.candidates.begin(), p.candidates.end(), row[cc]) == p.candidates.end())
      p.candidates.push_back(row[cc]);
    double n = std::stod(row[cn]);
    if (n < 0) throw Error(Errc::InvalidArgument, "negative count for " + p.pollster);
    raw[it - out.begin()][row[ca]][row[cc]] += n;
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    for (const auto& [area, by_cand] : raw[i]) {
      std::vector<double> v;
      for (const auto& c : out[i].candidates) {
        auto f = by_cand.find(c);
        v.push_back(f == by_cand.end() ? 0.0 : f->second);
      }
      if (std::none_of(v.begin(), v.end(), [](double x) { return x > 0; }))
        throw Error(Errc::AllZero, out[i].pollster + " has no positive count in " + area);
      out[i].counts[area] = std::move(v);
    }
  return out;
}

std::string comparisons_to_csv(const std::vector<PollsterComparison>& rows) {
  std::vector<std::string> header{"pollster", "rating", "n_areas", "d_bias", "d_rmse", "d_spearman",
                                  "d_coverage", "d_accuracy", "ovl"};
  std::string out = csv_line(header);
  for (const auto& c : rows) {
    std::vector<std::string> r{c.pollster,
                               c.rating,
                               std::to_string(c.areas.size()),
                               format_double(c.d_bias),
                               format_double(c.d_rmse),
                               c.d_spearman ? format_double(*c.d_spearman) : "",
                               format_double(c.d_coverage),
                               format_double(c.d_accuracy),
                               format_double(c.ovl)};
    out += csv_line(r);
  }
  return out;
}

json comparisons_to_json(const std::vector<PollsterComparison>& rows) {
  json arr = json::array();
  for (const auto& c : rows)
    arr.push_back({{"pollster", c.pollster},
                   {"rating", c.rating},
                   {"areas", c.areas},
                   {"d_bias", c.d_bias},
                   {"d_rmse", c.d_rmse},
                   {"d_spearman", c.d_spearman ? json(*c.d_spearman) : json(nullptr)},
                   {"d_coverage", c.d_coverage},
                   {"d_accuracy", c.d_accuracy},
                   {"ovl", c.ovl},
                   {"possum", c.possum.to_json()},
                   {"reference", c.reference.to_json()}});
  return arr;
}

}  // namespace possum
