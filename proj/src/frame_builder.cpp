#include "possum/frame_builder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "possum/error.hpp"

namespace possum {

std::vector<MarginTarget> margin_targets_from_csv(std::string_view text) {
  auto table = parse_csv(text);
  auto g = table.column("geography"), v = table.column("variable"), c = table.column("category"),
       s = table.column("share");
  std::vector<MarginTarget> out;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (const auto& row : table.rows) {
    auto key = std::make_pair(row[g], row[v]);
    auto [it, inserted] = index.try_emplace(key, out.size());
    if (inserted) out.push_back({row[g], row[v], {}});
    try {
      out[it->second].shares[row[c]] = std::stod(row[s]);
    } catch (const std::logic_error&) {
      throw Error(Errc::ParseError, "bad share '" + row[s] + "'");
    }
  }
  for (const auto& t : out) {
    double total = 0.0;
    for (const auto& [cat, share] : t.shares) total += share;
    if (std::abs(total - 1.0) > 1e-9)
      throw Error(Errc::InvalidArgument, "shares of " + t.geography + "/" + t.variable + " sum to " + format_double(total));
  }
  return out;
}

std::string margin_targets_to_csv(const std::vector<MarginTarget>& targets) {
  std::string out = "geography,variable,category,share\n";
  for (const auto& t : targets)
    for (const auto& [cat, share] : t.shares)
      out += csv_line(std::vector<std::string>{t.geography, t.variable, cat, format_double(share)});
  return out;
}

// --- smoothing -------------------------------------------------------------

const std::vector<double>* SmoothedCrosstab::find(const AttributeMap& attrs) const {
  std::vector<std::string> key;
  for (const auto& t : titles) {
    auto it = attrs.find(t);
    if (it == attrs.end()) return nullptr;
    key.push_back(normalize(it->second));
  }
  auto it = probs.find(key);
  return it == probs.end() ? nullptr : &it->second;
}

SmoothedCrosstab smooth_crosstabs(const std::vector<AuxRecord>& aux, const std::vector<std::string>& titles,
                                  const SmoothingOptions& options, const StratFrame* cover) {
  if (aux.empty()) throw Error(Errc::EmptyAux, "no auxiliary records");
  if (!(options.kappa >= 0.0)) throw Error(Errc::InvalidArgument, "kappa must be nonnegative");
  SmoothedCrosstab out;
  out.titles = titles;

  std::vector<std::string> cats;
  for (const auto& c : options.vote_categories) cats.push_back(normalize(c));
  if (cats.empty()) {
    std::set<std::string> seen;
    for (const auto& r : aux) seen.insert(normalize(r.past_vote));
    cats.assign(seen.begin(), seen.end());
  }
  out.vote_categories = cats;
  const std::size_t K = cats.size();
  auto cat_index = [&](const std::string& v) {
    auto it = std::find(cats.begin(), cats.end(), normalize(v));
    if (it == cats.end()) throw Error(Errc::UnknownCategory, "past vote '" + v + "' not among the vote categories");
    return static_cast<std::size_t>(it - cats.begin());
  };
  auto key_of = [&](const AttributeMap& attrs) {
    std::vector<std::string> key;
    for (const auto& t : titles) {
      auto it = attrs.find(t);
      if (it == attrs.end()) throw Error(Errc::SchemaMismatch, "record lacks '" + t + "'");
      key.push_back(normalize(it->second));
    }
    return key;
  };

  // tallies: per combo, per (title, value) given vote, and per vote
  std::map<std::vector<std::string>, std::vector<double>> cell_counts;
  std::vector<std::map<std::string, std::vector<double>>> value_counts(titles.size());
  std::vector<std::set<std::string>> values(titles.size());
  std::vector<double> vote_counts(K, 0.0);
  for (const auto& r : aux) {
    auto key = key_of(r.attrs);
    auto k = cat_index(r.past_vote);
    auto& cc = cell_counts[key];
    if (cc.empty()) cc.assign(K, 0.0);
    cc[k] += 1.0;
    vote_counts[k] += 1.0;
    for (std::size_t t = 0; t < titles.size(); ++t) {
      auto& vc = value_counts[t][key[t]];
      if (vc.empty()) vc.assign(K, 0.0);
      vc[k] += 1.0;
      values[t].insert(key[t]);
    }
  }
  std::set<std::vector<std::string>> combos;
  for (const auto& [key, c] : cell_counts) combos.insert(key);
  if (cover) {
    for (const auto& cell : cover->cells) {
      auto key = key_of(cell.attributes);
      for (std::size_t t = 0; t < titles.size(); ++t) values[t].insert(key[t]);
      combos.insert(std::move(key));
    }
  }

  const double n_total = static_cast<double>(aux.size());
  for (const auto& key : combos) {
    std::vector<double> log_prior(K);
    for (std::size_t k = 0; k < K; ++k) {
      double lp = std::log((vote_counts[k] + 0.5) / (n_total + 0.5 * K));
      for (std::size_t t = 0; t < titles.size(); ++t) {
        double n_tv = 0.0;
        if (auto it = value_counts[t].find(key[t]); it != value_counts[t].end()) n_tv = it->second[k];
        lp += std::log((n_tv + 0.5) / (vote_counts[k] + 0.5 * values[t].size()));
      }
      log_prior[k] = lp;
    }
    double mx = *std::max_element(log_prior.begin(), log_prior.end());
    std::vector<double> prior(K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += prior[k] = std::exp(log_prior[k] - mx);
    for (auto& p : prior) p /= z;

    std::vector<double> counts(K, 0.0);
    if (auto it = cell_counts.find(key); it != cell_counts.end()) counts = it->second;
    double n = std::accumulate(counts.begin(), counts.end(), 0.0);
    std::vector<double> p(K);
    if (n + options.kappa <= 0.0) {
      p = prior;
    } else {
      double total = 0.0;
      for (std::size_t k = 0; k < K; ++k) total += p[k] = (counts[k] + options.kappa * prior[k]) / (n + options.kappa);
      for (auto& x : p) x /= total;
    }
    out.probs.emplace(key, std::move(p));
  }
  return out;
}

StratFrame extend_frame(const StratFrame& frame, const SmoothedCrosstab& smoothed, const std::string& vote_title) {
  StratFrame out;
  out.attribute_schema = frame.attribute_schema;
  out.attribute_schema.push_back(vote_title);
  int next_id = 1;
  for (const auto& cell : frame.cells) {
    const auto* p = smoothed.find(cell.attributes);
    if (!p) throw Error(Errc::MissingCombo, "no past-vote distribution for cell " + std::to_string(cell.cell_id));
    for (std::size_t k = 0; k < smoothed.vote_categories.size(); ++k) {
      StratCell c{next_id++, cell.attributes, cell.weight * (*p)[k]};
      c.attributes[vote_title] = smoothed.vote_categories[k];
      out.cells.push_back(std::move(c));
    }
  }
  return out;
}

// --- raking ----------------------------------------------------------------

namespace {

struct TargetIndex {
  std::vector<std::size_t> cells;             // cells in the geography
  std::vector<int> category;                  // per cell in `cells`: index into shares, -1 if untargeted
  std::vector<double> shares;
  std::vector<std::string> names;
};

std::vector<TargetIndex> index_targets(const StratFrame& frame, const std::vector<MarginTarget>& targets,
                                       const std::string& geography_title) {
  std::vector<TargetIndex> out;
  for (const auto& t : targets) {
    TargetIndex ti;
    for (const auto& [cat, share] : t.shares) {
      if (share < 0) throw Error(Errc::InvalidArgument, "negative target share for " + t.variable + "/" + cat);
      ti.names.push_back(normalize(cat));
      ti.shares.push_back(share);
    }
    for (std::size_t i = 0; i < frame.cells.size(); ++i) {
      const auto& attrs = frame.cells[i].attributes;
      if (t.geography != "*" && !t.geography.empty()) {
        auto g = attrs.find(geography_title);
        if (g == attrs.end() || normalize(g->second) != normalize(t.geography)) continue;
      }
      auto v = attrs.find(t.variable);
      if (v == attrs.end()) throw Error(Errc::SchemaMismatch, "frame has no variable '" + t.variable + "'");
      auto it = std::find(ti.names.begin(), ti.names.end(), normalize(v->second));
      ti.cells.push_back(i);
      ti.category.push_back(it == ti.names.end() ? -1 : static_cast<int>(it - ti.names.begin()));
    }
    out.push_back(std::move(ti));
  }
  return out;
}

double error_of(const std::vector<double>& w, const std::vector<TargetIndex>& index) {
  double worst = 0.0;
  for (const auto& ti : index) {
    std::vector<double> mass(ti.shares.size(), 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < ti.cells.size(); ++k) {
      double x = w[ti.cells[k]];
      total += x;
      if (ti.category[k] >= 0) mass[ti.category[k]] += x;
    }
    if (total <= 0) continue;
    for (std::size_t c = 0; c < mass.size(); ++c) worst = std::max(worst, std::abs(mass[c] / total - ti.shares[c]));
  }
  return worst;
}

}  // namespace

double max_margin_error(const StratFrame& frame, const std::vector<MarginTarget>& targets,
                        const std::string& geography_title) {
  std::vector<double> w;
  for (const auto& c : frame.cells) w.push_back(c.weight);
  return error_of(w, index_targets(frame, targets, geography_title));
}

RakeResult rake_with_trace(const StratFrame& frame, const std::vector<MarginTarget>& targets,
                           const RakeOptions& options) {
  auto index = index_targets(frame, targets, options.geography_title);
  std::vector<double> w;
  for (const auto& c : frame.cells) {
    if (c.weight < 0 || !std::isfinite(c.weight))
      throw Error(Errc::InvalidArgument, "invalid weight in cell " + std::to_string(c.cell_id));
    w.push_back(c.weight);
  }
  for (const auto& ti : index) {
    std::vector<double> mass(ti.shares.size(), 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < ti.cells.size(); ++k) {
      total += w[ti.cells[k]];
      if (ti.category[k] >= 0) mass[ti.category[k]] += w[ti.cells[k]];
    }
    for (std::size_t c = 0; c < mass.size(); ++c)
      if (ti.shares[c] > 0 && mass[c] <= 0)
        throw Error(Errc::StructuralZero, "category '" + ti.names[c] + "' has a positive target but no frame mass");
  }

  RakeResult result;
  double err = error_of(w, index);
  while (err > options.tol) {
    if (result.sweeps >= options.max_iter)
      throw Error(Errc::NonConvergence, "raking stopped after " + std::to_string(result.sweeps) +
                                            " sweeps with margin error " + format_double(err));
    for (const auto& ti : index) {
      std::vector<double> mass(ti.shares.size(), 0.0);
      double total = 0.0;
      for (std::size_t k = 0; k < ti.cells.size(); ++k) {
        double x = w[ti.cells[k]];
        total += x;
        if (ti.category[k] >= 0) mass[ti.category[k]] += x;
      }
      if (total <= 0) continue;
      for (std::size_t k = 0; k < ti.cells.size(); ++k) {
        int c = ti.category[k];
        if (c < 0) w[ti.cells[k]] = 0.0;  // categories without a target get share 0
        else if (mass[c] > 0) w[ti.cells[k]] *= ti.shares[c] * total / mass[c];
      }
    }
    ++result.sweeps;
    err = error_of(w, index);
    result.trace.push_back(err);
  }
  result.max_error = err;
  result.frame = frame;
  for (std::size_t i = 0; i < w.size(); ++i) result.frame.cells[i].weight = w[i];
  return result;
}

StratFrame rake(const StratFrame& frame, const std::vector<MarginTarget>& targets, double tol, int max_iter) {
  RakeOptions options;
  options.tol = tol;
  options.max_iter = max_iter;
  return rake_with_trace(frame, targets, options).frame;
}

QuotaState sample_daughter_frame(const StratFrame& mother, int omega_star, std::uint64_t seed) {
  if (omega_star < 1) throw Error(Errc::InvalidArgument, "omega_star must be positive");
  double remaining_weight = 0.0;
  for (const auto& c : mother.cells) {
    if (c.weight < 0 || !std::isfinite(c.weight)) throw Error(Errc::InvalidArgument, "invalid mother weight");
    remaining_weight += c.weight;
  }
  if (!(remaining_weight > 0)) throw Error(Errc::InvalidArgument, "mother frame has no weight");
  auto rng = make_rng(seed, {"daughter-frame"});
  std::map<int, int> quota;
  int remaining = omega_star;
  // sequential conditional binomials give an exact multinomial draw
  for (std::size_t i = 0; i < mother.cells.size(); ++i) {
    const auto& c = mother.cells[i];
    int q = 0;
    if (remaining > 0 && c.weight > 0) {
      double p = std::min(1.0, c.weight / remaining_weight);
      q = i + 1 == mother.cells.size() ? remaining : std::binomial_distribution<int>(remaining, p)(rng);
    }
    quota[c.cell_id] = q;
    remaining -= q;
    remaining_weight -= c.weight;
    if (remaining_weight <= 0) remaining_weight = 0;
  }
  if (remaining > 0) {
    // only reachable when trailing cells have zero weight; give the rest to the last positive cell
    for (auto it = mother.cells.rbegin(); it != mother.cells.rend(); ++it)
      if (it->weight > 0) {
        quota[it->cell_id] += remaining;
        break;
      }
  }
  return QuotaState(mother, std::move(quota));
}

}  // namespace possum
