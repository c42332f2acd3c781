#include "possum/simharness.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "possum/error.hpp"
#include "possum/eval.hpp"
#include "possum/frame_builder.hpp"

namespace possum {

using nlohmann::json;

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string to_upper_copy(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

int draw_category(const std::vector<double>& probs, std::mt19937_64& rng) {
  double u = uniform01(rng), acc = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

std::vector<double> softmax_probs(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0;
  for (std::size_t k = 0; k < p.size(); ++k) s += p[k] = std::exp(logits[k] - mx);
  for (auto& x : p) x /= s;
  return p;
}

void check_probs(const std::vector<double>& p, const std::string& what) {
  double s = 0;
  for (double x : p) {
    if (!(x >= 0) || !std::isfinite(x)) throw Error(Errc::InvalidArgument, what + " has an invalid probability");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-9) throw Error(Errc::InvalidArgument, what + " probabilities sum to " + format_double(s));
}

void check_vote(const SimVote& v) {
  const auto n = v.categories.size();
  if (n < 2) throw Error(Errc::InvalidArgument, v.title + " needs at least two categories");
  if (v.names.size() != n || v.intercept.size() != n || v.lean_scale.size() != n || v.placeholders.size() != n)
    throw Error(Errc::InvalidArgument, v.title + " has mismatched category lists");
}

json attribute_json(const SimAttribute& a) {
  return {{"title", a.title},     {"feature_title", a.feature_title}, {"symbol_prefix", a.symbol_prefix},
          {"categories", a.categories}, {"probs", a.probs},           {"lean", a.lean},
          {"ordinal", a.ordinal}};
}

SimAttribute attribute_from_json(const json& j) {
  SimAttribute a;
  a.title = j.at("title").get<std::string>();
  a.feature_title = j.value("feature_title", to_upper_copy(a.title));
  a.symbol_prefix = j.value("symbol_prefix", a.feature_title.substr(0, 1));
  a.categories = j.at("categories").get<std::vector<std::string>>();
  a.probs = j.at("probs").get<std::vector<double>>();
  a.lean = j.value("lean", std::vector<double>(a.categories.size(), 0.0));
  a.ordinal = j.value("ordinal", false);
  return a;
}

json vote_json(const SimVote& v) {
  return {{"title", v.title},           {"feature_title", v.feature_title}, {"symbol_prefix", v.symbol_prefix},
          {"categories", v.categories}, {"names", v.names},                 {"placeholders", v.placeholders},
          {"intercept", v.intercept},   {"lean_scale", v.lean_scale}};
}

SimVote vote_from_json(const json& j) {
  SimVote v;
  v.title = j.at("title").get<std::string>();
  v.feature_title = j.value("feature_title", to_upper_copy(v.title));
  v.symbol_prefix = j.value("symbol_prefix", std::string("V"));
  v.categories = j.at("categories").get<std::vector<std::string>>();
  const auto n = v.categories.size();
  v.names = j.value("names", v.categories);
  v.placeholders = j.value("placeholders", std::vector<std::string>(n));
  v.intercept = j.value("intercept", std::vector<double>(n, 0.0));
  v.lean_scale = j.value("lean_scale", std::vector<double>(n, 0.0));
  return v;
}

FeatureDef make_def(const std::string& title, const std::string& prefix, const std::vector<std::string>& cats,
                    FeatureKind kind) {
  std::vector<FeatureOption> opts;
  for (std::size_t k = 0; k < cats.size(); ++k) opts.push_back({prefix + std::to_string(k + 1), cats[k]});
  return FeatureDef(title, std::move(opts), kind);
}

std::string state_template(const SimVote& v) {
  std::string out = v.feature_title + ":\n";
  for (std::size_t k = 0; k < v.categories.size(); ++k) {
    out += v.symbol_prefix + std::to_string(k + 1) + ") " + v.categories[k];
    if (!v.placeholders[k].empty()) out += ", <INSERT_" + v.placeholders[k] + "_CANDIDATE_NAME_HERE>,";
    out += " in <INSERT_STATE_NAME_HERE>\n";
  }
  return out;
}

// Stage failures keep their code and gain the stage name.
template <class F>
auto stage(const char* name, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), std::string(name) + " stage: " + e.what());
  }
}

int index_of(const std::vector<std::string>& v, const std::string& x) {
  auto it = std::find(v.begin(), v.end(), x);
  return it == v.end() ? -1 : static_cast<int>(it - v.begin());
}

}  // namespace

// --- population --------------------------------------------------------------

void PopulationConfig::validate() const {
  if (areas.empty()) throw Error(Errc::InvalidArgument, "no areas");
  if (size < 1) throw Error(Errc::InvalidArgument, "population size must be at least 1");
  std::set<std::string> names;
  for (const auto& a : areas) {
    if (!(a.size > 0)) throw Error(Errc::InvalidArgument, "area " + a.name + " needs a positive size");
    if (!names.insert(a.name).second) throw Error(Errc::InvalidArgument, "duplicate area " + a.name);
  }
  for (const auto& [a, b] : edges)
    if (!names.count(a) || !names.count(b)) throw Error(Errc::InvalidArgument, "edge names an unknown area");
  for (const auto& at : attributes) {
    if (at.categories.size() < 2) throw Error(Errc::InvalidArgument, at.title + " needs two categories");
    if (at.probs.size() != at.categories.size() || at.lean.size() != at.categories.size())
      throw Error(Errc::InvalidArgument, at.title + " has mismatched category lists");
    check_probs(at.probs, at.title);
  }
  check_vote(past_vote);
  check_vote(vote);
  if (loyalty.size() != past_vote.categories.size())
    throw Error(Errc::InvalidArgument, "loyalty needs one row per past-vote category");
  for (const auto& row : loyalty)
    if (row.size() != vote.categories.size()) throw Error(Errc::InvalidArgument, "loyalty row has the wrong length");
}

json PopulationConfig::to_json() const {
  json a = json::array();
  for (const auto& x : areas) a.push_back({{"name", x.name}, {"size", x.size}, {"lean", x.lean}});
  json e = json::array();
  for (const auto& [x, y] : edges) e.push_back({x, y});
  json at = json::array();
  for (const auto& x : attributes) at.push_back(attribute_json(x));
  return {{"areas", a},          {"edges", e},     {"attributes", at}, {"past_vote", vote_json(past_vote)},
          {"vote", vote_json(vote)}, {"loyalty", loyalty}, {"size", size}, {"seed", seed}};
}

PopulationConfig PopulationConfig::from_json(const json& j) {
  PopulationConfig c = default_population_config();
  if (j.contains("areas")) {
    c.areas.clear();
    for (const auto& a : j.at("areas")) c.areas.push_back({a.at("name"), a.value("size", 1.0), a.value("lean", 0.0)});
  }
  if (j.contains("edges")) {
    c.edges.clear();
    for (const auto& e : j.at("edges")) c.edges.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
  }
  if (j.contains("attributes")) {
    c.attributes.clear();
    for (const auto& a : j.at("attributes")) c.attributes.push_back(attribute_from_json(a));
  }
  if (j.contains("past_vote")) c.past_vote = vote_from_json(j.at("past_vote"));
  if (j.contains("vote")) c.vote = vote_from_json(j.at("vote"));
  if (j.contains("loyalty")) c.loyalty = j.at("loyalty").get<std::vector<std::vector<double>>>();
  c.size = j.value("size", c.size);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

PopulationConfig default_population_config() {
  PopulationConfig c;
  c.areas = {{"Texas", 5.0, 0.15},    {"Oklahoma", 1.3, 0.9}, {"Louisiana", 1.5, 0.35}, {"Arkansas", 1.0, 0.7},
             {"New Mexico", 0.8, -0.4}, {"Colorado", 2.0, -0.6}, {"Kansas", 1.0, 0.45},  {"Missouri", 2.0, 0.3}};
  c.edges = {{"Texas", "Oklahoma"},    {"Texas", "Louisiana"},  {"Texas", "Arkansas"},   {"Texas", "New Mexico"},
             {"Oklahoma", "Arkansas"}, {"Oklahoma", "New Mexico"}, {"Oklahoma", "Colorado"}, {"Oklahoma", "Kansas"},
             {"Oklahoma", "Missouri"}, {"Arkansas", "Louisiana"}, {"Arkansas", "Missouri"}, {"New Mexico", "Colorado"},
             {"Colorado", "Kansas"},   {"Kansas", "Missouri"}};
  c.attributes = {
      {"sex", "SEX", "S", {"male", "female"}, {0.49, 0.51}, {0.2, -0.2}, false},
      {"age", "AGE", "A", {"18-24", "25-34", "35-44", "45-54", "55-64", "65 or older"},
       {0.12, 0.18, 0.17, 0.16, 0.17, 0.20}, {-0.4, -0.25, -0.05, 0.1, 0.2, 0.25}, true},
      {"income", "INCOME", "I", {"up to 25k", "25k to 50k", "50k to 100k", "100k to 200k", "over 200k"},
       {0.2, 0.22, 0.3, 0.18, 0.1}, {-0.3, -0.1, 0.05, 0.15, 0.1}, true},
      {"race", "RACE", "R", {"white", "black", "hispanic", "asian", "native american", "other"},
       {0.6, 0.12, 0.18, 0.05, 0.02, 0.03}, {0.4, -1.5, -0.3, -0.5, 0.1, -0.2}, false},
  };
  c.past_vote = {"vote2020",
                 "VOTE2020",
                 "Vpa",
                 {"voted for the Democratic Party candidate", "voted for the Republican Party candidate",
                  "voted for another candidate", "did not vote"},
                 {"D", "R", "O", "N"},
                 {"DPAST", "RPAST", "", ""},
                 {0.0, 0.0, -2.5, -0.8},
                 {-1.2, 1.2, 0.0, 0.0}};
  c.vote = {"vote2024",
            "VOTE2024",
            "V",
            {"vote for the Democratic Party candidate", "vote for the Republican Party candidate",
             "vote for another candidate"},
            {"D", "R", "O"},
            {"D", "R", ""},
            {0.0, 0.0, -2.2},
            {-0.5, 0.5, 0.0}};
  c.loyalty = {{2.5, 0.0, 0.0}, {0.0, 2.5, 0.0}, {0.0, 0.0, 2.0}, {0.0, 0.0, 0.0}};
  c.size = 50000;
  c.seed = 1;
  return c;
}

AttributeMap Population::frame_attributes(const Person& p, const std::string& area_title) const {
  AttributeMap m;
  m[area_title] = config.areas[p.area].name;
  for (std::size_t a = 0; a < config.attributes.size(); ++a)
    m[config.attributes[a].title] = config.attributes[a].categories[p.attr[a]];
  m[config.past_vote.title] = config.past_vote.categories[p.past];
  return m;
}

StratFrame Population::frame(const std::vector<std::string>& titles, const std::string& area_title) const {
  std::map<std::vector<std::string>, double> counts;
  for (const auto& p : people) {
    auto attrs = frame_attributes(p, area_title);
    std::vector<std::string> key;
    for (const auto& t : titles) {
      auto it = attrs.find(t);
      if (it == attrs.end()) throw Error(Errc::SchemaMismatch, "population has no attribute '" + t + "'");
      key.push_back(it->second);
    }
    counts[key] += 1.0;
  }
  StratFrame f;
  f.attribute_schema = titles;
  int id = 1;
  for (const auto& [key, w] : counts) {
    StratCell c;
    c.cell_id = id++;
    for (std::size_t i = 0; i < titles.size(); ++i) c.attributes[titles[i]] = key[i];
    c.weight = w;
    f.cells.push_back(std::move(c));
  }
  return f;
}

Population generate_population(const PopulationConfig& cfg) {
  cfg.validate();
  Population pop;
  pop.config = cfg;
  auto rng = make_rng(cfg.seed, {"population"});
  std::vector<double> area_p;
  double total = 0;
  for (const auto& a : cfg.areas) total += a.size;
  for (const auto& a : cfg.areas) area_p.push_back(a.size / total);
  const int S = static_cast<int>(cfg.areas.size());
  const int J = static_cast<int>(cfg.vote.categories.size()), P = static_cast<int>(cfg.past_vote.categories.size());
  auto& T = pop.truth;
  T.national.assign(J, 0.0);
  T.by_area.assign(S, std::vector<double>(J, 0.0));
  T.past_by_area.assign(S, std::vector<double>(P, 0.0));
  std::vector<double> area_n(S, 0.0);
  std::map<std::string, std::map<std::string, double>> attr_n;

  for (int i = 0; i < cfg.size; ++i) {
    Person p;
    p.area = draw_category(area_p, rng);
    double lean = cfg.areas[p.area].lean;
    for (const auto& at : cfg.attributes) {
      int k = draw_category(at.probs, rng);
      p.attr.push_back(k);
      lean += at.lean[k];
    }
    std::vector<double> lp(P);
    for (int k = 0; k < P; ++k) lp[k] = cfg.past_vote.intercept[k] + cfg.past_vote.lean_scale[k] * lean;
    p.past = draw_category(softmax_probs(lp), rng);
    std::vector<double> lv(J);
    for (int j = 0; j < J; ++j) lv[j] = cfg.vote.intercept[j] + cfg.vote.lean_scale[j] * lean + cfg.loyalty[p.past][j];
    p.vote = draw_category(softmax_probs(lv), rng);

    T.national[p.vote] += 1;
    T.by_area[p.area][p.vote] += 1;
    T.past_by_area[p.area][p.past] += 1;
    area_n[p.area] += 1;
    for (std::size_t a = 0; a < cfg.attributes.size(); ++a) {
      const auto& at = cfg.attributes[a];
      auto& v = T.by_attribute[at.title][at.categories[p.attr[a]]];
      if (v.empty()) v.assign(J, 0.0);
      v[p.vote] += 1;
      attr_n[at.title][at.categories[p.attr[a]]] += 1;
    }
    auto& pv = T.by_attribute[cfg.past_vote.title][cfg.past_vote.categories[p.past]];
    if (pv.empty()) pv.assign(J, 0.0);
    pv[p.vote] += 1;
    attr_n[cfg.past_vote.title][cfg.past_vote.categories[p.past]] += 1;
    pop.people.push_back(std::move(p));
  }
  for (auto& x : T.national) x /= cfg.size;
  for (int s = 0; s < S; ++s)
    if (area_n[s] > 0) {
      for (auto& x : T.by_area[s]) x /= area_n[s];
      for (auto& x : T.past_by_area[s]) x /= area_n[s];
    }
  for (auto& [title, cats] : T.by_attribute)
    for (auto& [cat, v] : cats)
      for (auto& x : v) x /= attr_n[title][cat];
  return pop;
}

// --- platform ----------------------------------------------------------------

void SelectionConfig::validate() const {
  auto finite = [](double x) { return std::isfinite(x); };
  if (!finite(base_log_odds) || !finite(political_base)) throw Error(Errc::InvalidArgument, "non-finite log-odds");
  for (const auto* m : {&log_odds, &political_attention})
    for (const auto& [t, cats] : *m)
      for (const auto& [c, x] : cats)
        if (!finite(x)) throw Error(Errc::InvalidArgument, "non-finite log-odds for " + t + "/" + c);
  for (double r : {stateless_rate, foreign_rate, organisation_rate, null_location_rate})
    if (!(r >= 0 && r <= 1)) throw Error(Errc::InvalidArgument, "rates must lie in [0,1]");
  if (topics.empty()) throw Error(Errc::InvalidArgument, "at least one trending topic is needed");
  if (pool_tweets < 1 || timeline_tweets < 0) throw Error(Errc::InvalidArgument, "invalid tweet counts");
}

json SelectionConfig::to_json() const {
  return {{"base_log_odds", base_log_odds},
          {"log_odds", log_odds},
          {"political_base", political_base},
          {"political_attention", political_attention},
          {"stateless_rate", stateless_rate},
          {"foreign_rate", foreign_rate},
          {"organisation_rate", organisation_rate},
          {"null_location_rate", null_location_rate},
          {"topics", topics},
          {"pool_tweets", pool_tweets},
          {"timeline_tweets", timeline_tweets}};
}

SelectionConfig SelectionConfig::from_json(const json& j) {
  SelectionConfig s = default_selection_config();
  s.base_log_odds = j.value("base_log_odds", s.base_log_odds);
  if (j.contains("log_odds")) s.log_odds = j.at("log_odds").get<decltype(s.log_odds)>();
  s.political_base = j.value("political_base", s.political_base);
  if (j.contains("political_attention"))
    s.political_attention = j.at("political_attention").get<decltype(s.political_attention)>();
  s.stateless_rate = j.value("stateless_rate", s.stateless_rate);
  s.foreign_rate = j.value("foreign_rate", s.foreign_rate);
  s.organisation_rate = j.value("organisation_rate", s.organisation_rate);
  s.null_location_rate = j.value("null_location_rate", s.null_location_rate);
  s.topics = j.value("topics", s.topics);
  s.pool_tweets = j.value("pool_tweets", s.pool_tweets);
  s.timeline_tweets = j.value("timeline_tweets", s.timeline_tweets);
  s.validate();
  return s;
}

SelectionConfig default_selection_config() {
  SelectionConfig s;
  s.base_log_odds = -2.6;
  s.log_odds["vote2020"] = {{"voted for the Democratic Party candidate", 0.3},
                            {"voted for the Republican Party candidate", -0.3}};
  s.log_odds["income"] = {{"up to 25k", -0.3}, {"100k to 200k", 0.3}, {"over 200k", 0.5}};
  s.political_base = -0.5;
  s.political_attention["vote2020"] = {{"did not vote", -1.0}};
  return s;
}

void simulate_platform(const Population& pop, const SelectionConfig& sel, std::uint64_t seed, SimPlatform& out) {
  sel.validate();
  const auto& cfg = pop.config;
  auto rng = make_rng(seed, {"platform"});
  const Timestamp base = Timestamp(Date(std::chrono::year(2024) / 10 / 1));
  out.person_of.clear();
  out.fixture.clear();
  out.included = out.stateless = 0;
  int tweet_seq = 0;
  auto add_user = [&](const std::string& id, const AttributeMap& tokens, const std::optional<std::string>& location,
                      const std::string& query, int person) {
    UserRecord u;
    u.user_id = id;
    u.username = "user_" + id;
    u.display_name = "User " + id;
    std::string desc = "Synthetic profile.";
    for (const auto& [k, v] : tokens) desc += " " + truth_token(k, v);
    u.description = desc;
    u.location_raw = location;
    u.profile_image_ref = "images/" + id + ".jpg";
    u.captured_at = base;
    std::vector<TweetRecord> hits, timeline;
    for (int k = 0; k < sel.pool_tweets; ++k, ++tweet_seq)
      hits.push_back({"t" + std::to_string(tweet_seq), id, base - std::chrono::seconds(60 * tweet_seq + 1),
                      "A post about " + query + "."});
    for (int k = 0; k < sel.timeline_tweets; ++k, ++tweet_seq)
      timeline.push_back({"t" + std::to_string(tweet_seq), id, base - std::chrono::hours(24 * (k + 1)) -
                                                                   std::chrono::seconds(tweet_seq),
                          "Everyday update number " + std::to_string(k + 1) + "."});
    json line = {{"query", query}, {"user", to_json(u)}, {"tweets", json::array()}};
    for (const auto& t : hits) line["tweets"].push_back(to_json(t));
    out.fixture += line.dump() + "\n";
    json tl = {{"user", to_json(u)}, {"tweets", json::array()}};
    for (const auto& t : timeline) tl["tweets"].push_back(to_json(t));
    out.fixture += tl.dump() + "\n";
    out.person_of[id] = person;
  };
  auto pick_query = [&](double political_logit, const std::string& political) {
    if (uniform01(rng) < logistic(political_logit)) return political;
    return sel.topics[static_cast<std::size_t>(uniform01(rng) * sel.topics.size()) % sel.topics.size()];
  };
  auto lookup = [](const std::map<std::string, std::map<std::string, double>>& m, const AttributeMap& attrs) {
    double s = 0;
    for (const auto& [title, cats] : m) {
      auto a = attrs.find(title);
      if (a == attrs.end()) continue;
      if (auto c = cats.find(a->second); c != cats.end()) s += c->second;
    }
    return s;
  };
  const std::string political = "election OR president OR vote";
  auto tokens_of = [&](const Person& p) {
    AttributeMap t;
    t["ENTITY"] = "P";
    for (std::size_t a = 0; a < cfg.attributes.size(); ++a)
      t[cfg.attributes[a].feature_title] = cfg.attributes[a].categories[p.attr[a]];
    t[cfg.past_vote.feature_title] = cfg.past_vote.categories[p.past];
    t[cfg.vote.feature_title] = cfg.vote.categories[p.vote];
    return t;
  };

  char buf[32];
  for (std::size_t i = 0; i < pop.people.size(); ++i) {
    const auto& p = pop.people[i];
    auto attrs = pop.frame_attributes(p);
    if (uniform01(rng) >= logistic(sel.base_log_odds + lookup(sel.log_odds, attrs))) continue;
    auto query = pick_query(sel.political_base + lookup(sel.political_attention, attrs), political);
    auto tokens = tokens_of(p);
    std::string location = cfg.areas[p.area].name;
    if (uniform01(rng) < sel.stateless_rate) {
      location = "USA";
      ++out.stateless;
    }
    tokens["STATE"] = location;
    std::snprintf(buf, sizeof buf, "u%07zu", i);
    add_user(buf, tokens, location, query, static_cast<int>(i));
    ++out.included;
  }
  // accounts the cascade must remove
  auto extras = [&](double rate, const char* tag, auto&& adjust) {
    const int n = static_cast<int>(std::lround(rate * out.included));
    for (int k = 0; k < n; ++k) {
      const auto& p = pop.people[static_cast<std::size_t>(uniform01(rng) * pop.people.size()) % pop.people.size()];
      auto tokens = tokens_of(p);
      std::optional<std::string> location = cfg.areas[p.area].name;
      tokens["STATE"] = *location;
      adjust(tokens, location);
      std::snprintf(buf, sizeof buf, "x%s%05d", tag, k);
      add_user(buf, tokens, location, pick_query(sel.political_base, political), -1);
    }
  };
  extras(sel.foreign_rate, "f", [](AttributeMap& t, std::optional<std::string>& loc) {
    t["STATE"] = "foreign";
    loc = "Paris, France";
  });
  extras(sel.organisation_rate, "o", [](AttributeMap& t, std::optional<std::string>&) { t["ENTITY"] = "O"; });
  extras(sel.null_location_rate, "n", [](AttributeMap&, std::optional<std::string>& loc) { loc.reset(); });
  out.client.load_jsonl(out.fixture);
}

// --- settings ----------------------------------------------------------------

json PipelineSettings::to_json() const {
  return {{"omega", omega},
          {"political_terms", political_terms},
          {"sample_size", sample_size},
          {"quota_titles", quota_titles},
          {"window_days", window_days},
          {"m_politics", m_politics},
          {"lambda", lambda},
          {"ensemble", ensemble},
          {"include_speculative", include_speculative},
          {"oracle", oracle.to_json()},
          {"sampler", sampler.to_json()},
          {"threads", threads},
          {"pool_date", pool_date}};
}

PipelineSettings PipelineSettings::from_json(const json& j) {
  PipelineSettings s;
  s.omega = j.value("omega", s.omega);
  s.political_terms = j.value("political_terms", s.political_terms);
  s.sample_size = j.value("sample_size", s.sample_size);
  s.quota_titles = j.value("quota_titles", s.quota_titles);
  s.window_days = j.value("window_days", s.window_days);
  s.m_politics = j.value("m_politics", s.m_politics);
  s.lambda = j.value("lambda", s.lambda);
  s.ensemble = j.value("ensemble", s.ensemble);
  s.include_speculative = j.value("include_speculative", s.include_speculative);
  if (j.contains("oracle")) s.oracle = OracleConfig::from_json(j.at("oracle"));
  if (j.contains("sampler")) s.sampler = SamplerSettings::from_json(j.at("sampler"));
  s.threads = j.value("threads", s.threads);
  s.pool_date = j.value("pool_date", s.pool_date);
  if (s.omega < 1 || s.sample_size < 1) throw Error(Errc::InvalidArgument, "omega and sample_size must be positive");
  parse_date(s.pool_date);
  return s;
}

void SimConfig::validate() const {
  population.validate();
  selection.validate();
  pipeline.sampler.validate();
  pipeline.oracle.validate();
  std::set<std::string> titles{"state", population.past_vote.title};
  for (const auto& a : population.attributes) titles.insert(a.title);
  for (const auto& t : pipeline.quota_titles)
    if (!titles.count(t)) throw Error(Errc::InvalidArgument, "quota title '" + t + "' is not a population attribute");
  for (const auto& a : population.areas)
    if (!canonical_state(a.name)) throw Error(Errc::InvalidArgument, "area '" + a.name + "' is not a US state name");
}

json SimConfig::to_json() const {
  return {{"population", population.to_json()}, {"selection", selection.to_json()}, {"pipeline", pipeline.to_json()}};
}

SimConfig SimConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::InvalidArgument, "simulation config must be an object");
  SimConfig c = default_sim_config();
  try {
    if (j.contains("population")) c.population = PopulationConfig::from_json(j.at("population"));
    if (j.contains("selection")) c.selection = SelectionConfig::from_json(j.at("selection"));
    if (j.contains("pipeline")) c.pipeline = PipelineSettings::from_json(j.at("pipeline"));
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, e.what());
  }
  c.validate();
  return c;
}

SimConfig default_sim_config() {
  SimConfig c;
  c.population = default_population_config();
  c.selection = default_selection_config();
  return c;
}

// --- pipeline wiring ---------------------------------------------------------

std::vector<FeatureDef> sim_feature_defs(const PopulationConfig& cfg) {
  std::vector<FeatureDef> defs;
  for (const auto& a : cfg.attributes)
    defs.push_back(make_def(a.feature_title, a.symbol_prefix, a.categories, FeatureKind::Independent));
  return defs;
}

namespace {

std::vector<std::pair<std::string, double>> past_background(const Population& pop, int s) {
  // shares of the voting-age population, as the rendered background states
  const auto& v = pop.config.past_vote;
  std::vector<std::pair<std::string, double>> rows;
  for (std::size_t k = 0; k < v.names.size(); ++k)
    if (v.names[k] != "N") rows.emplace_back(v.names[k], 100.0 * pop.truth.past_by_area[s][k]);
  return rows;
}

}  // namespace

PollConfig sim_poll_config(const Population& pop, const PipelineSettings& s, std::uint64_t seed) {
  const auto& cfg = pop.config;
  PollConfig pc;
  pc.poll_id = "sim";
  pc.fieldwork_date = parse_date(s.pool_date);
  pc.window_days = s.window_days;
  pc.m_politics = s.m_politics;
  pc.lambda = s.lambda;
  auto demo = sim_feature_defs(cfg);
  auto past = make_def(cfg.past_vote.feature_title, cfg.past_vote.symbol_prefix, cfg.past_vote.categories,
                       FeatureKind::Dependent);
  for (const auto& t : s.quota_titles) {
    if (t == pc.area_title) continue;
    if (t == cfg.past_vote.title) {
      pc.quota_features.push_back(past);
      pc.quota_map[t] = past.title();
      continue;
    }
    for (std::size_t a = 0; a < cfg.attributes.size(); ++a)
      if (cfg.attributes[a].title == t) {
        pc.quota_features.push_back(demo[a]);
        pc.quota_map[t] = demo[a].title();
      }
  }
  pc.features = demo;
  pc.votes.push_back({past, state_template(cfg.past_vote)});
  pc.votes.push_back({make_def(cfg.vote.feature_title, cfg.vote.symbol_prefix, cfg.vote.categories,
                               FeatureKind::Dependent),
                      state_template(cfg.vote)});
  for (int a = 0; a < static_cast<int>(cfg.areas.size()); ++a)
    pc.backgrounds[cfg.areas[a].name] = past_background(pop, a);
  pc.ensemble = s.ensemble;
  pc.threads = s.threads;
  pc.seed = seed;
  return pc;
}

InferConfig sim_infer_config(const Population& pop, const PipelineSettings& s, std::uint64_t seed) {
  const auto& cfg = pop.config;
  InferConfig ic;
  auto& m = ic.model;
  for (const auto& n : cfg.vote.names)
    if (!n.empty()) m.choices.push_back(n);
  m.reference = m.choice_index("D") >= 0 ? m.choice_index("D") : 0;
  for (const auto& a : cfg.areas) m.areas.push_back(a.name);
  std::vector<std::pair<int, int>> edges;
  for (const auto& [a, b] : cfg.edges) edges.emplace_back(m.area_index(a), m.area_index(b));
  m.graph = AreaGraph::from_edges(m.S(), edges);
  const int S = m.S(), J = m.J();
  const int pd = index_of(cfg.past_vote.names, "D"), pr = index_of(cfg.past_vote.names, "R");
  Eigen::MatrixXd z(S, 1);
  for (int a = 0; a < S; ++a)
    z(a, 0) = (pr >= 0 ? pop.truth.past_by_area[a][pr] : 0.0) - (pd >= 0 ? pop.truth.past_by_area[a][pd] : 0.0);
  m.z = standardize_columns(z);
  m.covariate_names = {"past_margin"};
  m.covariates.assign(J, {});
  for (int j = 0; j < J; ++j)
    if (j != m.reference) m.covariates[j] = {0};
  for (const auto& a : cfg.attributes)
    m.effects.push_back({a.title, a.ordinal ? EffectPrior::RandomWalk : EffectPrior::Unstructured, a.categories});
  m.effects.push_back({cfg.past_vote.title, EffectPrior::Unstructured, cfg.past_vote.categories});
  InteractionSpec in;
  in.title = cfg.past_vote.title;
  in.levels = cfg.past_vote.categories;
  Eigen::MatrixXd nu = Eigen::MatrixXd::Zero(S, J);
  for (int j = 0; j < J; ++j) {
    const int k = index_of(cfg.past_vote.names, m.choices[j]);
    for (int a = 0; a < S; ++a) nu(a, j) = k >= 0 ? pop.truth.past_by_area[a][k] : 0.0;
  }
  in.nu = standardize_columns(nu);
  m.interaction = std::move(in);
  m.include_no_state = true;
  m.include_poll_walk = false;

  ic.sampler = s.sampler;
  ic.sampler.seed = seed;
  ic.sampler.threads = s.threads;
  for (const auto& a : cfg.attributes) ic.title_map[a.title] = a.feature_title;
  ic.title_map[cfg.past_vote.title] = cfg.past_vote.feature_title;
  ic.outcome_title = cfg.vote.feature_title;
  for (std::size_t k = 0; k < cfg.vote.categories.size(); ++k)
    if (!cfg.vote.names[k].empty()) ic.outcome_map[cfg.vote.categories[k]] = cfg.vote.names[k];
  ic.include_speculative = s.include_speculative;
  for (const auto& [t, f] : ic.title_map) ic.relevant_titles.insert(f);
  ic.relevant_titles.insert(cfg.vote.feature_title);
  for (const auto& a : cfg.attributes) ic.crosstab_titles.push_back(a.title);
  ic.crosstab_titles.push_back(cfg.past_vote.title);
  return ic;
}

// --- end to end --------------------------------------------------------------

Population sim_population(const SimConfig& cfg, std::uint64_t seed) {
  PopulationConfig pc = cfg.population;
  pc.seed = mix_seed(seed, pc.seed);
  return generate_population(pc);
}

StratFrame sim_strat_frame(const Population& pop) {
  std::vector<std::string> titles{"state"};
  for (const auto& a : pop.config.attributes) titles.push_back(a.title);
  titles.push_back(pop.config.past_vote.title);
  return pop.frame(titles);
}

QuotaState sim_quotas(const Population& pop, const PipelineSettings& s, std::uint64_t seed) {
  return sample_daughter_frame(pop.frame(s.quota_titles), s.sample_size, mix_seed(seed, fnv1a("daughter")));
}

OracleConfig sim_oracle_config(const Population& pop, const PipelineSettings& s, std::uint64_t seed) {
  OracleConfig oc = s.oracle;
  oc.seed = mix_seed(seed, oc.seed);
  for (const auto& a : pop.config.areas) {
    auto& c = oc.candidates[a.name];
    c.emplace("d", "Kamala Harris");
    c.emplace("r", "Donald Trump");
    c.emplace("dpast", "Joe Biden");
    c.emplace("rpast", "Donald Trump");
  }
  return oc;
}

std::uint64_t sim_platform_seed(std::uint64_t seed) { return mix_seed(seed, fnv1a("platform")); }
std::uint64_t sim_poll_seed(std::uint64_t seed) { return mix_seed(seed, fnv1a("poll")); }
std::uint64_t sim_sampler_seed(std::uint64_t seed) { return mix_seed(seed, fnv1a("sampler")); }

namespace {

double past_margin(const Population& pop, const std::vector<double>& shares) {
  const auto& names = pop.config.past_vote.names;
  const int d = index_of(names, "D"), r = index_of(names, "R");
  double voters = 0;
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k] != "N") voters += shares[k];
  if (voters <= 0 || d < 0 || r < 0) return 0.0;
  return (shares[r] - shares[d]) / voters;
}

}  // namespace

std::string sim_results_csv(const Population& pop) {
  const auto& names = pop.config.vote.names;
  const int d = index_of(names, "D"), r = index_of(names, "R");
  if (d < 0 || r < 0) throw Error(Errc::InvalidArgument, "the vote needs choices named R and D");
  std::string out = "area,margin,margin_prev\n";
  std::vector<double> nat_past(pop.config.past_vote.names.size(), 0.0);
  double total = 0;
  for (const auto& p : pop.people) nat_past[p.past] += 1.0, total += 1.0;
  for (auto& x : nat_past) x /= total;
  auto row = [&](const std::string& area, double m, double prev) {
    std::vector<std::string> cells{area, format_double(m), format_double(prev)};
    out += csv_line(cells) + "\n";
  };
  row("national", pop.truth.national[r] - pop.truth.national[d], past_margin(pop, nat_past));
  for (std::size_t s = 0; s < pop.config.areas.size(); ++s)
    row(pop.config.areas[s].name, pop.truth.by_area[s][r] - pop.truth.by_area[s][d],
        past_margin(pop, pop.truth.past_by_area[s]));
  return out;
}

SimReport run_end_to_end(const SimConfig& cfg_in, std::uint64_t seed) {
  SimConfig cfg = cfg_in;
  stage("config", [&] { cfg.validate(); });
  const auto& pv = cfg.population.vote;
  SimReport rep;

  Population pop = stage("population", [&] { return sim_population(cfg, seed); });
  const int S = static_cast<int>(pop.config.areas.size());
  const int iR = index_of(pv.names, "R"), iD = index_of(pv.names, "D");
  if (iR < 0 || iD < 0) throw Error(Errc::InvalidArgument, "config stage: the vote needs choices named R and D");

  const StratFrame frame = stage("frame", [&] { return sim_strat_frame(pop); });
  const QuotaState quotas = stage("quota", [&] { return sim_quotas(pop, cfg.pipeline, seed); });

  SimPlatform platform;
  stage("platform", [&] { simulate_platform(pop, cfg.selection, sim_platform_seed(seed), platform); });
  const Date pool_date = parse_date(cfg.pipeline.pool_date);
  SubjectPool pool = stage("pool", [&] {
    auto plan = build_query_plan(cfg.pipeline.political_terms, cfg.selection.topics, cfg.pipeline.omega);
    return run_pool(plan, platform.client, pool_date);
  });

  MockOracle oracle(sim_oracle_config(pop, cfg.pipeline, seed));
  const PollConfig pc = sim_poll_config(pop, cfg.pipeline, sim_poll_seed(seed));
  PollResult polled =
      stage("poll", [&] { return poll_users(pool, ProcessingLedger{}, quotas, oracle, platform.client, pc); });

  // raw sample margins from the annotated vote
  std::map<std::string, std::string> outcome;
  for (std::size_t k = 0; k < pv.categories.size(); ++k) outcome[normalize(pv.categories[k])] = pv.names[k];
  std::vector<std::string> area_names;
  for (const auto& a : pop.config.areas) area_names.push_back(a.name);
  std::vector<std::array<double, 3>> raw_area(S, {0, 0, 0});  // R, D, total
  std::array<double, 3> raw_nat{0, 0, 0};
  PollsterRecord raw_record;
  raw_record.pollster = "raw sample";
  raw_record.rating = "unweighted";
  raw_record.candidates = pv.names;
  for (const auto& r : polled.responses) {
    auto v = r.values.find(pv.feature_title);
    if (v == r.values.end()) continue;
    auto it = outcome.find(normalize(v->second.category));
    if (it == outcome.end()) continue;
    const int k = index_of(pv.names, it->second);
    auto bump = [&](std::array<double, 3>& t) {
      t[0] += k == iR;
      t[1] += k == iD;
      t[2] += 1;
    };
    bump(raw_nat);
    if (r.area) {
      const int s = index_of(area_names, *r.area);
      if (s >= 0) {
        bump(raw_area[s]);
        auto& counts = raw_record.counts[*r.area];
        if (counts.empty()) counts.assign(pv.names.size(), 0.0);
        counts[k] += 1;
      }
    }
  }
  auto margin = [](const std::array<double, 3>& t) { return t[2] > 0 ? (t[0] - t[1]) / t[2] : 0.0; };
  rep.raw_margin = margin(raw_nat);
  rep.truth_margin = pop.truth.national[iR] - pop.truth.national[iD];

  InferConfig ic = sim_infer_config(pop, cfg.pipeline, sim_sampler_seed(seed));
  InferResult inf = stage("infer", [&] { return make_inference(polled.responses, frame, ic); });
  rep.estimates = inf.estimates;
  rep.draws_csv = stage("infer", [&] {
    MrpModel model(ic.model, build_training_data(ic.model, responses_to_observations(polled.responses, ic)));
    return draws_to_csv(model, inf.posterior);
  });

  const int mR = ic.model.choice_index("R"), mD = ic.model.choice_index("D");
  auto nat = margin_draws(inf.crosstabs[0], mR, mD);
  std::vector<double> nat_draws(nat.col(0).data(), nat.col(0).data() + nat.rows());
  auto nat_est = AreaEstimate::from_draws("national", nat_draws);
  rep.post_margin = nat_est.point;

  json report;
  report["seed"] = seed;
  report["config"] = cfg.to_json();
  report["platform"] = {{"included", platform.included}, {"stateless", platform.stateless},
                        {"pool_users", pool.entries.size()}, {"pool_tweets", pool.tweet_count()}};
  report["poll"] = polled.stats.to_json();
  report["quota"] = {{"target", quotas.total_quota()}, {"filled", polled.quotas.total_filled()}};
  report["infer"] = inf.stats.to_json();
  report["diagnostics"] = inf.posterior.diagnostics.to_json();
  report["diagnostics"].erase("rhat");

  // state level
  auto state_map = inf.maps[1];
  auto state_draws = margin_draws(inf.crosstabs[1], mR, mD);
  std::vector<AreaEstimate> post_states;
  std::vector<double> truth_states, raw_states, past_states, post_points;
  json states = json::array();
  std::map<std::string, AreaEstimate> possum_by_area;
  std::map<std::string, double> truth_by_area;
  for (int s = 0; s < S; ++s) {
    const auto& name = pop.config.areas[s].name;
    const int f = index_of(state_map.labels, name);
    if (f < 0) continue;
    std::vector<double> d(state_draws.rows());
    for (Eigen::Index r = 0; r < state_draws.rows(); ++r) d[r] = state_draws(r, f);
    auto est = AreaEstimate::from_draws(name, d);
    const double truth = pop.truth.by_area[s][iR] - pop.truth.by_area[s][iD];
    const double past = past_margin(pop, pop.truth.past_by_area[s]);
    const double raw = raw_area[s][2] > 0 ? margin(raw_area[s]) : rep.raw_margin;
    post_states.push_back(est);
    post_points.push_back(est.point);
    truth_states.push_back(truth);
    raw_states.push_back(raw);
    past_states.push_back(past);
    possum_by_area[name] = est;
    truth_by_area[name] = truth;
    states.push_back({{"area", name},
                      {"truth", truth},
                      {"raw", raw},
                      {"raw_n", raw_area[s][2]},
                      {"post", est.point},
                      {"post_q05", est.lo},
                      {"post_q95", est.hi},
                      {"misdirection", misdirection_prob(d, past, truth)},
                      {"change_bias", change_bias(est.point, past, truth)},
                      {"p_value", posterior_pvalue(d, truth)}});
  }
  rep.raw_state_rmse = rmse(raw_states, truth_states);
  rep.post_state_rmse = rmse(post_points, truth_states);
  auto suite = evaluate_areas(post_states, truth_states);
  std::vector<AreaEstimate> raw_est;
  for (std::size_t i = 0; i < raw_states.size(); ++i) raw_est.push_back({post_states[i].area, raw_states[i], raw_states[i], raw_states[i], {}});

  double mis = 0;
  for (const auto& s : states) mis += s["misdirection"].get<double>();
  report["states"] = states;
  report["national"] = {{"truth", rep.truth_margin},
                        {"raw", rep.raw_margin},
                        {"raw_n", raw_nat[2]},
                        {"post", rep.post_margin},
                        {"post_q05", nat_est.lo},
                        {"post_q95", nat_est.hi},
                        {"raw_error", rep.raw_margin - rep.truth_margin},
                        {"post_error", rep.post_margin - rep.truth_margin},
                        {"covered", nat_est.lo <= rep.truth_margin && rep.truth_margin <= nat_est.hi}};
  report["metrics"] = {{"post", suite.to_json()},
                       {"raw", evaluate_areas(raw_est, truth_states).to_json()},
                       {"mean_misdirection", states.empty() ? 0.0 : mis / states.size()},
                       {"temporal", nullptr}};

  // crosstabs
  json cross = json::object();
  for (std::size_t m = 2; m < inf.maps.size(); ++m) {
    const auto& map = inf.maps[m];
    auto md = margin_draws(inf.crosstabs[m], mR, mD);
    std::vector<double> pts, tru;
    json rows = json::array();
    for (std::size_t f = 0; f < map.labels.size(); ++f) {
      auto it = pop.truth.by_attribute.at(map.dimension).find(map.labels[f]);
      if (it == pop.truth.by_attribute.at(map.dimension).end()) continue;
      std::vector<double> d(md.rows());
      for (Eigen::Index r = 0; r < md.rows(); ++r) d[r] = md(r, f);
      const double point = quantile(d, 0.5), truth = it->second[iR] - it->second[iD];
      pts.push_back(point);
      tru.push_back(truth);
      rows.push_back({{"category", map.labels[f]}, {"truth", truth}, {"post", point}});
    }
    const double e = rmse(pts, tru);
    rep.crosstab_rmse[map.dimension] = e;
    cross[map.dimension] = {{"rmse", e}, {"rows", rows}};
  }
  report["crosstabs"] = cross;

  // the raw sample treated as a pollster: Dirichlet comparison and OVL
  if (!raw_record.counts.empty()) {
    CompareOptions co;
    co.seed = mix_seed(seed, fnv1a("compare"));
    co.draws = static_cast<int>(nat_draws.size());
    try {
      report["raw_vs_possum"] = comparisons_to_json(compare_pollsters(possum_by_area, {raw_record}, truth_by_area, co));
    } catch (const Error& e) {
      report["raw_vs_possum"] = {{"error", e.what()}};
    }
  }
  report["summary"] = {{"truth_margin", rep.truth_margin},         {"raw_margin", rep.raw_margin},
                       {"post_margin", rep.post_margin},           {"raw_state_rmse", rep.raw_state_rmse},
                       {"post_state_rmse", rep.post_state_rmse}};
  rep.json = std::move(report);
  return rep;
}

}  // namespace possum
