#include <doctest.h>

#include "possum/error.hpp"
#include "possum/pipeline.hpp"
#include "possum/simharness.hpp"

using namespace possum;

namespace {

SimConfig tiny_config() {
  auto cfg = default_sim_config();
  cfg.population.size = 8000;
  cfg.pipeline.sample_size = 200;
  cfg.pipeline.omega = 6000;
  cfg.pipeline.sampler = {2, 200, 100, 2, 8, 0.8, 1, 1};
  return cfg;
}

struct Polled {
  Population pop;
  PollResult result;
};

Polled run_poll(const SimConfig& cfg, std::uint64_t seed, int threads) {
  Polled out{sim_population(cfg, seed), {}};
  SimPlatform platform;
  simulate_platform(out.pop, cfg.selection, sim_platform_seed(seed), platform);
  auto plan = build_query_plan(cfg.pipeline.political_terms, cfg.selection.topics, cfg.pipeline.omega);
  auto pool = run_pool(plan, platform.client, parse_date(cfg.pipeline.pool_date));
  MockOracle oracle(sim_oracle_config(out.pop, cfg.pipeline, seed));
  auto pc = sim_poll_config(out.pop, cfg.pipeline, sim_poll_seed(seed));
  pc.threads = threads;
  out.result = poll_users(pool, ProcessingLedger{}, sim_quotas(out.pop, cfg.pipeline, seed), oracle,
                          platform.client, pc);
  return out;
}

SiliconResponse response(const std::string& id, int spec_age, const std::string& vote) {
  SiliconResponse r;
  r.user_id = id;
  r.area = "Texas";
  r.values["AGE"] = {"AGE", "A1", "18-24", "", spec_age};
  r.values["VOTE"] = {"VOTE", "V1", vote, "", 10};
  return r;
}

}  // namespace

TEST_CASE("population truth shares are proper distributions") {
  auto pop = generate_population(tiny_config().population);
  CHECK(pop.people.size() == 8000u);
  double total = 0;
  for (double x : pop.truth.national) total += x;
  CHECK(total == doctest::Approx(1.0));
  for (const auto& row : pop.truth.by_area) {
    double t = 0;
    for (double x : row) t += x;
    CHECK(t == doctest::Approx(1.0));
  }
  auto frame = sim_strat_frame(pop);
  CHECK(frame.total_weight() == doctest::Approx(8000));
  CHECK(validate_frame(frame).empty());
}

TEST_CASE("population generation is seeded") {
  auto cfg = tiny_config().population;
  auto a = generate_population(cfg), b = generate_population(cfg);
  cfg.seed += 1;
  auto c = generate_population(cfg);
  CHECK(a.truth.national == b.truth.national);
  CHECK(a.truth.national != c.truth.national);
}

TEST_CASE("configs round trip through json and reject bad values") {
  auto cfg = tiny_config();
  auto back = SimConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK(SimConfig::from_json(nlohmann::json::object()).to_json() == default_sim_config().to_json());

  auto bad = cfg;
  bad.population.attributes[0].probs = {0.7, 0.7};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.pipeline.quota_titles = {"state", "shoe size"};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.population.edges.push_back({"Texas", "Atlantis"});
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("poll stats are consistent with the responses") {
  auto p = run_poll(tiny_config(), 3, 1);
  const auto& s = p.result.stats;
  CHECK(s.pooled >= s.after_temporal);
  CHECK(s.after_temporal >= s.after_null_geography);
  CHECK(s.after_null_geography >= s.persons);
  CHECK(s.persons >= s.in_usa);
  int stateless = 0;
  for (const auto& r : p.result.responses) stateless += r.stateless();
  CHECK(stateless <= s.stateless);
  CHECK(static_cast<int>(p.result.responses.size()) == s.accepted);
  // a quota slot stays taken when the later extraction fails
  const int with_area = s.accepted - stateless;
  CHECK(p.result.quotas.total_filled() == with_area + s.refused + s.failed);
  CHECK(p.result.quotas.total_filled() <= p.result.quotas.total_quota());
  for (const auto& [cell, q] : p.result.quotas.quota()) CHECK(p.result.quotas.counter_of(cell) <= q);
  CHECK(p.result.ledger.size() >= p.result.responses.size());
  auto report = parse_csv(quota_report_csv(p.result.quotas));
  CHECK(report.rows.size() == p.result.quotas.quota().size());
  CHECK(report.has_column("quota"));
}

TEST_CASE("poll results do not depend on the thread count") {
  auto a = run_poll(tiny_config(), 4, 1);
  auto b = run_poll(tiny_config(), 4, 3);
  CHECK(responses_to_jsonl(a.result.responses) == responses_to_jsonl(b.result.responses));
  CHECK(audit_to_jsonl(a.result.audit) == audit_to_jsonl(b.result.audit));
  CHECK(a.result.stats.to_json() == b.result.stats.to_json());
}

TEST_CASE("speculation policy decides which responses train the model") {
  InferConfig cfg;
  cfg.model.choices = {"D", "R"};
  cfg.model.areas = {"Texas"};
  cfg.model.graph = AreaGraph::from_edges(1, {});
  cfg.outcome_title = "VOTE";
  cfg.outcome_map = {{"democrat", "D"}, {"republican", "R"}};
  cfg.relevant_titles = {"AGE"};
  std::vector<SiliconResponse> rs{response("1", 90, "democrat"), response("2", 10, "republican"),
                                  response("3", 10, "green")};
  InferStats stats;
  auto all = responses_to_observations(rs, cfg, &stats);
  CHECK(all.size() == 2);
  CHECK(stats.outcome_dropped == 1);
  CHECK(stats.speculative_dropped == 0);
  cfg.include_speculative = false;
  InferStats strict;
  auto kept = responses_to_observations(rs, cfg, &strict);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].choice == "R");
  CHECK(strict.speculative_dropped == 1);
}

TEST_CASE("end-to-end runs are reproducible from the seed") {
  auto cfg = tiny_config();
  auto a = run_end_to_end(cfg, 21);
  auto b = run_end_to_end(cfg, 21);
  CHECK(a.json.dump() == b.json.dump());
  CHECK(a.draws_csv == b.draws_csv);
  CHECK(a.json.contains("states"));
  CHECK(std::abs(a.post_margin) < 1);
  auto results = parse_csv(sim_results_csv(sim_population(cfg, 21)));
  CHECK(results.rows.front()[0] == "national");
  CHECK(results.rows.size() == cfg.population.areas.size() + 1);
}

TEST_CASE("stage failures name the stage") {
  auto cfg = tiny_config();
  cfg.pipeline.omega = 1;
  try {
    run_end_to_end(cfg, 1);
    FAIL("expected a pool stage failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("pool stage") != std::string::npos);
  }
}
