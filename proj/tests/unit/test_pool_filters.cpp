#include <doctest.h>

#include "possum/filters.hpp"
#include "possum/pool.hpp"

using namespace possum;

namespace {

Timestamp ts(int day) { return Timestamp(Date(std::chrono::year(2024) / 10 / day)); }

UserRecord user(const std::string& id, std::optional<std::string> loc = "Austin, TX") {
  UserRecord u;
  u.user_id = id;
  u.username = "user" + id;
  u.location_raw = std::move(loc);
  return u;
}

TweetRecord tweet(const std::string& id, const std::string& author, int day) {
  return {id, author, ts(day), "text " + id};
}

struct ScriptedAnnotator : AnnotatorBackend {
  std::string reply;
  std::string last_prompt;
  std::string complete(const std::string& prompt) override {
    last_prompt = prompt;
    return reply;
  }
  std::string model_name() const override { return "scripted"; }
};

}  // namespace

TEST_CASE("query plan splits the weight over trending topics") {
  auto plan = build_query_plan("election OR vote", {"a", "b", "c"}, 10);
  REQUIRE(plan.queries.size() == 4);
  CHECK(plan.queries[0].weight == 10);
  CHECK(plan.queries[0].kind.is_political());
  for (std::size_t i = 1; i < 4; ++i) CHECK(plan.queries[i].weight == 3);
  CHECK(plan.queries[2].kind == CaptureKind::trending("b"));

  auto code = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::Io;
  };
  CHECK(code([] { build_query_plan("x", {}, 10); }) == Errc::EmptyTopics);
  CHECK(code([] { build_query_plan("x", {"a", "b", "c"}, 2); }) == Errc::WeightTooSmall);
  CHECK(code([] { build_query_plan(" ", {"a"}, 2); }) == Errc::InvalidArgument);
}

TEST_CASE("run_pool merges users across queries and keeps the first capture kind") {
  MockPlatformClient client;
  client.add("politics", user("1"), {tweet("t1", "1", 5)});
  client.add("politics", user("2"), {tweet("t2", "2", 5)});
  client.add("topic", user("1"), {tweet("t3", "1", 6)});
  client.add("topic", user("3"), {tweet("t4", "3", 6)});
  auto plan = build_query_plan("politics", {"topic"}, 5);
  auto pool = run_pool(plan, client, parse_date("2024-10-07"));
  REQUIRE(pool.entries.size() == 3);
  CHECK(pool.entries[0].user.capture_query_kind.is_political());
  CHECK(pool.entries[0].tweets.size() == 2);
  CHECK(pool.entries[2].user.capture_query_kind == CaptureKind::trending("topic"));
  CHECK(pool.tweet_count() == 4);

  auto back = pool_from_jsonl(pool_to_jsonl(pool));
  CHECK(back.pool_date == pool.pool_date);
  REQUIRE(back.entries.size() == 3);
  CHECK(back.entries[2].user == pool.entries[2].user);
  CHECK(back.entries[0].tweets == pool.entries[0].tweets);
  CHECK(plan_from_json(plan_to_json(plan)).queries.size() == 2);
}

TEST_CASE("run_pool truncates each query to its weight") {
  MockPlatformClient client;
  for (int i = 0; i < 10; ++i) client.add("q", user(std::to_string(i)), {tweet("t" + std::to_string(i), std::to_string(i), 1 + i)});
  auto pool = run_pool(build_query_plan("q", {"none"}, 4), client, parse_date("2024-10-20"));
  CHECK(pool.entries.size() == 4);
}

TEST_CASE("a failing query reports its index and the partial pool") {
  MockPlatformClient client;
  client.add("politics", user("1"), {tweet("t1", "1", 5)});
  client.fail_on_call(2, Errc::RateLimited);
  try {
    run_pool(build_query_plan("politics", {"topic"}, 5), client, parse_date("2024-10-07"));
    FAIL("expected PoolError");
  } catch (const PoolError& e) {
    CHECK(e.query_index() == 2);
    CHECK(e.cause() == Errc::RateLimited);
    CHECK(e.partial().entries.size() == 1);
  }
}

TEST_CASE("temporal filter drops users inside a closed window") {
  SubjectPool pool;
  pool.pool_date = parse_date("2024-10-20");
  for (auto id : {"fresh", "edge", "outside", "never"}) pool.entries.push_back({user(id), {}});
  ProcessingLedger ledger;
  ledger.record("fresh", parse_date("2024-10-19"));
  ledger.record("edge", parse_date("2024-10-13"));
  ledger.record("outside", parse_date("2024-10-12"));
  auto kept = temporal_filter(pool, ledger, 7);
  REQUIRE(kept.entries.size() == 2);
  CHECK(kept.entries[0].user.user_id == "outside");
  CHECK(kept.entries[1].user.user_id == "never");
  CHECK_THROWS_AS(temporal_filter(pool, ledger, 0), Error);
}

TEST_CASE("ledger keeps the latest date and round trips") {
  ProcessingLedger ledger;
  ledger.record("a", parse_date("2024-10-10"));
  ledger.record("a", parse_date("2024-10-01"));
  ledger.record("b,c", parse_date("2024-09-01"));
  CHECK(ledger.last_processed("a") == parse_date("2024-10-10"));
  auto back = ProcessingLedger::from_csv(ledger.to_csv());
  CHECK(back.entries() == ledger.entries());
  CHECK(ProcessingLedger::from_csv("").size() == 0);
}

TEST_CASE("null geography filter drops missing and blank locations") {
  SubjectPool pool;
  pool.entries = {{user("1"), {}}, {user("2", std::nullopt), {}}, {user("3", "  "), {}}};
  auto kept = null_geography_filter(pool);
  REQUIRE(kept.entries.size() == 1);
  CHECK(kept.entries[0].user.user_id == "1");
}

TEST_CASE("entity replies") {
  CHECK(parse_entity_reply("P") == EntityKind::Person);
  CHECK(parse_entity_reply(" \"O\"\n") == EntityKind::Other);
  CHECK_THROWS_AS(parse_entity_reply("Person"), Error);
  CHECK_THROWS_AS(parse_entity_reply(""), Error);
}

TEST_CASE("geographic replies") {
  CHECK(parse_geo_reply("Not from a state in the USA") == GeoResult{false, std::nullopt});
  CHECK(parse_geo_reply("USA").stateless());
  CHECK(parse_geo_reply("\"new york.\"") == GeoResult{true, "New York"});
  CHECK(parse_geo_reply("District of Columbia").level2 == "District of Columbia");
  CHECK_THROWS_AS(parse_geo_reply("Narnia"), Error);
  CHECK(us_state_names().size() == 51);
  CHECK_FALSE(canonical_state("Puerto Rico").has_value());
}

TEST_CASE("filters route the mould through the annotator") {
  ScriptedAnnotator a;
  Mould m{user("9"), {tweet("t", "9", 3)}, false};
  a.reply = "O";
  CHECK(entity_filter(m, a) == EntityKind::Other);
  CHECK(a.last_prompt.find("text t") != std::string::npos);
  a.reply = "Texas";
  CHECK(geographic_filter(m, a).level2 == "Texas");
  a.reply = "maybe";
  CHECK_THROWS_AS(geographic_filter(m, a), Error);
}

TEST_CASE("timeline depth scales trending users") {
  CHECK(timeline_depth(CaptureKind::political(), 20, 2.0) == 20);
  CHECK(timeline_depth(CaptureKind::trending("x"), 20, 2.0) == 40);
  CHECK(timeline_depth(CaptureKind::trending("x"), 3, 1.5) == 5);
  CHECK_THROWS_AS(timeline_depth(CaptureKind::political(), 20, 1.0), Error);
  CHECK_THROWS_AS(timeline_depth(CaptureKind::political(), 0, 2.0), Error);
}

TEST_CASE("augmentation happens once and merges timelines") {
  MockPlatformClient client;
  client.add(std::nullopt, user("5"), {tweet("a", "5", 1), tweet("b", "5", 2), tweet("c", "5", 3)});
  Mould m{user("5"), {tweet("c", "5", 3)}, false};
  auto aug = augment_mould(m, client, 2);
  CHECK(aug.augmented);
  REQUIRE(aug.tweets.size() == 2);
  CHECK(aug.tweets[0].tweet_id == "c");
  CHECK(aug.tweets[1].tweet_id == "b");
  try {
    augment_mould(aug, client, 2);
    FAIL("expected AlreadyAugmented");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::AlreadyAugmented);
  }
  CHECK_THROWS_AS(augment_mould(Mould{user("unknown"), {}, false}, client, 2), Error);
}

TEST_CASE("quota filter distinguishes missing cells from full ones") {
  StratFrame f;
  f.attribute_schema = {"state"};
  f.cells = {{1, {{"state", "Ohio"}}, 1.0}};
  QuotaState q(f, {{1, 1}});
  CHECK(quota_filter({{"state", "Ohio"}}, q).outcome == QuotaOutcome::Accepted);
  auto second = quota_filter({{"state", "Ohio"}}, q);
  CHECK(second.outcome == QuotaOutcome::Rejected);
  CHECK(second.cell_id == 1);
  CHECK(quota_filter({{"state", "Utah"}}, q).outcome == QuotaOutcome::NoCell);
}

TEST_CASE("audit records round trip") {
  std::vector<AuditRecord> r{{"1", "entity", "drop", "O"}, {"2", "quota", "accept", "cell 3"}};
  auto back = audit_from_jsonl(audit_to_jsonl(r));
  REQUIRE(back.size() == 2);
  CHECK(back[1].reason == "cell 3");
}
