#include <doctest.h>

#include <algorithm>
#include <random>

#include "possum/domain.hpp"
#include "possum/error.hpp"
#include "possum/util.hpp"

using namespace possum;

namespace {

// Hyndman-Fan type 7, written out independently.
double type7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (v.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - lo) * (v[hi] - v[lo]);
}

Timestamp at(int day, int sec = 0) {
  return Timestamp(Date(std::chrono::year(2024) / 10 / day)) + std::chrono::seconds(sec);
}

StratFrame small_frame() {
  StratFrame f;
  f.attribute_schema = {"state", "sex"};
  int id = 1;
  for (auto s : {"Texas", "Ohio"})
    for (auto x : {"male", "female"}) f.cells.push_back({id++, {{"state", s}, {"sex", x}}, 10.0 * id});
  return f;
}

}  // namespace

TEST_CASE("quantile follows type 7 interpolation") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v(1 + rng() % 30);
    for (auto& x : v) x = uniform01(rng);
    for (double p : {0.0, 0.05, 0.5, 0.95, 1.0}) CHECK(quantile(v, p) == doctest::Approx(type7(v, p)).epsilon(1e-14));
  }
}

TEST_CASE("csv lines round trip through the parser") {
  std::vector<std::string> row{"plain", "with,comma", "with \"quote\"", "", "multi\nline"};
  auto table = parse_csv("a,b,c,d,e\n" + csv_line(row) + "\n");
  REQUIRE(table.rows.size() == 1);
  CHECK(table.rows[0] == row);
  CHECK(table.column("c") == 2);
  CHECK_FALSE(table.has_column("z"));
}

TEST_CASE("format_double round trips exactly") {
  for (double x : {0.1, 1.0 / 3.0, -2.5e-17, 123456789.125, 0.0}) CHECK(std::stod(format_double(x)) == x);
}

TEST_CASE("dates and timestamps round trip") {
  CHECK(format_date(parse_date("2024-10-01")) == "2024-10-01");
  CHECK(format_timestamp(parse_timestamp("2024-10-17T08:30:05Z")) == "2024-10-17T08:30:05.000Z");
  CHECK(parse_timestamp("2024-10-17 T08:30:05.250Z") == parse_timestamp("2024-10-17T08:30:05Z"));
  CHECK_THROWS_AS(parse_date("2024-13-01"), Error);
}

TEST_CASE("seeded streams are reproducible and salted") {
  auto a = make_rng(5, {"x", "1"}), b = make_rng(5, {"x", "1"}), c = make_rng(5, {"x", "2"});
  const auto va = a(), vb = b(), vc = c();
  CHECK(va == vb);
  CHECK(va != vc);
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
}

TEST_CASE("feature definitions reject malformed choice sets") {
  CHECK_THROWS_AS(FeatureDef("", {{"A1", "x"}, {"A2", "y"}}), Error);
  CHECK_THROWS_AS(FeatureDef("T", {{"A1", "x"}}), Error);
  CHECK_THROWS_AS(FeatureDef("T", {{"A1", "x"}, {"A1", "y"}}), Error);
  FeatureDef vote("VOTE", {{"V1", "vote for the Democratic Party candidate"},
                           {"V2", "vote for the Republican Party candidate"},
                           {"V3", "did not vote"}});
  CHECK(vote.find_symbol("V2")->category == "vote for the Republican Party candidate");
  CHECK(vote.find_category("  Did Not Vote ") != nullptr);
  CHECK(vote.match_category("vote for the Republican Party candidate, Donald Trump, in Ohio") == 1u);
  CHECK(vote.match_category("did not vote in Ohio") == 2u);
  CHECK_FALSE(vote.match_category("abstained").has_value());
}

TEST_CASE("assemble_mould deduplicates and orders newest first") {
  UserRecord u;
  u.user_id = "1";
  std::vector<TweetRecord> t{{"a", "1", at(1), "old"}, {"b", "1", at(3), "new"}, {"a", "1", at(1), "old"}};
  auto m = assemble_mould(u, t);
  REQUIRE(m.tweets.size() == 2);
  CHECK(m.tweets[0].tweet_id == "b");
  t.push_back({"c", "2", at(2), "someone else"});
  CHECK_THROWS_WITH_AS(assemble_mould(u, t), doctest::Contains("ForeignTweet"), Error);
}

TEST_CASE("lookup_cell matches normalized attributes on the schema") {
  auto f = small_frame();
  CHECK(lookup_cell(f, {{"state", "ohio"}, {"sex", "Female"}, {"extra", "ignored"}}) == 4);
  CHECK_FALSE(lookup_cell(f, {{"state", "Utah"}, {"sex", "male"}}).has_value());
  try {
    lookup_cell(f, {{"state", "Ohio"}});
    FAIL("expected SchemaMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::SchemaMismatch);
  }
}

TEST_CASE("validate_frame reports each violation kind") {
  auto f = small_frame();
  CHECK(validate_frame(f).empty());
  f.cells[1].weight = -1;
  f.cells[2].cell_id = f.cells[0].cell_id;
  f.cells[3].attributes = f.cells[0].attributes;
  auto issues = validate_frame(f);
  auto has = [&](FrameViolation v) {
    return std::any_of(issues.begin(), issues.end(), [&](const FrameIssue& i) { return i.kind == v; });
  };
  CHECK(has(FrameViolation::NegativeWeight));
  CHECK(has(FrameViolation::DuplicateCellId));
  CHECK(has(FrameViolation::DuplicateCell));
}

TEST_CASE("frame csv keeps weights, order and quotas") {
  auto f = small_frame();
  auto back = frame_from_csv(frame_to_csv(f, {{1, 3}, {2, 0}, {3, 1}, {4, 2}}));
  REQUIRE(back.frame.cells.size() == f.cells.size());
  for (std::size_t i = 0; i < f.cells.size(); ++i) {
    CHECK(back.frame.cells[i].cell_id == f.cells[i].cell_id);
    CHECK(back.frame.cells[i].weight == f.cells[i].weight);
    CHECK(back.frame.cells[i].attributes == f.cells[i].attributes);
  }
  CHECK(back.quota.at(1) == 3);
}

TEST_CASE("responses survive a jsonl round trip") {
  SiliconResponse r;
  r.user_id = "42";
  r.poll_id = "p";
  r.fieldwork_date = parse_date("2024-10-20");
  r.area = "Ohio";
  r.values["AGE"] = {"AGE", "A2", "25-34", "said \"so\"\nin bio", 35};
  r.strategy_votes["VOTE|minimal"] = {"VOTE", "V1", "x", "", 0};
  SiliconResponse s = r;
  s.user_id = "43";
  s.area.reset();
  auto back = responses_from_jsonl(responses_to_jsonl({r, s}));
  REQUIRE(back.size() == 2);
  CHECK(back[0].values == r.values);
  CHECK(back[0].strategy_votes == r.strategy_votes);
  CHECK(back[0].area == r.area);
  CHECK(back[1].stateless());
}

TEST_CASE("quota state copies carry counters") {
  auto f = small_frame();
  QuotaState q(f, {{1, 1}, {2, 2}, {3, 0}, {4, 1}});
  CHECK(q.try_acquire(2));
  QuotaState copy = q;
  CHECK(copy.counter_of(2) == 1);
  CHECK(copy.try_acquire(2));
  CHECK_FALSE(copy.try_acquire(2));
  CHECK(q.counter_of(2) == 1);
  CHECK_FALSE(q.try_acquire(3));
  q.set_counter(1, 9);
  CHECK(q.counter_of(1) == 1);
  CHECK(q.total_quota() == 4);
}
