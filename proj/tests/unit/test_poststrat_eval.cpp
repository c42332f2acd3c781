#include <doctest.h>

#include <random>

#include "possum/error.hpp"
#include "possum/eval.hpp"
#include "possum/poststrat.hpp"

using namespace possum;

namespace {

ModelSpec two_area_spec() {
  ModelSpec s;
  s.choices = {"D", "R"};
  s.areas = {"a", "b"};
  s.graph = AreaGraph::from_edges(2, {{0, 1}});
  s.effects = {{"sex", EffectPrior::Unstructured, {"m", "f"}}};
  return s;
}

StratFrame two_area_frame() {
  StratFrame f;
  f.attribute_schema = {"state", "sex"};
  f.cells = {{1, {{"state", "a"}, {"sex", "m"}}, 10},
             {2, {{"state", "a"}, {"sex", "f"}}, 30},
             {3, {{"state", "b"}, {"sex", "m"}}, 20},
             {4, {{"state", "b"}, {"sex", "f"}}, 40}};
  return f;
}

ParameterVector params(const ModelSpec& spec, double a, double la, double lb, double em) {
  ParameterVector p;
  p.alpha = Eigen::Vector2d(0, a);
  p.lambda = Eigen::MatrixXd::Zero(2, 2);
  p.lambda(0, 1) = la;
  p.lambda(1, 1) = lb;
  p.effect = {Eigen::MatrixXd::Zero(2, 2)};
  p.effect[0](0, 1) = em;
  p.beta = Eigen::MatrixXd::Zero(0, 2);
  (void)spec;
  return p;
}

double logistic(double x) { return 1 / (1 + std::exp(-x)); }

int code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return static_cast<int>(e.code());
  }
  return -1;
}

}  // namespace

TEST_CASE("cell predictor and poststratified shares match a direct weighted average") {
  auto spec = two_area_spec();
  auto frame = two_area_frame();
  auto p = params(spec, 0.3, -0.5, 0.8, 1.1);
  auto mu = cell_linear_predictor(p, frame.cells[0], spec);
  CHECK(mu(0) == 0.0);
  CHECK(mu(1) == doctest::Approx(0.3 - 0.5 + 1.1));

  const double r1 = logistic(0.3 - 0.5 + 1.1), r2 = logistic(0.3 - 0.5), r3 = logistic(0.3 + 0.8 + 1.1),
               r4 = logistic(0.3 + 0.8);
  auto out = poststratify_draws({p}, spec, frame, {national_map(frame), crosstab_by(frame, "state")});
  REQUIRE(out.size() == 2);
  CHECK(out[0][0](0, 1) == doctest::Approx((10 * r1 + 30 * r2 + 20 * r3 + 40 * r4) / 100).epsilon(1e-12));
  CHECK(out[1][0](0, 1) == doctest::Approx((10 * r1 + 30 * r2) / 40).epsilon(1e-12));
  CHECK(out[1][0](1, 1) == doctest::Approx((20 * r3 + 40 * r4) / 60).epsilon(1e-12));
  CHECK(out[1][0].row(1).sum() == doctest::Approx(1.0));

  auto margin = margin_draws(out[1], 1, 0);
  CHECK(margin(0, 0) == doctest::Approx(2 * out[1][0](0, 1) - 1));
}

TEST_CASE("per-draw weights and empty crosstabs") {
  CellProbs probs{(Eigen::MatrixXd(2, 2) << 0.2, 0.8, 0.6, 0.4).finished()};
  CrosstabMap map{"x", {"one", "two"}, {0, 1}};
  auto post = poststratify(probs, {Eigen::Vector2d(1, 3)}, map);
  CHECK(post[0](0, 1) == doctest::Approx(0.8));
  map.of_cell = {0, 0};
  post = poststratify(probs, {Eigen::Vector2d(1, 3)}, {"x", {"all"}, {0, 0}});
  CHECK(post[0](0, 0) == doctest::Approx((0.2 + 1.8) / 4));
  CHECK(code_of([&] { poststratify(probs, {Eigen::Vector2d(0, 3)}, {"x", {"a", "b"}, {0, 1}}); }) ==
        static_cast<int>(Errc::EmptyCrosstab));
  CHECK(code_of([&] { poststratify(probs, {Eigen::Vector2d(-1, 3)}, {"x", {"a"}, {0, 0}}); }) ==
        static_cast<int>(Errc::InvalidArgument));
}

TEST_CASE("design rejects cells outside the model") {
  auto spec = two_area_spec();
  auto frame = two_area_frame();
  frame.cells[2].attributes["sex"] = "x";
  CHECK(code_of([&] { design_cells(spec, frame); }) == static_cast<int>(Errc::UnknownCategory));
}

TEST_CASE("summaries add a margin row and round trip through csv") {
  auto spec = two_area_spec();
  auto frame = two_area_frame();
  std::vector<ParameterVector> draws;
  for (int d = 0; d < 40; ++d) draws.push_back(params(spec, d * 0.01, 0, 0, 0));
  auto map = crosstab_by(frame, "state");
  auto post = poststratify_draws(draws, spec, frame, {map})[0];
  auto est = summarize(map, post, spec, 1, 0);
  CHECK(est.size() == 6);
  const auto& m = est[2];
  CHECK(m.quantity == "margin");
  CHECK(m.q05 <= m.q50);
  CHECK(m.q50 <= m.q95);
  auto back = estimates_from_csv(estimates_to_csv(est));
  REQUIRE(back.size() == est.size());
  CHECK(back[2].q50 == est[2].q50);
  CHECK(back[5].label == "b");
}

TEST_CASE("metric errors") {
  CHECK(code_of([] { bias({1, 2}, {1}); }) == static_cast<int>(Errc::LengthMismatch));
  CHECK(code_of([] { rmse({}, {}); }) == static_cast<int>(Errc::LengthMismatch));
  CHECK(code_of([] { spearman({1, 1, 1}, {1, 2, 3}); }) == static_cast<int>(Errc::DegenerateRanks));
  CHECK(code_of([] { spearman({1}, {1}); }) == static_cast<int>(Errc::InvalidArgument));
  std::vector<double> few(9, 0.0);
  CHECK(code_of([&] { ovl(few, few); }) == static_cast<int>(Errc::TooFewDraws));
  CHECK(code_of([] { dirichlet_margin_draws({0, 0, 0}, 10, 1); }) == static_cast<int>(Errc::AllZero));
  Eigen::MatrixXd two(5, 2);
  CHECK(code_of([&] { temporal_corr_prob(two, {1, 2}); }) == static_cast<int>(Errc::InvalidArgument));
}

TEST_CASE("simple metrics on hand examples") {
  CHECK(bias({0.1, 0.3}, {0.0, 0.2}) == doctest::Approx(0.1));
  CHECK(rmse({1, -1}, {0, 0}) == doctest::Approx(1.0));
  CHECK(average_ranks({10, 20, 20, 5}) == std::vector<double>{2, 3.5, 3.5, 1});
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(winner_accuracy({0.1, -0.2, 0.0}, {0.3, 0.1, 0.2}) == doctest::Approx(1.0 / 3));
  CHECK(heaviside(0) == 0.5);
  CHECK(heaviside(-1) == 0);
  std::vector<AreaEstimate> est{{"a", 0, -0.1, 0.1, {}}, {"b", 0, 0.2, 0.3, {}}};
  CHECK(coverage90(est, {0.1, 0.1}) == doctest::Approx(0.5));
}

TEST_CASE("area estimates use the median and 90% bounds") {
  std::vector<double> d(101);
  for (int i = 0; i <= 100; ++i) d[i] = i;
  auto e = AreaEstimate::from_draws("x", d);
  CHECK(e.point == 50);
  CHECK(e.lo == doctest::Approx(5));
  CHECK(e.hi == doctest::Approx(95));
}

TEST_CASE("misdirection and change bias") {
  // all draws predict movement toward R while the state moved toward D
  CHECK(misdirection_prob({0.2, 0.3, 0.25}, 0.1, 0.05) == doctest::Approx(1.0));
  CHECK(misdirection_prob({0.2, 0.0, 0.1}, 0.1, 0.15) == doctest::Approx(1 - 1.5 / 3));
  CHECK(change_bias(0.12, 0.1, 0.15) == doctest::Approx(-0.03));
}

TEST_CASE("posterior p-value takes the tail on the observed side") {
  std::vector<double> d{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(posterior_pvalue(d, 9) == doctest::Approx(0.2));
  CHECK(posterior_pvalue(d, 2) == doctest::Approx(0.2));
  CHECK(posterior_pvalue(d, 20) == 0.0);
}

TEST_CASE("temporal correlation probability counts positive rank correlations") {
  Eigen::MatrixXd s(4, 3);
  s << 1, 2, 3,  //
      3, 2, 1,   //
      1, 3, 2,   //
      5, 5, 5;
  auto r = temporal_corr_prob(s, {0.1, 0.2, 0.3});
  CHECK(r.prob == doctest::Approx(0.5));
  CHECK(r.degenerate == 1);
  CHECK(r.warnings.size() == 1);
}

TEST_CASE("dirichlet draws have the right moments and respect zero counts") {
  auto d = dirichlet_margin_draws({30, 60, 10}, 20000, 7, 1, 0);
  double m = 0;
  for (double x : d.margin) m += x;
  m /= d.margin.size();
  CHECK(m == doctest::Approx(0.3).epsilon(0.03));
  CHECK(d.pi.col(2).mean() == doctest::Approx(0.1).epsilon(0.05));
  auto z = dirichlet_margin_draws({5, 0}, 100, 7);
  CHECK(z.pi.col(1).isZero());
  auto lifted = dirichlet_margin_draws({5, 0}, 100, 7, 0, 1, 0.5);
  CHECK(lifted.pi.col(1).maxCoeff() > 0);
  auto again = dirichlet_margin_draws({30, 60, 10}, 20000, 7, 1, 0);
  CHECK(again.margin == d.margin);
}

TEST_CASE("pollster comparison drops Spearman for small area sets") {
  std::map<std::string, AreaEstimate> mine;
  std::map<std::string, double> results;
  const std::vector<std::string> areas{"a", "b", "c", "d", "e"};
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0, 0.02);
  for (std::size_t i = 0; i < areas.size(); ++i) {
    const double truth = -0.2 + 0.1 * i;
    results[areas[i]] = truth;
    std::vector<double> draws(500);
    for (auto& x : draws) x = truth + z(rng);
    mine[areas[i]] = AreaEstimate::from_draws(areas[i], draws);
  }
  PollsterRecord small{"Small", "A", {"R", "D"}, {}, {}, {}};
  small.counts["a"] = {40, 60};
  small.counts["b"] = {45, 55};
  small.counts["zz"] = {50, 50};
  PollsterRecord big{"Big", "B", {"D", "R"}, {}, {}, {}};
  for (std::size_t i = 0; i < areas.size(); ++i) big.counts[areas[i]] = {50.0 - 5 * i, 50.0 + 5 * i};
  CompareOptions opt;
  opt.draws = 1000;
  auto rows = compare_pollsters(mine, {small, big}, results, opt);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].areas.size() == 2);
  CHECK_FALSE(rows[0].d_spearman.has_value());
  CHECK(rows[1].d_spearman.has_value());
  CHECK(rows[1].ovl >= 0);
  CHECK(rows[1].ovl <= 1);
  CHECK(rows[1].d_bias == doctest::Approx(rows[1].possum.bias - rows[1].reference.bias));

  PollsterRecord none{"None", "C", {"R", "D"}, {{"zz", {1, 1}}}, {}, {}};
  CHECK(code_of([&] { compare_pollsters(mine, {none}, results, opt); }) == static_cast<int>(Errc::NoSharedAreas));
}

TEST_CASE("pollster csv parsing groups counts by area") {
  std::string csv =
      "pollster,rating,area,candidate,count,start_date,end_date\n"
      "P,A+,Texas,R,52,2024-10-01,2024-10-05\n"
      "P,A+,Texas,D,45,2024-10-01,2024-10-05\n"
      "P,A+,Ohio,R,50,2024-10-01,2024-10-05\n"
      "P,A+,Ohio,D,47,2024-10-01,2024-10-05\n";
  auto p = pollsters_from_csv(csv);
  REQUIRE(p.size() == 1);
  CHECK(p[0].candidates == std::vector<std::string>{"R", "D"});
  CHECK(p[0].counts.at("Ohio") == std::vector<double>{50, 47});
  CHECK(format_date(p[0].end) == "2024-10-05");
}
