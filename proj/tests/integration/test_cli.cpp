#include <doctest.h>

#include <unistd.h>

#include <filesystem>

#include <json.hpp>

#include "commands.hpp"
#include "possum/poststrat.hpp"
#include "possum/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace possum;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("possum-cli-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "possum");
  return cli::run(args);
}

json small_config() {
  return {{"population", {{"size", 12000}}},
          {"pipeline", {{"sample_size", 300}, {"omega", 8000}, {"sampler", {{"chains", 2}, {"iterations", 300},
                                                                            {"warmup", 150}, {"thin", 2}}}}},
          {"max_rhat", 10.0}};
}

std::string write_config(const TempDir& dir, const json& cfg, const std::string& name = "config.json") {
  write_file(dir / name, cfg.dump());
  return dir / name;
}

// fixture -> pool -> poll in `out`
void stages_to_poll(const std::string& config, const std::string& out, const std::string& threads = "1") {
  REQUIRE(run({"fixture", "--config", config, "--seed", "5", "--output", out}) == 0);
  REQUIRE(run({"pool", "--config", config, "--seed", "5", "--fixture", out + "/fixture.jsonl", "--output", out}) == 0);
  REQUIRE(run({"poll", "--config", config, "--seed", "5", "--threads", threads, "--pool", out + "/pool.jsonl",
               "--fixture", out + "/fixture.jsonl", "--quota-frame", out + "/quota_frame.csv", "--output", out}) ==
          0);
}

}  // namespace

TEST_CASE("a missing fixture is a configuration error") {
  TempDir dir("missing");
  CHECK(run({"pool", "--fixture", dir / "nope.jsonl", "--output", dir / "out"}) == cli::ConfigError);
  CHECK(run({"pool", "--output", dir / "out"}) == cli::ConfigError);
}

TEST_CASE("a query weight below the topic count is a configuration error") {
  TempDir dir("omega");
  auto cfg = small_config();
  auto c = write_config(dir, cfg);
  REQUIRE(run({"fixture", "--config", c, "--output", dir / "f"}) == 0);
  cfg["pipeline"]["omega"] = 2;  // three trending topics
  auto bad = write_config(dir, cfg, "bad.json");
  CHECK(run({"pool", "--config", bad, "--fixture", dir / "f/fixture.jsonl", "--output", dir / "p"}) ==
        cli::ConfigError);
  CHECK_FALSE(fs::exists(dir / "p/pool.jsonl"));
}

TEST_CASE("invalid configurations are rejected before any stage runs") {
  TempDir dir("invalid");
  write_file(dir / "broken.json", "{ not json");
  CHECK(run({"simulate", "--config", dir / "broken.json", "--output", dir / "o"}) == cli::ConfigError);
  auto cfg = small_config();
  cfg["pipeline"]["quota_titles"] = {"state", "favourite colour"};
  CHECK(run({"simulate", "--config", write_config(dir, cfg), "--output", dir / "o"}) == cli::ConfigError);
  CHECK(run({"simulate", "--config", dir / "absent.json", "--output", dir / "o"}) == cli::ConfigError);
  CHECK(run({"fixture", "--threads", "0", "--output", dir / "o"}) == cli::ConfigError);
  CHECK_FALSE(fs::exists(dir / "o/report.json"));
}

TEST_CASE("eval of estimates equal to the results has zero error") {
  TempDir dir("identity");
  const std::vector<std::pair<std::string, double>> truth{
      {"national", 0.05}, {"Texas", 0.14}, {"Ohio", 0.11}, {"Colorado", -0.11}, {"Kansas", 0.16}};
  std::vector<Estimate> est;
  std::string results = "area,margin,margin_prev\n";
  for (const auto& [area, m] : truth) {
    est.push_back({area == "national" ? "national" : "state", area, "margin", m, m - 0.02, m, m + 0.02});
    results += area + "," + format_double(m) + "," + format_double(m - 0.01) + "\n";
  }
  write_file(dir / "estimates.csv", estimates_to_csv(est));
  write_file(dir / "results.csv", results);
  REQUIRE(run({"eval", "--estimates", dir / "estimates.csv", "--results", dir / "results.csv", "--output",
               dir / "out"}) == 0);
  auto report = json::parse(read_file(dir / "out/metrics.json"));
  const auto& m = report["metrics"];
  CHECK(m["n"] == 4);
  CHECK(m["bias"].get<double>() == 0.0);
  CHECK(m["rmse"].get<double>() == 0.0);
  CHECK(m["coverage90"].get<double>() == 1.0);
  CHECK(m["accuracy"].get<double>() == 1.0);
  CHECK(m["spearman"].get<double>() == doctest::Approx(1.0));
  CHECK(report["national"]["error"].get<double>() == 0.0);
  CHECK(report["national"]["change_bias"].get<double>() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("pollster comparison omits Spearman on three shared areas") {
  TempDir dir("pollsters");
  std::string draws = "draw,Texas,Ohio,Colorado,Kansas\n";
  for (int d = 0; d < 200; ++d) {
    const double e = (d % 20 - 9.5) / 200.0;
    draws += std::to_string(d) + "," + format_double(0.14 + e) + "," + format_double(0.11 + e) + "," +
             format_double(-0.11 + e) + "," + format_double(0.16 + e) + "\n";
  }
  write_file(dir / "draws.csv", draws);
  write_file(dir / "results.csv", "area,margin\nTexas,0.14\nOhio,0.11\nColorado,-0.11\nKansas,0.16\n");
  std::string polls = "pollster,rating,area,candidate,count,start_date,end_date\n";
  for (auto [area, r, d] : {std::tuple{"Texas", 53, 44}, std::tuple{"Ohio", 52, 45}, std::tuple{"Colorado", 42, 53}}) {
    polls += std::string("Three,B,") + area + ",R," + std::to_string(r) + ",2024-10-01,2024-10-04\n";
    polls += std::string("Three,B,") + area + ",D," + std::to_string(d) + ",2024-10-01,2024-10-04\n";
  }
  for (auto [area, r, d] : {std::tuple{"Texas", 53, 44}, std::tuple{"Ohio", 52, 45}, std::tuple{"Colorado", 42, 53},
                            std::tuple{"Kansas", 55, 41}}) {
    polls += std::string("Four,A,") + area + ",R," + std::to_string(r) + ",2024-10-01,2024-10-04\n";
    polls += std::string("Four,A,") + area + ",D," + std::to_string(d) + ",2024-10-01,2024-10-04\n";
  }
  write_file(dir / "pollsters.csv", polls);
  REQUIRE(run({"eval", "--draws", dir / "draws.csv", "--results", dir / "results.csv", "--pollsters",
               dir / "pollsters.csv", "--output", dir / "out"}) == 0);
  auto report = json::parse(read_file(dir / "out/metrics.json"));
  REQUIRE(report["pollsters"].size() == 2);
  for (const auto& row : report["pollsters"]) {
    if (row["pollster"] == "Three") CHECK(row["d_spearman"].is_null());
    else CHECK(row["d_spearman"].is_number());
  }
  auto csv = parse_csv(read_file(dir / "out/pollster_comparison.csv"));
  CHECK(csv.rows.size() == 2);
}

TEST_CASE("stage-by-stage commands reproduce the simulate estimates") {
  TempDir dir("stages");
  auto c = write_config(dir, small_config());
  const std::string out = dir / "stages";
  stages_to_poll(c, out);
  const int infer = run({"infer", "--config", c, "--seed", "5", "--responses", out + "/responses.jsonl", "--frame",
                         out + "/frame.csv", "--output", out});
  REQUIRE(infer == 0);
  REQUIRE(run({"simulate", "--config", c, "--seed", "5", "--output", dir / "sim"}) == 0);
  CHECK(read_file(out + "/estimates.csv") == read_file(dir / "sim/estimates.csv"));
  CHECK(read_file(out + "/draws.csv") == read_file(dir / "sim/draws.csv"));

  REQUIRE(run({"eval", "--config", c, "--seed", "5", "--draws", out + "/margin_draws.csv", "--results",
               out + "/results.csv", "--output", out}) == 0);
  auto metrics = json::parse(read_file(out + "/metrics.json"));
  CHECK(metrics["metrics"]["n"] == 8);
  CHECK(metrics["national"].contains("misdirection"));
}

TEST_CASE("poll output does not depend on the thread count") {
  TempDir dir("threads");
  auto c = write_config(dir, small_config());
  stages_to_poll(c, dir / "one", "1");
  stages_to_poll(c, dir / "four", "4");
  for (auto f : {"responses.jsonl", "audit.jsonl", "ledger.csv", "quota_report.csv", "poll_stats.json"})
    CHECK(read_file(dir / (std::string("one/") + f)) == read_file(dir / (std::string("four/") + f)));
}

TEST_CASE("dropping speculative responses shrinks the training set") {
  TempDir dir("speculative");
  auto cfg = small_config();
  cfg["pipeline"]["oracle"] = {{"speculation", {{"AGE", {{"mean", 75}, {"spread", 15}}}}}};
  auto c = write_config(dir, cfg);
  const std::string out = dir / "run";
  stages_to_poll(c, out);
  auto infer = [&](const std::string& flag, const std::string& to) {
    return run({"infer", "--config", c, "--seed", "5", "--include-speculative", flag, "--responses",
                out + "/responses.jsonl", "--frame", out + "/frame.csv", "--output", to});
  };
  REQUIRE(infer("true", dir / "keep") == 0);
  REQUIRE(infer("false", dir / "drop") == 0);
  auto keep = json::parse(read_file(dir / "keep/infer_stats.json"));
  auto drop = json::parse(read_file(dir / "drop/infer_stats.json"));
  CHECK(keep["speculative_dropped"] == 0);
  CHECK(drop["speculative_dropped"].get<int>() > 0);
  CHECK(drop["training"].get<int>() == keep["training"].get<int>() - drop["speculative_dropped"].get<int>());
}
