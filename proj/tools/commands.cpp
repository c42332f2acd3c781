#include "commands.hpp"

#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "possum/error.hpp"
#include "possum/eval.hpp"
#include "possum/simharness.hpp"
#include "possum/util.hpp"

namespace possum::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigProblem : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config, output = "out";
  std::uint64_t seed = 1;
  std::optional<int> threads;
  std::optional<bool> include_speculative;
  std::string fixture, pool, quota_frame, responses, frame, estimates, results, draws, pollsters;
  double max_rhat = 1.1;
};

struct Loaded {
  SimConfig sim;
  json raw;
};

std::string path_or(const std::string& flag, const json& raw, const char* key) {
  if (!flag.empty()) return flag;
  if (raw.contains("paths") && raw["paths"].contains(key)) return raw["paths"][key].get<std::string>();
  return {};
}

std::string read_input(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigProblem(std::string("no ") + what + " path given");
  if (!fs::exists(path)) throw ConfigProblem(std::string(what) + " file not found: " + path);
  return read_file(path);
}

Loaded load_config(Options& o) {
  Loaded l;
  try {
    if (!o.config.empty()) l.raw = json::parse(read_input(o.config, "config"));
    else l.raw = json::object();
    l.sim = SimConfig::from_json(l.raw);
  } catch (const json::exception& e) {
    throw ConfigProblem(std::string("config: ") + e.what());
  } catch (const Error& e) {
    throw ConfigProblem(std::string("config: ") + e.what());
  }
  if (o.threads) {
    if (*o.threads < 1) throw ConfigProblem("--threads must be at least 1");
    l.sim.pipeline.threads = *o.threads;
  }
  if (o.include_speculative) l.sim.pipeline.include_speculative = *o.include_speculative;
  o.max_rhat = l.raw.value("max_rhat", o.max_rhat);
  o.fixture = path_or(o.fixture, l.raw, "fixture");
  o.pool = path_or(o.pool, l.raw, "pool");
  o.quota_frame = path_or(o.quota_frame, l.raw, "quota_frame");
  o.responses = path_or(o.responses, l.raw, "responses");
  o.frame = path_or(o.frame, l.raw, "frame");
  o.estimates = path_or(o.estimates, l.raw, "estimates");
  o.results = path_or(o.results, l.raw, "results");
  o.draws = path_or(o.draws, l.raw, "draws");
  o.pollsters = path_or(o.pollsters, l.raw, "pollsters");
  return l;
}

void emit(const Options& o, const std::string& name, const std::string& content) {
  fs::create_directories(o.output);
  write_file(fs::path(o.output) / name, content);
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

int converged_or(const Options& o, const Diagnostics& d) {
  if (d.max_rhat() > o.max_rhat) {
    std::cerr << "warning: max split R-hat " << format_double(d.max_rhat()) << " exceeds " << format_double(o.max_rhat)
              << "\n";
    return NonConvergence;
  }
  return Ok;
}

// --- subcommands -------------------------------------------------------------

int cmd_fixture(Options& o) {
  auto l = load_config(o);
  auto pop = sim_population(l.sim, o.seed);
  SimPlatform platform;
  simulate_platform(pop, l.sim.selection, sim_platform_seed(o.seed), platform);
  auto quotas = sim_quotas(pop, l.sim.pipeline, o.seed);
  emit(o, "fixture.jsonl", platform.fixture);
  emit(o, "frame.csv", frame_to_csv(sim_strat_frame(pop)));
  emit(o, "quota_frame.csv", frame_to_csv(quotas.frame(), quotas.quota()));
  emit(o, "results.csv", sim_results_csv(pop));
  return Ok;
}

int cmd_pool(Options& o) {
  auto l = load_config(o);
  MockPlatformClient client;
  try {
    client.load_jsonl(read_input(o.fixture, "fixture"));
  } catch (const Error& e) {
    throw ConfigProblem(std::string("fixture: ") + e.what());
  }
  QueryPlan plan;
  try {
    plan = build_query_plan(l.sim.pipeline.political_terms, l.sim.selection.topics, l.sim.pipeline.omega);
  } catch (const Error& e) {
    throw ConfigProblem(std::string("query plan: ") + e.what());
  }
  auto pool = run_pool(plan, client, parse_date(l.sim.pipeline.pool_date));
  emit(o, "pool.jsonl", pool_to_jsonl(pool));
  emit(o, "plan.json", dump(plan_to_json(plan)));
  return Ok;
}

int cmd_poll(Options& o) {
  auto l = load_config(o);
  auto pool = pool_from_jsonl(read_input(o.pool, "pool"));
  MockPlatformClient client;
  client.load_jsonl(read_input(o.fixture, "fixture"));
  auto pop = sim_population(l.sim, o.seed);
  QuotaState quotas;
  if (!o.quota_frame.empty()) {
    auto ff = frame_from_csv(read_input(o.quota_frame, "quota frame"));
    quotas = QuotaState(ff.frame, ff.quota);
  } else {
    quotas = sim_quotas(pop, l.sim.pipeline, o.seed);
  }
  MockOracle oracle(sim_oracle_config(pop, l.sim.pipeline, o.seed));
  auto pc = sim_poll_config(pop, l.sim.pipeline, sim_poll_seed(o.seed));
  auto res = poll_users(pool, ProcessingLedger{}, quotas, oracle, client, pc);
  emit(o, "responses.jsonl", responses_to_jsonl(res.responses));
  emit(o, "audit.jsonl", audit_to_jsonl(res.audit));
  emit(o, "ledger.csv", res.ledger.to_csv());
  emit(o, "quota_report.csv", quota_report_csv(res.quotas));
  emit(o, "poll_stats.json", dump(res.stats.to_json()));
  return Ok;
}

std::string margin_draws_csv(const InferResult& inf, int a, int b) {
  std::vector<std::string> header{"draw"};
  std::vector<Eigen::MatrixXd> cols;
  for (std::size_t m = 0; m < 2 && m < inf.maps.size(); ++m) {
    for (const auto& label : inf.maps[m].labels) header.push_back(label);
    cols.push_back(margin_draws(inf.crosstabs[m], a, b));
  }
  std::string out = csv_line(header) + "\n";
  const Eigen::Index n = cols.empty() ? 0 : cols[0].rows();
  for (Eigen::Index r = 0; r < n; ++r) {
    std::vector<std::string> row{std::to_string(r)};
    for (const auto& c : cols)
      for (Eigen::Index f = 0; f < c.cols(); ++f) row.push_back(format_double(c(r, f)));
    out += csv_line(row) + "\n";
  }
  return out;
}

int cmd_infer(Options& o) {
  auto l = load_config(o);
  auto responses = responses_from_jsonl(read_input(o.responses, "responses"));
  auto ff = frame_from_csv(read_input(o.frame, "frame"));
  auto pop = sim_population(l.sim, o.seed);
  auto ic = sim_infer_config(pop, l.sim.pipeline, sim_sampler_seed(o.seed));
  auto inf = make_inference(responses, ff.frame, ic);
  MrpModel model(ic.model, build_training_data(ic.model, responses_to_observations(responses, ic)));
  emit(o, "draws.csv", draws_to_csv(model, inf.posterior));
  emit(o, "estimates.csv", estimates_to_csv(inf.estimates));
  emit(o, "margin_draws.csv",
       margin_draws_csv(inf, ic.model.choice_index(ic.margin_a), ic.model.choice_index(ic.margin_b)));
  emit(o, "diagnostics.json", dump(inf.posterior.diagnostics.to_json()));
  emit(o, "infer_stats.json", dump(inf.stats.to_json()));
  return converged_or(o, inf.posterior.diagnostics);
}

int cmd_eval(Options& o) {
  auto l = load_config(o);
  auto results = parse_csv(read_input(o.results, "results"));
  if (!results.has_column("area") || !results.has_column("margin"))
    throw ConfigProblem("results need area and margin columns");
  const bool has_prev = results.has_column("margin_prev");

  std::map<std::string, AreaEstimate> est;
  if (!o.draws.empty()) {
    auto t = parse_csv(read_input(o.draws, "draws"));
    for (std::size_t c = 1; c < t.header.size(); ++c) {
      std::vector<double> d;
      for (const auto& r : t.rows) d.push_back(std::stod(r[c]));
      est[t.header[c]] = AreaEstimate::from_draws(t.header[c], std::move(d));
    }
  } else {
    for (const auto& e : estimates_from_csv(read_input(o.estimates, "estimates"))) {
      if (e.quantity != "margin") continue;
      est[e.label] = AreaEstimate{e.label, e.q50, e.q05, e.q95, {}};
    }
  }

  std::vector<AreaEstimate> areas;
  std::vector<double> obs;
  std::map<std::string, double> truth;
  json rows = json::array(), national = nullptr;
  for (const auto& r : results.rows) {
    const auto& area = r[results.column("area")];
    auto it = est.find(area);
    if (it == est.end()) continue;
    const double margin = std::stod(r[results.column("margin")]);
    json row = {{"area", area},           {"observed", margin},      {"point", it->second.point},
                {"q05", it->second.lo},   {"q95", it->second.hi},    {"error", it->second.point - margin}};
    if (has_prev && !r[results.column("margin_prev")].empty()) {
      const double prev = std::stod(r[results.column("margin_prev")]);
      row["change_bias"] = change_bias(it->second.point, prev, margin);
      if (!it->second.draws.empty()) row["misdirection"] = misdirection_prob(it->second.draws, prev, margin);
    }
    if (!it->second.draws.empty()) row["p_value"] = posterior_pvalue(it->second.draws, margin);
    if (area == "national") {
      national = row;
      continue;
    }
    areas.push_back(it->second);
    obs.push_back(margin);
    truth[area] = margin;
    rows.push_back(row);
  }
  if (areas.empty()) throw ConfigProblem("no area appears in both the estimates and the results");

  json report = {{"national", national}, {"areas", rows}, {"metrics", evaluate_areas(areas, obs).to_json()}};
  if (!o.pollsters.empty()) {
    if (o.draws.empty()) throw ConfigProblem("pollster comparison needs margin draws");
    auto pollsters = pollsters_from_csv(read_input(o.pollsters, "pollsters"));
    std::map<std::string, AreaEstimate> shared;
    for (const auto& a : areas) shared[a.area] = a;
    CompareOptions co;
    co.seed = o.seed;
    auto cmp = compare_pollsters(shared, pollsters, truth, co);
    report["pollsters"] = comparisons_to_json(cmp);
    emit(o, "pollster_comparison.csv", comparisons_to_csv(cmp));
  }
  emit(o, "metrics.json", dump(report));
  return Ok;
}

int cmd_simulate(Options& o) {
  auto l = load_config(o);
  auto rep = run_end_to_end(l.sim, o.seed);
  emit(o, "report.json", dump(rep.json));
  emit(o, "estimates.csv", estimates_to_csv(rep.estimates));
  emit(o, "draws.csv", rep.draws_csv);
  const double rhat = rep.json["diagnostics"].value("max_rhat", 1.0);
  if (rhat > o.max_rhat) {
    std::cerr << "warning: max split R-hat " << format_double(rhat) << " exceeds " << format_double(o.max_rhat) << "\n";
    return NonConvergence;
  }
  return Ok;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Silicon-sample polling pipeline: pool, poll, infer, eval and simulate."};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "JSON run configuration");
    c->add_option("--seed", o.seed, "Run seed");
    c->add_option("--threads", o.threads, "Worker threads");
    c->add_option("--include-speculative", o.include_speculative, "Keep high-speculation responses (true/false)");
    c->add_option("--output", o.output, "Output directory");
  };
  auto* fixture = app.add_subcommand("fixture", "Write a synthetic platform fixture, frames and true results");
  auto* pool = app.add_subcommand("pool", "Collect the subject pool from a platform fixture");
  auto* poll = app.add_subcommand("poll", "Filter, quota and annotate the pool");
  auto* infer = app.add_subcommand("infer", "Fit the model and post-stratify");
  auto* eval = app.add_subcommand("eval", "Score estimates against results and pollsters");
  auto* simulate = app.add_subcommand("simulate", "Run the whole pipeline on a synthetic electorate");
  for (auto* c : {fixture, pool, poll, infer, eval, simulate}) common(c);
  pool->add_option("--fixture", o.fixture, "Platform fixture JSONL");
  poll->add_option("--pool", o.pool, "Pool JSONL");
  poll->add_option("--fixture", o.fixture, "Platform fixture JSONL for timelines");
  poll->add_option("--quota-frame", o.quota_frame, "Frame CSV with a quota column");
  infer->add_option("--responses", o.responses, "Responses JSONL");
  infer->add_option("--frame", o.frame, "Post-stratification frame CSV");
  eval->add_option("--estimates", o.estimates, "Estimates CSV");
  eval->add_option("--draws", o.draws, "Margin draws CSV");
  eval->add_option("--results", o.results, "Results CSV (area, margin, margin_prev)");
  eval->add_option("--pollsters", o.pollsters, "Pollster counts CSV");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? Ok : ConfigError;
  }
  try {
    if (*fixture) return cmd_fixture(o);
    if (*pool) return cmd_pool(o);
    if (*poll) return cmd_poll(o);
    if (*infer) return cmd_infer(o);
    if (*eval) return cmd_eval(o);
    return cmd_simulate(o);
  } catch (const ConfigProblem& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return ConfigError;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return StageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return StageError;
  }
}

}  // namespace possum::cli
