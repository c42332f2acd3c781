#include "possum/annotator.hpp"

#include <cmath>
#include <cstdlib>
#include <regex>
#include <thread>

#include <httplib.h>

#include "possum/prompts.hpp"

namespace possum {

using nlohmann::json;

std::string_view to_string(AnnotatorErrorKind kind) {
  switch (kind) {
    case AnnotatorErrorKind::RateLimited: return "RateLimited";
    case AnnotatorErrorKind::Refused: return "Refused";
    case AnnotatorErrorKind::Transport: return "Transport";
  }
  return "Unknown";
}

// --- config ----------------------------------------------------------------

void OracleConfig::validate() const {
  if (!(rejection_rate >= 0.0 && rejection_rate <= 1.0))
    throw Error(Errc::InvalidArgument, "rejection_rate outside [0,1]");
  for (const auto& [title, rows] : confusion) {
    for (const auto& [truth, row] : rows) {
      double total = 0.0;
      for (const auto& [reported, p] : row) {
        if (!(p >= 0.0)) throw Error(Errc::InvalidArgument, "negative confusion entry for " + title);
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-9)
        throw Error(Errc::InvalidArgument, "confusion row " + title + "/" + truth + " sums to " + format_double(total));
    }
  }
  for (const auto& [title, s] : speculation)
    if (!(s.spread >= 0.0)) throw Error(Errc::InvalidArgument, "negative speculation spread for " + title);
}

OracleConfig OracleConfig::from_json(const json& j) {
  OracleConfig cfg;
  cfg.seed = j.value("seed", std::uint64_t{0});
  cfg.rejection_rate = j.value("rejection_rate", 0.0);
  if (auto it = j.find("confusion"); it != j.end()) {
    for (const auto& [title, rows] : it->items()) {
      for (const auto& [truth, row] : rows.items()) {
        if (row.is_array()) {
          for (const auto& pair : row)
            cfg.confusion[title][truth].emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<double>());
        } else {
          // object rows are read in key order
          for (const auto& [reported, p] : row.items())
            cfg.confusion[title][truth].emplace_back(reported, p.get<double>());
        }
      }
    }
  }
  if (auto it = j.find("speculation"); it != j.end())
    for (const auto& [title, s] : it->items()) cfg.speculation[title] = {s.value("mean", 0.0), s.value("spread", 0.0)};
  if (auto it = j.find("candidates"); it != j.end())
    for (const auto& [state, parties] : it->items())
      for (const auto& [party, name] : parties.items()) cfg.candidates[state][party] = name.get<std::string>();
  cfg.validate();
  return cfg;
}

json OracleConfig::to_json() const {
  json j = {{"seed", seed}, {"rejection_rate", rejection_rate}};
  json conf = json::object();
  for (const auto& [title, rows] : confusion)
    for (const auto& [truth, row] : rows)
      for (const auto& [reported, p] : row) conf[title][truth].push_back({reported, p});
  j["confusion"] = conf;
  json spec = json::object();
  for (const auto& [title, s] : speculation) spec[title] = {{"mean", s.mean}, {"spread", s.spread}};
  j["speculation"] = spec;
  j["candidates"] = candidates;
  return j;
}

// --- oracle ----------------------------------------------------------------

AttributeMap read_truth_tokens(std::string_view text) {
  static const std::regex token(R"(\[([A-Za-z0-9_ ]+)=([^\]\n]*)\])");
  AttributeMap out;
  std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), token); it != std::sregex_iterator(); ++it)
    out.emplace((*it)[1].str(), (*it)[2].str());
  return out;
}

std::string truth_token(const std::string& key, const std::string& value) { return "[" + key + "=" + value + "]"; }

std::string oracle_annotate(const AttributeMap& truth, const std::vector<FeatureDef>& defs, const OracleConfig& cfg,
                            std::string_view salt) {
  std::string out;
  for (const auto& def : defs) {
    auto t = truth.find(def.title());
    if (t == truth.end()) throw Error(Errc::MissingTruth, "no truth for " + def.title());
    std::string reported = t->second;
    auto rng = make_rng(cfg.seed, {salt, def.title(), "category"});
    if (auto rows = cfg.confusion.find(def.title()); rows != cfg.confusion.end()) {
      if (auto row = rows->second.find(t->second); row != rows->second.end() && !row->second.empty()) {
        double u = uniform01(rng), acc = 0.0;
        reported = row->second.back().first;
        for (const auto& [cat, p] : row->second) {
          acc += p;
          if (u < acc) {
            reported = cat;
            break;
          }
        }
      }
    }
    const auto* option = option_extending(def, reported);
    if (!option) throw Error(Errc::MissingTruth, "'" + reported + "' is not offered by " + def.title());

    int speculation = 0;
    if (auto s = cfg.speculation.find(def.title()); s != cfg.speculation.end()) {
      double x = s->second.mean;
      if (s->second.spread > 0) {
        auto srng = make_rng(cfg.seed, {salt, def.title(), "speculation"});
        x = std::normal_distribution<double>(s->second.mean, s->second.spread)(srng);
      }
      speculation = static_cast<int>(std::lround(std::clamp(x, 0.0, 100.0)));
    }
    out += render_answer({def.title(), option->symbol, option->category,
                          "The profile states this directly.", speculation});
    out += "\n";
  }
  return out;
}

MockOracle::MockOracle(OracleConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

std::size_t MockOracle::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

std::string MockOracle::complete(const std::string& prompt) {
  if (prompt.empty()) throw Error(Errc::InvalidArgument, "empty prompt");
  {
    std::lock_guard lock(mutex_);
    ++calls_;
  }
  const auto salt = std::to_string(fnv1a(prompt));
  if (cfg_.rejection_rate > 0) {
    auto rng = make_rng(cfg_.seed, {salt, "refusal"});
    if (uniform01(rng) < cfg_.rejection_rate) throw AnnotatorFailure(AnnotatorErrorKind::Refused, "oracle declined");
  }
  auto truth = read_truth_tokens(prompt);
  if (prompt.find(kEntityPrompt) != std::string::npos) {
    auto it = truth.find("ENTITY");
    return it == truth.end() ? "P" : it->second;
  }
  if (prompt.find(kGeoPrompt) != std::string::npos) {
    auto it = truth.find("STATE");
    if (it == truth.end() || it->second.empty() || normalize(it->second) == "foreign")
      return "Not from a state in the USA";
    return it->second;
  }
  if (prompt.find(kBuilderMarker) != std::string::npos) return answer_builder(prompt);
  auto intro = prompt.rfind(kFeatureListIntro);
  if (intro == std::string::npos) throw AnnotatorFailure(AnnotatorErrorKind::Refused, "unrecognised prompt");
  auto defs = parse_feature_listing(std::string_view(prompt).substr(intro + kFeatureListIntro.size()));
  return oracle_annotate(truth, defs, cfg_, salt);
}

std::string MockOracle::answer_builder(const std::string& prompt) const {
  static const std::regex candidate(R"(<INSERT_([A-Z]+)_CANDIDATE_NAME_HERE>)");
  static const std::regex option(R"(^(\s*)([^)\s]*)\)(.*)$)");
  auto state = background_state(prompt);
  auto tmpl_start = prompt.find(kBuilderMarker);
  auto body_start = prompt.find("\n\n", prompt.find("Do not produce any other text", tmpl_start));
  std::string tmpl = body_start == std::string::npos ? "" : prompt.substr(body_start + 2);

  const std::map<std::string, std::string>* known = nullptr;
  if (state)
    if (auto it = cfg_.candidates.find(*state); it != cfg_.candidates.end()) known = &it->second;

  std::string out;
  int counter = 0;
  for (auto line : split(tmpl, '\n')) {
    std::smatch m;
    if (!std::regex_match(line, m, option)) {
      if (!trim(line).empty()) counter = 0;
      out += line + "\n";
      continue;
    }
    std::string rest = m[3].str();
    bool drop = false;
    std::smatch cm;
    while (std::regex_search(rest, cm, candidate)) {
      auto party = to_lower(cm[1].str());
      std::string name = "the " + party + " nominee";
      if (known) {
        auto it = known->find(party);
        if (it == known->end()) {
          drop = true;
          break;
        }
        name = it->second;
      }
      rest = cm.prefix().str() + name + cm.suffix().str();
    }
    if (drop) continue;
    if (state) replace_all(rest, "<INSERT_STATE_NAME_HERE>", *state);
    std::string symbol = m[2].str();
    replace_all(symbol, "<INSERT_OPTION_NUMBER_HERE>", "");
    while (!symbol.empty() && std::isdigit(static_cast<unsigned char>(symbol.back()))) symbol.pop_back();
    out += m[1].str() + symbol + std::to_string(++counter) + ")" + rest + "\n";
  }
  return out;
}

// --- retries ---------------------------------------------------------------

std::string retrying_complete(AnnotatorBackend& backend, const std::string& prompt, const RetryPolicy& policy,
                              const Sleeper& sleep) {
  if (policy.max_attempts < 1) throw Error(Errc::InvalidArgument, "max_attempts must be at least 1");
  auto delay = policy.backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      return backend.complete(prompt);
    } catch (const AnnotatorFailure& e) {
      if (e.kind() == AnnotatorErrorKind::Refused) throw;
      if (attempt >= policy.max_attempts)
        throw Error(Errc::Exhausted, std::to_string(attempt) + " attempts, last: " + e.what());
    }
    if (sleep) sleep(delay);
    else std::this_thread::sleep_for(delay);
    delay *= 2;
  }
}

// --- live adapter ----------------------------------------------------------

namespace {

std::string env_or(const char* name, const std::string& fallback = {}) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : fallback;
}

}  // namespace

LiveAdapter::LiveAdapter(std::string base_url, std::string model, std::string api_key,
                         std::optional<double> temperature)
    : base_url_(std::move(base_url)), model_(std::move(model)), api_key_(std::move(api_key)),
      temperature_(temperature) {
  if (base_url_.rfind("http://", 0) != 0)
    throw Error(Errc::InvalidArgument, "live adapter supports http:// endpoints only: " + base_url_);
  if (model_.empty()) throw Error(Errc::InvalidArgument, "live adapter needs a model id");
}

LiveAdapter LiveAdapter::from_env() {
  auto key_var = env_or("POSSUM_LLM_API_KEY_VAR", "OPENAI_API_KEY");
  std::optional<double> temperature;
  if (auto t = env_or("POSSUM_LLM_TEMPERATURE"); !t.empty()) temperature = std::stod(t);
  return LiveAdapter(env_or("POSSUM_LLM_BASE_URL"), env_or("POSSUM_LLM_MODEL"), env_or(key_var.c_str()), temperature);
}

std::string LiveAdapter::temperature() const {
  return temperature_ ? format_double(*temperature_) : "server default";
}

std::string LiveAdapter::complete(const std::string& prompt) {
  if (prompt.empty()) throw Error(Errc::InvalidArgument, "empty prompt");
  auto after_scheme = base_url_.find('/', 7);
  std::string host = base_url_.substr(0, after_scheme);
  std::string prefix = after_scheme == std::string::npos ? "" : base_url_.substr(after_scheme);
  if (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

  json body = {{"model", model_}, {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
  if (temperature_) body["temperature"] = *temperature_;
  httplib::Client client(host);
  client.set_read_timeout(120);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto res = client.Post(prefix + "/v1/chat/completions", headers, body.dump(), "application/json");
  if (!res) throw AnnotatorFailure(AnnotatorErrorKind::Transport, httplib::to_string(res.error()));
  if (res->status == 429) throw AnnotatorFailure(AnnotatorErrorKind::RateLimited, res->body);
  if (res->status >= 400)
    throw AnnotatorFailure(AnnotatorErrorKind::Transport, "HTTP " + std::to_string(res->status) + ": " + res->body);
  auto reply = json::parse(res->body, nullptr, false);
  if (reply.is_discarded()) throw AnnotatorFailure(AnnotatorErrorKind::Transport, "malformed response body");
  const auto& message = reply["choices"][0]["message"];
  if (message.contains("refusal") && !message["refusal"].is_null())
    throw AnnotatorFailure(AnnotatorErrorKind::Refused, message["refusal"].get<std::string>());
  if (!message.contains("content") || !message["content"].is_string())
    throw AnnotatorFailure(AnnotatorErrorKind::Refused, "empty completion");
  return message["content"].get<std::string>();
}

}  // namespace possum
