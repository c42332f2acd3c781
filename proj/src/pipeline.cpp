#include "possum/pipeline.hpp"

#include <exception>
#include <mutex>
#include <thread>

#include "possum/error.hpp"

namespace possum {

using nlohmann::json;

json PollStats::to_json() const {
  return {{"pooled", pooled},
          {"after_temporal", after_temporal},
          {"after_null_geography", after_null_geography},
          {"persons", persons},
          {"in_usa", in_usa},
          {"stateless", stateless},
          {"accepted", accepted},
          {"quota_rejected", quota_rejected},
          {"no_cell", no_cell},
          {"refused", refused},
          {"failed", failed}};
}

json InferStats::to_json() const {
  return {{"responses", responses},
          {"speculative_dropped", speculative_dropped},
          {"outcome_dropped", outcome_dropped},
          {"training", training},
          {"stateless", stateless}};
}

namespace {

template <class F>
void parallel_for(int n, int threads, F&& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Failures that drop a single user rather than abort the poll.
enum class Drop { None, Refused, Failed };

struct UserTrace {
  std::vector<AuditRecord> audit;
  Drop drop = Drop::None;
  bool dropped = false;
  Mould mould;
  GeoResult geo;
  AttributeMap attrs;
  SiliconResponse response;
};

class Annotate {
 public:
  Annotate(AnnotatorBackend& backend, const RetryPolicy& policy) : backend_(backend), policy_(policy) {}
  std::string operator()(const std::string& prompt) const {
    return retrying_complete(backend_, prompt, policy_, [](std::chrono::milliseconds d) {
      if (d.count() > 0) std::this_thread::sleep_for(d);
    });
  }

 private:
  AnnotatorBackend& backend_;
  RetryPolicy policy_;
};

// Runs `step`, converting per-user failures into an audit entry and a drop.
template <class F>
bool guarded(UserTrace& t, const std::string& stage, F&& step) {
  try {
    step();
    return true;
  } catch (const AnnotatorFailure& e) {
    t.drop = e.kind() == AnnotatorErrorKind::Refused ? Drop::Refused : Drop::Failed;
    t.audit.push_back({t.mould.user.user_id, stage, t.drop == Drop::Refused ? "refused" : "failed", e.what()});
  } catch (const Error& e) {
    switch (e.code()) {
      case Errc::Exhausted: case Errc::UnparseableReply: case Errc::ParseError: case Errc::MissingTitle:
      case Errc::DuplicateTitle: case Errc::UnknownSymbol: case Errc::PlaceholderLeak: case Errc::NotFound:
      case Errc::RateLimited: case Errc::ClientError:
        t.drop = Drop::Failed;
        t.audit.push_back({t.mould.user.user_id, stage, "failed", e.what()});
        break;
      default: throw;
    }
  }
  t.dropped = true;
  return false;
}

std::uint64_t user_seed(const PollConfig& cfg, const std::string& user_id) {
  return mix_seed(cfg.seed, fnv1a(user_id));
}

}  // namespace

PollResult poll_users(const SubjectPool& pool, const ProcessingLedger& ledger, const QuotaState& quotas,
                      AnnotatorBackend& annotator, PlatformClient& client, const PollConfig& cfg) {
  PollResult res;
  res.ledger = ledger;
  res.quotas = quotas;
  auto& st = res.stats;
  st.pooled = static_cast<int>(pool.entries.size());
  const Annotate ask(annotator, cfg.retry);

  auto after_t = temporal_filter(pool, ledger, cfg.window_days);
  {
    std::set<std::string> kept;
    for (const auto& e : after_t.entries) kept.insert(e.user.user_id);
    for (const auto& e : pool.entries) {
      bool ok = kept.count(e.user.user_id) > 0;
      std::string reason;
      if (!ok) reason = "processed on " + format_date(*ledger.last_processed(e.user.user_id));
      res.audit.push_back({e.user.user_id, "temporal", ok ? "pass" : "drop", reason});
    }
  }
  st.after_temporal = static_cast<int>(after_t.entries.size());
  for (const auto& e : after_t.entries) res.ledger.record(e.user.user_id, pool.pool_date);

  auto after_g = null_geography_filter(after_t);
  {
    std::set<std::string> kept;
    for (const auto& e : after_g.entries) kept.insert(e.user.user_id);
    for (const auto& e : after_t.entries) {
      bool ok = kept.count(e.user.user_id) > 0;
      res.audit.push_back({e.user.user_id, "null_geography", ok ? "pass" : "drop", ok ? "" : "no location"});
    }
  }
  st.after_null_geography = static_cast<int>(after_g.entries.size());

  // stage A: entity, geography and the quota extraction, independent per user
  const int n = static_cast<int>(after_g.entries.size());
  std::vector<UserTrace> traces(n);
  parallel_for(n, cfg.threads, [&](int i) {
    auto& t = traces[i];
    const auto& entry = after_g.entries[i];
    t.mould = assemble_mould(entry.user, entry.tweets);
    const auto& id = entry.user.user_id;
    EntityKind kind = EntityKind::Other;
    if (!guarded(t, "entity", [&] { kind = parse_entity_reply(ask(entity_prompt(t.mould))); })) return;
    if (kind != EntityKind::Person) {
      t.audit.push_back({id, "entity", "drop", "not a person"});
      t.dropped = true;
      return;
    }
    t.audit.push_back({id, "entity", "pass", ""});
    if (!guarded(t, "geographic", [&] { t.geo = parse_geo_reply(ask(geographic_prompt(t.mould))); })) return;
    if (!t.geo.level1_member) {
      t.audit.push_back({id, "geographic", "drop", "outside the USA"});
      t.dropped = true;
      return;
    }
    t.audit.push_back({id, "geographic", "pass", t.geo.stateless() ? "stateless" : *t.geo.level2});
    if (t.geo.stateless()) return;
    PromptOptions opts = cfg.prompt;
    opts.seed = user_seed(cfg, id);
    guarded(t, "quota", [&] {
      auto parsed = parse_annotation(ask(build_prompt("", t.mould, cfg.quota_features, opts)), cfg.quota_features);
      for (const auto& [frame_title, feature_title] : cfg.quota_map) {
        const auto* v = parsed.find(feature_title);
        if (!v) throw Error(Errc::MissingTitle, feature_title);
        t.attrs[frame_title] = v->category;
      }
      t.attrs[cfg.area_title] = *t.geo.level2;
    });
  });

  // stage B: quota decisions in pool order
  std::vector<int> accepted;
  for (int i = 0; i < n; ++i) {
    auto& t = traces[i];
    if (t.dropped) continue;
    const auto& id = t.mould.user.user_id;
    if (t.geo.stateless()) {
      if (!cfg.keep_stateless) {
        t.audit.push_back({id, "quota", "drop", "stateless"});
        continue;
      }
      t.audit.push_back({id, "quota", "pass", "stateless, outside the quota"});
      accepted.push_back(i);
      continue;
    }
    auto d = quota_filter(t.attrs, res.quotas);
    switch (d.outcome) {
      case QuotaOutcome::Accepted:
        t.audit.push_back({id, "quota", "pass", "cell " + std::to_string(d.cell_id)});
        accepted.push_back(i);
        break;
      case QuotaOutcome::Rejected:
        ++st.quota_rejected;
        t.audit.push_back({id, "quota", "drop", "cell " + std::to_string(d.cell_id) + " full"});
        break;
      case QuotaOutcome::NoCell:
        ++st.no_cell;
        t.audit.push_back({id, "quota", "drop", "no matching cell"});
        break;
    }
  }
  // stage C: augmentation and the full extraction
  std::mutex cache_mutex;
  std::map<std::pair<std::string, std::string>, std::optional<FeatureDef>> state_sets;
  auto state_set = [&](const VoteFeature& v, const std::string& state) -> std::optional<FeatureDef> {
    auto bg = cfg.backgrounds.find(state);
    if (v.state_template.empty() || bg == cfg.backgrounds.end()) return std::nullopt;
    auto key = std::make_pair(v.base.title(), state);
    {
      std::lock_guard lock(cache_mutex);
      if (auto it = state_sets.find(key); it != state_sets.end()) return it->second;
    }
    auto defs = build_features_via_builder(render_background(state, bg->second), v.state_template, annotator);
    std::optional<FeatureDef> def;
    for (auto& d : defs)
      if (d.title() == v.base.title()) def = FeatureDef(d.title(), d.options(), v.base.kind());
    if (!def) throw Error(Errc::ParseError, "builder reply lacks " + v.base.title());
    std::lock_guard lock(cache_mutex);
    return state_sets.emplace(key, def).first->second;
  };
  // build the state-conditioned sets in a fixed order so the builder calls are reproducible
  if (cfg.ensemble)
    for (int i : accepted)
      if (!traces[i].geo.stateless())
        for (const auto& v : cfg.votes) {
          UserTrace probe;
          probe.mould.user.user_id = traces[i].mould.user.user_id;
          if (!guarded(probe, "extraction", [&] { state_set(v, *traces[i].geo.level2); })) {
            std::lock_guard lock(cache_mutex);
            state_sets[{v.base.title(), *traces[i].geo.level2}] = std::nullopt;
          }
        }

  std::vector<char> done(n, 0);
  parallel_for(static_cast<int>(accepted.size()), cfg.threads, [&](int a) {
    auto& t = traces[accepted[a]];
    const auto& id = t.mould.user.user_id;
    int depth = 0;
    if (!guarded(t, "augment", [&] {
          depth = timeline_depth(t.mould.user.capture_query_kind, cfg.m_politics, cfg.lambda);
          t.mould = augment_mould(t.mould, client, depth);
        }))
      return;
    t.audit.push_back({id, "augment", "pass", "depth " + std::to_string(depth)});
    PromptOptions opts = cfg.prompt;
    opts.seed = user_seed(cfg, id);
    const std::string state = t.geo.stateless() ? "" : *t.geo.level2;
    std::vector<FeatureDef> joint = cfg.features;
    for (const auto& v : cfg.votes) joint.push_back(v.base);
    ParsedAnnotation parsed;
    if (!guarded(t, "extraction", [&] { parsed = parse_annotation(ask(build_prompt("", t.mould, joint, opts)), joint); }))
      return;

    auto& r = t.response;
    r.user_id = id;
    r.poll_id = cfg.poll_id;
    r.fieldwork_date = cfg.fieldwork_date;
    if (!t.geo.stateless()) r.area = state;
    for (const auto& f : cfg.features) r.values[f.title()] = *parsed.find(f.title());

    bool ok = guarded(t, "extraction", [&] {
      for (const auto& v : cfg.votes) {
        const auto& title = v.base.title();
        const FeatureValue joint_value = *parsed.find(title);
        if (!cfg.ensemble) {
          r.values[title] = joint_value;
          continue;
        }
        std::vector<std::pair<PromptStrategy, FeatureValue>> answers;
        answers.emplace_back(PromptStrategy::JointSociodemographic, joint_value);
        auto one = [&](PromptStrategy s, const FeatureDef& def, const std::optional<FeatureDef>& sv,
                       const std::string& bg) {
          auto reply = ask(strategy_prompt(s, t.mould, v.base, cfg.features, sv, bg, opts));
          answers.emplace_back(s, parse_annotation(reply, {sv ? *sv : def}).entries.front());
        };
        one(PromptStrategy::MinimallyInformative, v.base, std::nullopt, "");
        std::optional<FeatureDef> sv;
        if (!state.empty()) {
          std::lock_guard lock(cache_mutex);
          if (auto it = state_sets.find({title, state}); it != state_sets.end()) sv = it->second;
        }
        if (sv) {
          one(PromptStrategy::ModeratelyInformative, v.base, sv, "");
          one(PromptStrategy::HighlyInformative, v.base, sv,
              render_background(state, cfg.backgrounds.at(state)));
        }
        std::vector<std::string> votes;
        std::vector<const FeatureOption*> canon;
        for (const auto& [s, val] : answers) {
          r.strategy_votes[title + "|" + std::string(to_string(s))] = val;
          auto idx = v.base.match_category(val.category);
          if (!idx) throw Error(Errc::UnknownSymbol, "'" + val.category + "' has no base category in " + title);
          canon.push_back(&v.base.options()[*idx]);
          votes.push_back(canon.back()->category);
        }
        const auto winner = majority_vote(votes, mix_seed(user_seed(cfg, id), fnv1a(title)));
        for (std::size_t k = 0; k < answers.size(); ++k)
          if (canon[k]->category == winner) {
            FeatureValue fv = answers[k].second;
            fv.title = title;
            fv.symbol = canon[k]->symbol;
            fv.category = canon[k]->category;
            r.values[title] = fv;
            break;
          }
      }
    });
    if (!ok) return;
    for (auto& [title, fv] : r.values)
      if (fv.explanation.size() > 2000) fv.explanation.resize(2000);
    t.audit.push_back({id, "extraction", "pass", ""});
    done[accepted[a]] = 1;
  });

  for (int i = 0; i < n; ++i) {
    auto& t = traces[i];
    for (const auto& a : t.audit) {
      if (a.decision != "pass") continue;
      if (a.stage == "entity") ++st.persons;
      if (a.stage == "geographic") {
        ++st.in_usa;
        if (a.reason == "stateless") ++st.stateless;
      }
    }
    if (t.drop == Drop::Refused) ++st.refused;
    if (t.drop == Drop::Failed) ++st.failed;
    res.audit.insert(res.audit.end(), t.audit.begin(), t.audit.end());
    if (done[i]) {
      res.responses.push_back(std::move(t.response));
      ++st.accepted;
    }
  }
  return res;
}

std::string quota_report_csv(const QuotaState& quotas) {
  std::vector<std::string> header = quotas.frame().attribute_schema;
  header.insert(header.begin(), "cell_id");
  header.push_back("quota");
  header.push_back("filled");
  std::string out = csv_line(header);
  for (const auto& cell : quotas.frame().cells) {
    std::vector<std::string> row{std::to_string(cell.cell_id)};
    for (const auto& t : quotas.frame().attribute_schema) row.push_back(cell.attributes.at(t));
    row.push_back(std::to_string(quotas.quota_of(cell.cell_id)));
    row.push_back(std::to_string(quotas.counter_of(cell.cell_id)));
    out += csv_line(row);
  }
  return out;
}

std::vector<Observation> responses_to_observations(const std::vector<SiliconResponse>& responses,
                                                   const InferConfig& cfg, InferStats* stats) {
  InferStats local;
  auto& st = stats ? *stats : local;
  st = {};
  st.responses = static_cast<int>(responses.size());
  std::vector<std::string> model_titles;
  for (const auto& e : cfg.model.effects) model_titles.push_back(e.title);
  if (cfg.model.interaction) model_titles.push_back(cfg.model.interaction->title);
  auto feature_of = [&](const std::string& t) {
    auto it = cfg.title_map.find(t);
    return it == cfg.title_map.end() ? t : it->second;
  };
  std::map<std::string, std::string> outcome;
  for (const auto& [cat, choice] : cfg.outcome_map) outcome[normalize(cat)] = choice;

  std::set<Date> dates;
  for (const auto& r : responses) dates.insert(r.fieldwork_date);

  std::vector<Observation> out;
  for (const auto& r : responses) {
    if (!cfg.include_speculative && is_highly_speculative(r, cfg.relevant_titles, cfg.speculation_threshold)) {
      ++st.speculative_dropped;
      continue;
    }
    auto v = r.values.find(cfg.outcome_title);
    if (v == r.values.end()) throw Error(Errc::MissingTitle, cfg.outcome_title + " missing for " + r.user_id);
    auto choice = outcome.find(normalize(v->second.category));
    if (choice == outcome.end()) {
      ++st.outcome_dropped;
      continue;
    }
    Observation o;
    o.choice = choice->second;
    o.area = r.area;
    for (const auto& t : model_titles) {
      auto f = r.values.find(feature_of(t));
      if (f == r.values.end()) throw Error(Errc::MissingTitle, feature_of(t) + " missing for " + r.user_id);
      o.attrs[t] = f->second.category;
    }
    o.poll = static_cast<int>(std::distance(dates.begin(), dates.find(r.fieldwork_date)));
    if (!r.area) ++st.stateless;
    out.push_back(std::move(o));
  }
  st.training = static_cast<int>(out.size());
  return out;
}

InferResult make_inference(const std::vector<SiliconResponse>& responses, const StratFrame& frame,
                           const InferConfig& cfg) {
  InferResult res;
  auto obs = responses_to_observations(responses, cfg, &res.stats);
  if (obs.empty()) throw Error(Errc::InvalidArgument, "no responses left for the model");
  ModelSpec spec = cfg.model;
  if (spec.include_poll_walk) {
    int max_poll = 0;
    for (const auto& o : obs) max_poll = std::max(max_poll, o.poll);
    spec.n_polls = max_poll + 1;
  }
  MrpModel model(spec, build_training_data(spec, obs));
  res.posterior = sample(model, cfg.sampler);

  res.maps.push_back(national_map(frame));
  res.maps.push_back(crosstab_by(frame, spec.area_title));
  for (const auto& t : cfg.crosstab_titles) res.maps.push_back(crosstab_by(frame, t));
  res.crosstabs = poststratify_draws(res.posterior.draws, spec, frame, res.maps);
  const int a = spec.choice_index(cfg.margin_a), b = spec.choice_index(cfg.margin_b);
  for (std::size_t m = 0; m < res.maps.size(); ++m) {
    auto est = summarize(res.maps[m], res.crosstabs[m], spec, a, b);
    res.estimates.insert(res.estimates.end(), est.begin(), est.end());
  }
  return res;
}

}  // namespace possum
