#include "possum/filters.hpp"

#include <cmath>

#include "possum/prompts.hpp"

namespace possum {

using nlohmann::json;

void ProcessingLedger::record(const std::string& user_id, Date date) {
  auto [it, inserted] = last_.try_emplace(user_id, date);
  if (!inserted && date > it->second) it->second = date;
}

std::optional<Date> ProcessingLedger::last_processed(const std::string& user_id) const {
  auto it = last_.find(user_id);
  if (it == last_.end()) return std::nullopt;
  return it->second;
}

std::string ProcessingLedger::to_csv() const {
  std::string out = "user_id,last_processed_date\n";
  for (const auto& [id, d] : last_) out += csv_escape(id) + "," + format_date(d) + "\n";
  return out;
}

ProcessingLedger ProcessingLedger::from_csv(std::string_view text) {
  ProcessingLedger ledger;
  if (trim(text).empty()) return ledger;
  auto table = parse_csv(text);
  auto id = table.column("user_id");
  auto date = table.column("last_processed_date");
  for (const auto& row : table.rows) ledger.record(row[id], parse_date(row[date]));
  return ledger;
}

SubjectPool temporal_filter(const SubjectPool& pool, const ProcessingLedger& ledger, int window_days) {
  if (window_days < 1) throw Error(Errc::InvalidArgument, "window_days must be positive");
  SubjectPool out;
  out.pool_date = pool.pool_date;
  out.plan = pool.plan;
  for (const auto& e : pool.entries) {
    auto last = ledger.last_processed(e.user.user_id);
    if (last && (pool.pool_date - *last).count() <= window_days) continue;
    out.entries.push_back(e);
  }
  return out;
}

SubjectPool null_geography_filter(const SubjectPool& pool) {
  SubjectPool out;
  out.pool_date = pool.pool_date;
  out.plan = pool.plan;
  for (const auto& e : pool.entries)
    if (e.user.location_raw && !trim(*e.user.location_raw).empty()) out.entries.push_back(e);
  return out;
}

std::string entity_prompt(const Mould& mould) { return "USER DATA\n" + render_mould(mould) + "\n" + kEntityPrompt; }

std::string geographic_prompt(const Mould& mould) { return "USER DATA\n" + render_mould(mould) + "\n" + kGeoPrompt; }

EntityKind parse_entity_reply(std::string_view reply) {
  auto r = trim(reply);
  if (r.size() >= 2 && r.front() == '"' && r.back() == '"') r = trim(r.substr(1, r.size() - 2));
  if (r == "P") return EntityKind::Person;
  if (r == "O") return EntityKind::Other;
  throw Error(Errc::UnparseableReply, "entity reply '" + std::string(reply) + "'");
}

EntityKind entity_filter(const Mould& mould, AnnotatorBackend& annotator) {
  return parse_entity_reply(annotator.complete(entity_prompt(mould)));
}

const std::vector<std::string>& us_state_names() {
  static const std::vector<std::string> names = {
      "Alabama", "Alaska", "Arizona", "Arkansas", "California", "Colorado", "Connecticut", "Delaware",
      "District of Columbia", "Florida", "Georgia", "Hawaii", "Idaho", "Illinois", "Indiana", "Iowa", "Kansas",
      "Kentucky", "Louisiana", "Maine", "Maryland", "Massachusetts", "Michigan", "Minnesota", "Mississippi",
      "Missouri", "Montana", "Nebraska", "Nevada", "New Hampshire", "New Jersey", "New Mexico", "New York",
      "North Carolina", "North Dakota", "Ohio", "Oklahoma", "Oregon", "Pennsylvania", "Rhode Island",
      "South Carolina", "South Dakota", "Tennessee", "Texas", "Utah", "Vermont", "Virginia", "Washington",
      "West Virginia", "Wisconsin", "Wyoming"};
  return names;
}

std::optional<std::string> canonical_state(std::string_view name) {
  auto key = normalize(name);
  while (!key.empty() && (key.back() == '.' || key.back() == '"')) key.pop_back();
  while (!key.empty() && key.front() == '"') key.erase(key.begin());
  for (const auto& s : us_state_names())
    if (to_lower(s) == key) return s;
  return std::nullopt;
}

GeoResult parse_geo_reply(std::string_view reply) {
  auto r = trim(reply);
  if (r.size() >= 2 && r.front() == '"' && r.back() == '"') r = trim(r.substr(1, r.size() - 2));
  auto key = normalize(r);
  while (!key.empty() && key.back() == '.') key.pop_back();
  if (key == "not from a state in the usa") return {false, std::nullopt};
  if (key == "usa") return {true, "USA"};
  if (auto state = canonical_state(key)) return {true, *state};
  throw Error(Errc::UnparseableReply, "geographic reply '" + std::string(reply) + "'");
}

GeoResult geographic_filter(const Mould& mould, AnnotatorBackend& annotator) {
  return parse_geo_reply(annotator.complete(geographic_prompt(mould)));
}

QuotaDecision quota_filter(const AttributeMap& attrs, QuotaState& quotas) {
  auto cell = lookup_cell(quotas.frame(), attrs);
  if (!cell) return {QuotaOutcome::NoCell, 0};
  if (quotas.try_acquire(*cell)) return {QuotaOutcome::Accepted, *cell};
  return {QuotaOutcome::Rejected, *cell};
}

int timeline_depth(const CaptureKind& kind, int m_politics, double lambda) {
  if (m_politics < 1) throw Error(Errc::InvalidArgument, "m_politics must be positive");
  if (!(lambda > 1.0)) throw Error(Errc::InvalidArgument, "lambda must exceed 1");
  if (kind.is_political()) return m_politics;
  return static_cast<int>(std::lround(lambda * m_politics));
}

Mould augment_mould(const Mould& mould, PlatformClient& client, int depth) {
  if (mould.augmented) throw Error(Errc::AlreadyAugmented, mould.user.user_id);
  auto timeline = client.user_timeline(mould.user.user_id, depth);
  std::vector<TweetRecord> tweets = mould.tweets;
  tweets.insert(tweets.end(), timeline.begin(), timeline.end());
  auto out = assemble_mould(mould.user, std::move(tweets));
  out.augmented = true;
  return out;
}

std::string audit_to_jsonl(const std::vector<AuditRecord>& records) {
  std::string out;
  for (const auto& r : records)
    out += json{{"user_id", r.user_id}, {"stage", r.stage}, {"decision", r.decision}, {"reason", r.reason}}.dump() +
           "\n";
  return out;
}

std::vector<AuditRecord> audit_from_jsonl(std::string_view text) {
  std::vector<AuditRecord> out;
  for (const auto& line : split(text, '\n')) {
    if (trim(line).empty()) continue;
    auto j = json::parse(line);
    out.push_back({j.at("user_id"), j.at("stage"), j.at("decision"), j.value("reason", "")});
  }
  return out;
}

}  // namespace possum
