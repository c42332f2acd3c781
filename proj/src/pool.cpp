#include "possum/pool.hpp"

#include <algorithm>
#include <set>

namespace possum {

using nlohmann::json;

std::size_t SubjectPool::tweet_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.tweets.size();
  return n;
}

QueryPlan build_query_plan(const std::string& political_terms, const std::vector<std::string>& trending_topics,
                           int omega) {
  if (trending_topics.empty()) throw Error(Errc::EmptyTopics, "no trending topics supplied");
  if (trim(political_terms).empty()) throw Error(Errc::InvalidArgument, "political query text is empty");
  if (omega < 1) throw Error(Errc::InvalidArgument, "omega must be positive");
  const int L = static_cast<int>(trending_topics.size());
  const int per_topic = omega / L;
  if (per_topic == 0)
    throw Error(Errc::WeightTooSmall, "floor(" + std::to_string(omega) + "/" + std::to_string(L) + ") = 0");
  QueryPlan plan;
  plan.queries.push_back({political_terms, omega, CaptureKind::political()});
  for (const auto& topic : trending_topics) {
    if (trim(topic).empty()) throw Error(Errc::InvalidArgument, "empty trending topic");
    plan.queries.push_back({topic, per_topic, CaptureKind::trending(topic)});
  }
  return plan;
}

SubjectPool run_pool(const QueryPlan& plan, PlatformClient& client, Date pool_date) {
  SubjectPool pool;
  pool.pool_date = pool_date;
  pool.plan = plan;
  std::map<std::string, std::size_t> index;
  std::vector<std::set<std::string>> seen_tweets;

  for (std::size_t k = 0; k < plan.queries.size(); ++k) {
    const auto& query = plan.queries[k];
    std::vector<std::pair<UserRecord, TweetRecord>> hits;
    try {
      hits = client.search_recent(query);
    } catch (const Error& e) {
      throw PoolError(k + 1, e.code(), e.what(), pool);
    }
    if (hits.size() > static_cast<std::size_t>(query.weight)) hits.resize(query.weight);
    for (auto& [user, tweet] : hits) {
      auto [it, inserted] = index.try_emplace(user.user_id, pool.entries.size());
      if (inserted) {
        UserRecord u = user;
        u.capture_query_kind = query.kind;
        pool.entries.push_back({std::move(u), {}});
        seen_tweets.emplace_back();
      }
      auto& entry = pool.entries[it->second];
      if (seen_tweets[it->second].insert(tweet.tweet_id).second) entry.tweets.push_back(std::move(tweet));
    }
  }
  return pool;
}

// --- mock client -----------------------------------------------------------

void MockPlatformClient::load_jsonl(std::string_view text) {
  std::size_t lineno = 0;
  for (const auto& line : split(text, '\n')) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(Errc::ParseError, "fixture line " + std::to_string(lineno) + ": " + e.what());
    }
    std::optional<std::string> query;
    if (j.contains("query") && !j["query"].is_null()) query = j["query"].get<std::string>();
    auto user = user_from_json(j.at("user"));
    std::vector<TweetRecord> tweets;
    for (const auto& t : j.value("tweets", json::array())) tweets.push_back(tweet_from_json(t));
    add(query, user, std::move(tweets));
  }
}

void MockPlatformClient::add(const std::optional<std::string>& query, const UserRecord& user,
                             std::vector<TweetRecord> tweets) {
  std::lock_guard lock(mutex_);
  auto& store = timelines_[user.user_id];
  for (const auto& t : tweets) {
    if (t.author_id != user.user_id)
      throw Error(Errc::ForeignTweet, "fixture tweet " + t.tweet_id + " not authored by " + user.user_id);
    store.push_back(t);
  }
  normalize_timeline(store);
  if (query)
    for (auto& t : tweets) by_query_[*query].emplace_back(user, std::move(t));
}

void MockPlatformClient::fail_on_call(int n, Errc code) {
  std::lock_guard lock(mutex_);
  failures_[n] = code;
}

std::vector<std::pair<UserRecord, TweetRecord>> MockPlatformClient::search_recent(const SearchQuery& query) {
  std::lock_guard lock(mutex_);
  ++search_calls_;
  if (auto f = failures_.find(search_calls_); f != failures_.end()) {
    if (f->second == Errc::RateLimited)
      throw PlatformError(Errc::RateLimited, "rate limited on '" + query.text + "'", 900);
    throw PlatformError(f->second, "mock failure on '" + query.text + "'");
  }
  if (query.weight < 1) throw Error(Errc::InvalidArgument, "query weight must be positive");
  std::vector<std::pair<UserRecord, TweetRecord>> hits;
  if (auto it = by_query_.find(query.text); it != by_query_.end()) hits = it->second;
  std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
    if (a.second.created_at != b.second.created_at) return a.second.created_at > b.second.created_at;
    return a.second.tweet_id < b.second.tweet_id;
  });
  if (hits.size() > static_cast<std::size_t>(query.weight)) hits.resize(query.weight);
  return hits;
}

std::vector<TweetRecord> MockPlatformClient::user_timeline(const std::string& user_id, int m) {
  if (m < 1) throw Error(Errc::InvalidArgument, "timeline depth must be positive");
  std::lock_guard lock(mutex_);
  ++timeline_calls_;
  auto it = timelines_.find(user_id);
  if (it == timelines_.end()) throw PlatformError(Errc::NotFound, "unknown user " + user_id);
  std::vector<TweetRecord> out(it->second.begin(),
                               it->second.begin() + std::min<std::size_t>(m, it->second.size()));
  return out;
}

int MockPlatformClient::search_calls() const {
  std::lock_guard lock(mutex_);
  return search_calls_;
}

int MockPlatformClient::timeline_calls() const {
  std::lock_guard lock(mutex_);
  return timeline_calls_;
}

// --- persistence -----------------------------------------------------------

std::string pool_to_jsonl(const SubjectPool& pool) {
  std::string out;
  for (const auto& e : pool.entries) {
    json tweets = json::array();
    for (const auto& t : e.tweets) tweets.push_back(to_json(t));
    json line = {{"pool_date", format_date(pool.pool_date)}, {"user", to_json(e.user)}, {"tweets", tweets}};
    out += line.dump() + "\n";
  }
  return out;
}

SubjectPool pool_from_jsonl(std::string_view text) {
  SubjectPool pool;
  bool dated = false;
  for (const auto& line : split(text, '\n')) {
    if (trim(line).empty()) continue;
    auto j = json::parse(line);
    if (!dated && j.contains("pool_date")) {
      pool.pool_date = parse_date(j["pool_date"].get<std::string>());
      dated = true;
    }
    PoolEntry e{user_from_json(j.at("user")), {}};
    for (const auto& t : j.value("tweets", json::array())) e.tweets.push_back(tweet_from_json(t));
    pool.entries.push_back(std::move(e));
  }
  return pool;
}

json plan_to_json(const QueryPlan& plan) {
  json queries = json::array();
  for (const auto& q : plan.queries) {
    json jq = {{"text", q.text}, {"weight", q.weight}, {"kind", q.kind.is_political() ? "political" : "trending"}};
    if (!q.kind.is_political()) jq["topic"] = q.kind.topic;
    queries.push_back(jq);
  }
  return {{"queries", queries}};
}

QueryPlan plan_from_json(const json& j) {
  QueryPlan plan;
  for (const auto& q : j.at("queries")) {
    SearchQuery sq{q.at("text").get<std::string>(), q.at("weight").get<int>(), CaptureKind::political()};
    if (q.value("kind", "political") == "trending") sq.kind = CaptureKind::trending(q.value("topic", sq.text));
    plan.queries.push_back(std::move(sq));
  }
  return plan;
}

}  // namespace possum
