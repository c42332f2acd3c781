#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "possum/domain.hpp"
#include "possum/error.hpp"

namespace possum {

struct SearchQuery {
  std::string text;
  int weight = 1;  // max tweets to fetch
  CaptureKind kind;
};

struct QueryPlan {
  std::vector<SearchQuery> queries;  // political first, then one per trending topic
};

struct PoolEntry {
  UserRecord user;
  std::vector<TweetRecord> tweets;
};

struct SubjectPool {
  std::vector<PoolEntry> entries;
  Date pool_date{};
  QueryPlan plan;

  std::size_t tweet_count() const;
};

/// Platform failures. RateLimited carries the server's retry hint.
class PlatformError : public Error {
 public:
  PlatformError(Errc code, const std::string& what, std::optional<int> retry_after = std::nullopt)
      : Error(code, what), retry_after_(retry_after) {}
  std::optional<int> retry_after() const { return retry_after_; }

 private:
  std::optional<int> retry_after_;
};

/// Failure inside run_pool: which query failed (1-based) and what had been pooled before it.
class PoolError : public Error {
 public:
  PoolError(std::size_t query_index, Errc cause, const std::string& what, SubjectPool partial)
      : Error(Errc::ClientError, "query " + std::to_string(query_index) + ": " + what),
        query_index_(query_index), cause_(cause), partial_(std::move(partial)) {}
  std::size_t query_index() const { return query_index_; }
  Errc cause() const { return cause_; }
  const SubjectPool& partial() const { return partial_; }

 private:
  std::size_t query_index_;
  Errc cause_;
  SubjectPool partial_;
};

/// Read-side of the platform API. Implementations must be callable from several threads.
class PlatformClient {
 public:
  virtual ~PlatformClient() = default;
  /// At most query.weight (user, tweet) pairs, newest first.
  virtual std::vector<std::pair<UserRecord, TweetRecord>> search_recent(const SearchQuery& query) = 0;
  /// The m newest tweets of a user. Throws NotFound for unknown users.
  virtual std::vector<TweetRecord> user_timeline(const std::string& user_id, int m) = 0;
};

/// Replays JSONL fixtures. Each line is {"user":{..},"tweets":[..]} with an optional
/// "query" key; lines carrying a query answer search_recent for that exact text, and
/// every line feeds the timeline store.
class MockPlatformClient : public PlatformClient {
 public:
  MockPlatformClient() = default;
  /// Adds every fixture line. Throws ParseError.
  void load_jsonl(std::string_view text);

  void add(const std::optional<std::string>& query, const UserRecord& user, std::vector<TweetRecord> tweets);
  /// Makes the n-th search_recent call (1-based) fail with the given code.
  void fail_on_call(int n, Errc code);

  std::vector<std::pair<UserRecord, TweetRecord>> search_recent(const SearchQuery& query) override;
  std::vector<TweetRecord> user_timeline(const std::string& user_id, int m) override;

  int search_calls() const;
  int timeline_calls() const;

 private:
  std::map<std::string, std::vector<std::pair<UserRecord, TweetRecord>>> by_query_;
  std::map<std::string, std::vector<TweetRecord>> timelines_;
  std::map<int, Errc> failures_;
  mutable std::mutex mutex_;
  int search_calls_ = 0;
  int timeline_calls_ = 0;
};

/// Throws EmptyTopics or WeightTooSmall.
QueryPlan build_query_plan(const std::string& political_terms, const std::vector<std::string>& trending_topics,
                           int omega);

/// Throws PoolError on the first failing query.
SubjectPool run_pool(const QueryPlan& plan, PlatformClient& client, Date pool_date);

std::string pool_to_jsonl(const SubjectPool& pool);
SubjectPool pool_from_jsonl(std::string_view text);
nlohmann::json plan_to_json(const QueryPlan& plan);
QueryPlan plan_from_json(const nlohmann::json& j);

}  // namespace possum
