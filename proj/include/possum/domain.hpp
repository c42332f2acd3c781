#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "possum/util.hpp"

namespace possum {

/// How a user entered the pool: through the political query or a trending topic.
struct CaptureKind {
  enum class Type { Political, Trending } type = Type::Political;
  std::string topic;  // set iff Trending

  static CaptureKind political() { return {}; }
  static CaptureKind trending(std::string topic) { return {Type::Trending, std::move(topic)}; }
  bool is_political() const { return type == Type::Political; }
  bool operator==(const CaptureKind&) const = default;
};

struct UserRecord {
  std::string user_id;
  std::string username;
  std::string display_name;
  std::string description;
  std::optional<std::string> location_raw;
  std::optional<std::string> profile_image_ref;  // URL or path, never decoded
  Timestamp captured_at{};
  CaptureKind capture_query_kind;

  bool operator==(const UserRecord&) const = default;
};

struct TweetRecord {
  std::string tweet_id;
  std::string author_id;
  Timestamp created_at{};
  std::string text;

  bool operator==(const TweetRecord&) const = default;
};

/// A user's digital trace; the generation context for every prompt about them.
struct Mould {
  UserRecord user;
  std::vector<TweetRecord> tweets;  // newest first
  bool augmented = false;

  bool operator==(const Mould&) const = default;
};

struct FeatureOption {
  std::string symbol;
  std::string category;

  bool operator==(const FeatureOption&) const = default;
};

enum class FeatureKind { Independent, Dependent };

/// A survey question: a title plus a symbol-keyed choice set.
class FeatureDef {
 public:
  FeatureDef() = default;
  /// Throws Errc::InvalidArgument on an empty title, fewer than two options or repeated symbols.
  FeatureDef(std::string title, std::vector<FeatureOption> options,
             FeatureKind kind = FeatureKind::Independent);

  const std::string& title() const { return title_; }
  const std::vector<FeatureOption>& options() const { return options_; }
  FeatureKind kind() const { return kind_; }

  const FeatureOption* find_symbol(std::string_view symbol) const;
  /// Exact normalized match on the category text.
  const FeatureOption* find_category(std::string_view category) const;
  /// Category index under exact normalized match, else the option whose category
  /// the text starts with (state-conditioned choice sets extend the base text).
  std::optional<std::size_t> match_category(std::string_view category) const;

  bool operator==(const FeatureDef&) const = default;

 private:
  std::string title_;
  std::vector<FeatureOption> options_;
  FeatureKind kind_ = FeatureKind::Independent;
};

struct FeatureValue {
  std::string title;
  std::string symbol;
  std::string category;
  std::string explanation;
  int speculation = 0;  // [0, 100]

  bool operator==(const FeatureValue&) const = default;
};

struct SiliconResponse {
  std::string user_id;
  std::string poll_id;
  Date fieldwork_date{};
  /// Level-2 geography; empty for stateless users.
  std::optional<std::string> area;
  std::map<std::string, FeatureValue> values;
  /// Per-strategy answers, keyed "<title>|<strategy>".
  std::map<std::string, FeatureValue> strategy_votes;

  bool stateless() const { return !area.has_value(); }
};

using AttributeMap = std::map<std::string, std::string>;

struct StratCell {
  int cell_id = 0;
  AttributeMap attributes;  // title -> category
  double weight = 0.0;
};

struct StratFrame {
  std::vector<StratCell> cells;
  std::vector<std::string> attribute_schema;

  double total_weight() const;
  const StratCell* find(int cell_id) const;
};

/// Quota targets and live counters over a frame. Counter updates are atomic
/// check-and-increment operations, so a QuotaState may be shared across tasks.
class QuotaState {
 public:
  QuotaState() = default;
  QuotaState(StratFrame frame, std::map<int, int> quota);
  QuotaState(const QuotaState& other);
  QuotaState& operator=(const QuotaState& other);
  QuotaState(QuotaState&&) noexcept;
  QuotaState& operator=(QuotaState&&) noexcept;
  ~QuotaState();

  const StratFrame& frame() const { return frame_; }
  const std::map<int, int>& quota() const { return quota_; }
  int quota_of(int cell_id) const;
  int counter_of(int cell_id) const;
  std::map<int, int> counters() const;
  /// Sets a counter directly (restoring a snapshot); clamped to the quota.
  void set_counter(int cell_id, int value);
  /// Σ ω⋆_c.
  int total_quota() const;
  int total_filled() const;

  /// Increments the counter of `cell_id` iff it is below quota. Linearizable.
  bool try_acquire(int cell_id);

 private:
  StratFrame frame_;
  std::map<int, int> quota_;
  std::map<int, int> counter_;
  std::unique_ptr<std::mutex> mutex_ = std::make_unique<std::mutex>();
};

// --- operations ------------------------------------------------------------

/// Deduplicates by tweet_id and orders newest first. Throws Errc::ForeignTweet.
Mould assemble_mould(const UserRecord& user, std::vector<TweetRecord> tweets);

/// Orders tweets newest first (ties by tweet_id) after removing duplicate ids.
void normalize_timeline(std::vector<TweetRecord>& tweets);

/// The unique cell whose attributes match `attrs` on the schema. Throws Errc::SchemaMismatch.
std::optional<int> lookup_cell(const StratFrame& frame, const AttributeMap& attrs);

enum class FrameViolation { EmptySchema, MissingAttribute, ExtraAttribute, DuplicateCell, DuplicateCellId,
                            NegativeWeight, NonFiniteWeight, ZeroTotalWeight };

struct FrameIssue {
  FrameViolation kind;
  int cell_id = 0;
};

std::vector<FrameIssue> validate_frame(const StratFrame& frame);
std::string_view to_string(FrameViolation v);

/// Restricts `attrs` to the schema with normalized categories.
AttributeMap normalize_attributes(const AttributeMap& attrs);

// --- persistence -----------------------------------------------------------

/// Frame CSV: one column per schema title plus cell_id, weight, quota.
std::string frame_to_csv(const StratFrame& frame, const std::map<int, int>& quota = {});
std::string quota_to_csv(const QuotaState& quota);
struct FrameFile {
  StratFrame frame;
  std::map<int, int> quota;
};
FrameFile frame_from_csv(std::string_view text);

nlohmann::json to_json(const UserRecord& u);
nlohmann::json to_json(const TweetRecord& t);
nlohmann::json to_json(const FeatureDef& f);
nlohmann::json to_json(const FeatureValue& v);
nlohmann::json to_json(const SiliconResponse& r);
UserRecord user_from_json(const nlohmann::json& j);
TweetRecord tweet_from_json(const nlohmann::json& j);
FeatureDef feature_def_from_json(const nlohmann::json& j);
FeatureValue feature_value_from_json(const nlohmann::json& j);
SiliconResponse response_from_json(const nlohmann::json& j);

std::string responses_to_jsonl(const std::vector<SiliconResponse>& responses);
std::vector<SiliconResponse> responses_from_jsonl(std::string_view text);

}  // namespace possum
