#include "possum/domain.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "possum/error.hpp"

namespace possum {

FeatureDef::FeatureDef(std::string title, std::vector<FeatureOption> options, FeatureKind kind)
    : title_(trim(title)), options_(std::move(options)), kind_(kind) {
  if (title_.empty()) throw Error(Errc::InvalidArgument, "feature title is empty");
  if (options_.size() < 2)
    throw Error(Errc::InvalidArgument, "feature '" + title_ + "' needs at least two options");
  std::set<std::string> seen;
  for (auto& o : options_) {
    o.symbol = trim(o.symbol);
    o.category = trim(o.category);
    if (o.symbol.empty()) throw Error(Errc::InvalidArgument, "empty symbol in feature '" + title_ + "'");
    if (!seen.insert(o.symbol).second)
      throw Error(Errc::InvalidArgument, "duplicate symbol '" + o.symbol + "' in feature '" + title_ + "'");
  }
}

const FeatureOption* FeatureDef::find_symbol(std::string_view symbol) const {
  for (const auto& o : options_)
    if (o.symbol == symbol) return &o;
  return nullptr;
}

const FeatureOption* FeatureDef::find_category(std::string_view category) const {
  auto key = normalize(category);
  for (const auto& o : options_)
    if (normalize(o.category) == key) return &o;
  return nullptr;
}

std::optional<std::size_t> FeatureDef::match_category(std::string_view category) const {
  auto key = normalize(category);
  for (std::size_t i = 0; i < options_.size(); ++i)
    if (normalize(options_[i].category) == key) return i;
  // longest base category that prefixes the text
  std::optional<std::size_t> best;
  std::size_t best_len = 0;
  for (std::size_t i = 0; i < options_.size(); ++i) {
    auto base = normalize(options_[i].category);
    if (base.size() > best_len && key.size() > base.size() && key.compare(0, base.size(), base) == 0 &&
        (key[base.size()] == ' ' || key[base.size()] == ',')) {
      best = i;
      best_len = base.size();
    }
  }
  return best;
}

double StratFrame::total_weight() const {
  double total = 0.0;
  for (const auto& c : cells) total += c.weight;
  return total;
}

const StratCell* StratFrame::find(int cell_id) const {
  for (const auto& c : cells)
    if (c.cell_id == cell_id) return &c;
  return nullptr;
}

QuotaState::QuotaState(StratFrame frame, std::map<int, int> quota)
    : frame_(std::move(frame)), quota_(std::move(quota)) {
  for (const auto& cell : frame_.cells) {
    auto it = quota_.find(cell.cell_id);
    if (it == quota_.end()) quota_[cell.cell_id] = 0;
    else if (it->second < 0) throw Error(Errc::InvalidArgument, "negative quota for cell " + std::to_string(cell.cell_id));
    counter_[cell.cell_id] = 0;
  }
  for (const auto& [id, q] : quota_)
    if (!counter_.count(id)) throw Error(Errc::InvalidArgument, "quota for unknown cell " + std::to_string(id));
}

QuotaState::QuotaState(const QuotaState& other) : frame_(other.frame_), quota_(other.quota_) {
  std::lock_guard lock(*other.mutex_);
  counter_ = other.counter_;
}

QuotaState& QuotaState::operator=(const QuotaState& other) {
  if (this == &other) return *this;
  QuotaState copy(other);
  *this = std::move(copy);
  return *this;
}

QuotaState::QuotaState(QuotaState&& other) noexcept
    : frame_(std::move(other.frame_)),
      quota_(std::move(other.quota_)),
      counter_(std::move(other.counter_)),
      mutex_(std::move(other.mutex_)) {
  other.mutex_ = std::make_unique<std::mutex>();
}

QuotaState& QuotaState::operator=(QuotaState&& other) noexcept {
  frame_ = std::move(other.frame_);
  quota_ = std::move(other.quota_);
  counter_ = std::move(other.counter_);
  std::swap(mutex_, other.mutex_);
  return *this;
}

QuotaState::~QuotaState() = default;

int QuotaState::quota_of(int cell_id) const {
  auto it = quota_.find(cell_id);
  return it == quota_.end() ? 0 : it->second;
}

int QuotaState::counter_of(int cell_id) const {
  std::lock_guard lock(*mutex_);
  auto it = counter_.find(cell_id);
  return it == counter_.end() ? 0 : it->second;
}

std::map<int, int> QuotaState::counters() const {
  std::lock_guard lock(*mutex_);
  return counter_;
}

void QuotaState::set_counter(int cell_id, int value) {
  std::lock_guard lock(*mutex_);
  auto it = counter_.find(cell_id);
  if (it == counter_.end()) throw Error(Errc::InvalidArgument, "unknown cell " + std::to_string(cell_id));
  it->second = std::clamp(value, 0, quota_of(cell_id));
}

int QuotaState::total_quota() const {
  int total = 0;
  for (const auto& [id, q] : quota_) total += q;
  return total;
}

int QuotaState::total_filled() const {
  std::lock_guard lock(*mutex_);
  int total = 0;
  for (const auto& [id, c] : counter_) total += c;
  return total;
}

bool QuotaState::try_acquire(int cell_id) {
  std::lock_guard lock(*mutex_);
  auto it = counter_.find(cell_id);
  if (it == counter_.end()) return false;
  if (it->second >= quota_of(cell_id)) return false;
  ++it->second;
  return true;
}

void normalize_timeline(std::vector<TweetRecord>& tweets) {
  std::set<std::string> seen;
  std::vector<TweetRecord> unique;
  unique.reserve(tweets.size());
  for (auto& t : tweets)
    if (seen.insert(t.tweet_id).second) unique.push_back(std::move(t));
  std::stable_sort(unique.begin(), unique.end(), [](const TweetRecord& a, const TweetRecord& b) {
    if (a.created_at != b.created_at) return a.created_at > b.created_at;
    return a.tweet_id < b.tweet_id;
  });
  tweets = std::move(unique);
}

Mould assemble_mould(const UserRecord& user, std::vector<TweetRecord> tweets) {
  for (const auto& t : tweets)
    if (t.author_id != user.user_id)
      throw Error(Errc::ForeignTweet, "tweet " + t.tweet_id + " authored by " + t.author_id + ", not " + user.user_id);
  normalize_timeline(tweets);
  return Mould{user, std::move(tweets), false};
}

AttributeMap normalize_attributes(const AttributeMap& attrs) {
  AttributeMap out;
  for (const auto& [k, v] : attrs) out[k] = normalize(v);
  return out;
}

std::optional<int> lookup_cell(const StratFrame& frame, const AttributeMap& attrs) {
  std::vector<std::string> key;
  key.reserve(frame.attribute_schema.size());
  for (const auto& title : frame.attribute_schema) {
    auto it = attrs.find(title);
    if (it == attrs.end()) throw Error(Errc::SchemaMismatch, "attributes lack schema title '" + title + "'");
    key.push_back(normalize(it->second));
  }
  for (const auto& cell : frame.cells) {
    bool match = true;
    for (std::size_t i = 0; i < key.size() && match; ++i) {
      auto it = cell.attributes.find(frame.attribute_schema[i]);
      match = it != cell.attributes.end() && normalize(it->second) == key[i];
    }
    if (match) return cell.cell_id;
  }
  return std::nullopt;
}

std::string_view to_string(FrameViolation v) {
  switch (v) {
    case FrameViolation::EmptySchema: return "EmptySchema";
    case FrameViolation::MissingAttribute: return "MissingAttribute";
    case FrameViolation::ExtraAttribute: return "ExtraAttribute";
    case FrameViolation::DuplicateCell: return "DuplicateCell";
    case FrameViolation::DuplicateCellId: return "DuplicateCellId";
    case FrameViolation::NegativeWeight: return "NegativeWeight";
    case FrameViolation::NonFiniteWeight: return "NonFiniteWeight";
    case FrameViolation::ZeroTotalWeight: return "ZeroTotalWeight";
  }
  return "Unknown";
}

std::vector<FrameIssue> validate_frame(const StratFrame& frame) {
  std::vector<FrameIssue> issues;
  if (frame.attribute_schema.empty()) issues.push_back({FrameViolation::EmptySchema, 0});
  std::set<std::vector<std::string>> combos;
  std::set<int> ids;
  double total = 0.0;
  for (const auto& cell : frame.cells) {
    if (!ids.insert(cell.cell_id).second) issues.push_back({FrameViolation::DuplicateCellId, cell.cell_id});
    std::vector<std::string> key;
    for (const auto& title : frame.attribute_schema) {
      auto it = cell.attributes.find(title);
      if (it == cell.attributes.end()) {
        issues.push_back({FrameViolation::MissingAttribute, cell.cell_id});
        key.emplace_back();
      } else {
        key.push_back(normalize(it->second));
      }
    }
    if (cell.attributes.size() > frame.attribute_schema.size())
      issues.push_back({FrameViolation::ExtraAttribute, cell.cell_id});
    if (!combos.insert(key).second) issues.push_back({FrameViolation::DuplicateCell, cell.cell_id});
    if (!std::isfinite(cell.weight)) issues.push_back({FrameViolation::NonFiniteWeight, cell.cell_id});
    else if (cell.weight < 0) issues.push_back({FrameViolation::NegativeWeight, cell.cell_id});
    else total += cell.weight;
  }
  if (!(total > 0)) issues.push_back({FrameViolation::ZeroTotalWeight, 0});
  return issues;
}

std::string frame_to_csv(const StratFrame& frame, const std::map<int, int>& quota) {
  std::vector<std::string> header = frame.attribute_schema;
  header.insert(header.end(), {"cell_id", "weight", "quota"});
  std::string out = csv_line(header);
  for (const auto& cell : frame.cells) {
    std::vector<std::string> row;
    for (const auto& title : frame.attribute_schema) row.push_back(cell.attributes.at(title));
    auto q = quota.find(cell.cell_id);
    row.push_back(std::to_string(cell.cell_id));
    row.push_back(format_double(cell.weight));
    row.push_back(std::to_string(q == quota.end() ? 0 : q->second));
    out += csv_line(row);
  }
  return out;
}

std::string quota_to_csv(const QuotaState& quota) {
  std::vector<std::string> header = quota.frame().attribute_schema;
  header.insert(header.end(), {"cell_id", "quota", "counter"});
  std::string out = csv_line(header);
  auto counters = quota.counters();
  for (const auto& cell : quota.frame().cells) {
    std::vector<std::string> row;
    for (const auto& title : quota.frame().attribute_schema) row.push_back(cell.attributes.at(title));
    row.push_back(std::to_string(cell.cell_id));
    row.push_back(std::to_string(quota.quota_of(cell.cell_id)));
    row.push_back(std::to_string(counters[cell.cell_id]));
    out += csv_line(row);
  }
  return out;
}

FrameFile frame_from_csv(std::string_view text) {
  auto table = parse_csv(text);
  auto id_col = table.column("cell_id");
  auto weight_col = table.column("weight");
  std::optional<std::size_t> quota_col;
  if (table.has_column("quota")) quota_col = table.column("quota");
  FrameFile file;
  std::vector<std::size_t> attr_cols;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i == id_col || i == weight_col || (quota_col && i == *quota_col)) continue;
    file.frame.attribute_schema.push_back(table.header[i]);
    attr_cols.push_back(i);
  }
  for (const auto& row : table.rows) {
    StratCell cell;
    try {
      cell.cell_id = std::stoi(row[id_col]);
      cell.weight = std::stod(row[weight_col]);
      if (quota_col && !trim(row[*quota_col]).empty()) file.quota[cell.cell_id] = std::stoi(row[*quota_col]);
    } catch (const std::logic_error&) {
      throw Error(Errc::ParseError, "bad numeric field in frame row for cell '" + row[id_col] + "'");
    }
    for (std::size_t k = 0; k < attr_cols.size(); ++k)
      cell.attributes[file.frame.attribute_schema[k]] = row[attr_cols[k]];
    file.frame.cells.push_back(std::move(cell));
  }
  return file;
}

// --- json ------------------------------------------------------------------

using nlohmann::json;

json to_json(const UserRecord& u) {
  json j;
  j["user_id"] = u.user_id;
  j["username"] = u.username;
  j["display_name"] = u.display_name;
  j["description"] = u.description;
  j["location_raw"] = u.location_raw ? json(*u.location_raw) : json(nullptr);
  j["profile_image_ref"] = u.profile_image_ref ? json(*u.profile_image_ref) : json(nullptr);
  j["captured_at"] = format_timestamp(u.captured_at);
  if (u.capture_query_kind.is_political()) {
    j["capture_query_kind"] = {{"kind", "political"}};
  } else {
    j["capture_query_kind"] = {{"kind", "trending"}, {"topic", u.capture_query_kind.topic}};
  }
  return j;
}

json to_json(const TweetRecord& t) {
  return {{"tweet_id", t.tweet_id},
          {"author_id", t.author_id},
          {"created_at", format_timestamp(t.created_at)},
          {"text", t.text}};
}

json to_json(const FeatureDef& f) {
  json options = json::array();
  for (const auto& o : f.options()) options.push_back({{"symbol", o.symbol}, {"category", o.category}});
  return {{"title", f.title()},
          {"kind", f.kind() == FeatureKind::Independent ? "independent" : "dependent"},
          {"options", options}};
}

json to_json(const FeatureValue& v) {
  return {{"title", v.title},
          {"symbol", v.symbol},
          {"category", v.category},
          {"explanation", v.explanation},
          {"speculation", v.speculation}};
}

json to_json(const SiliconResponse& r) {
  json values = json::object();
  for (const auto& [k, v] : r.values) values[k] = to_json(v);
  json votes = json::object();
  for (const auto& [k, v] : r.strategy_votes) votes[k] = to_json(v);
  return {{"user_id", r.user_id},
          {"poll_id", r.poll_id},
          {"fieldwork_date", format_date(r.fieldwork_date)},
          {"area", r.area ? json(*r.area) : json(nullptr)},
          {"values", values},
          {"strategy_votes", votes}};
}

namespace {

std::optional<std::string> opt_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

}  // namespace

UserRecord user_from_json(const json& j) {
  UserRecord u;
  u.user_id = j.at("user_id").get<std::string>();
  u.username = j.value("username", "");
  u.display_name = j.value("display_name", "");
  u.description = j.value("description", "");
  u.location_raw = opt_string(j, "location_raw");
  u.profile_image_ref = opt_string(j, "profile_image_ref");
  u.captured_at = parse_timestamp(j.at("captured_at").get<std::string>());
  if (auto it = j.find("capture_query_kind"); it != j.end()) {
    if (it->at("kind").get<std::string>() == "trending")
      u.capture_query_kind = CaptureKind::trending(it->value("topic", ""));
  }
  if (u.user_id.empty()) throw Error(Errc::ParseError, "user_id is empty");
  return u;
}

TweetRecord tweet_from_json(const json& j) {
  TweetRecord t;
  t.tweet_id = j.at("tweet_id").get<std::string>();
  t.author_id = j.at("author_id").get<std::string>();
  t.created_at = parse_timestamp(j.at("created_at").get<std::string>());
  t.text = j.at("text").get<std::string>();
  return t;
}

FeatureDef feature_def_from_json(const json& j) {
  std::vector<FeatureOption> options;
  for (const auto& o : j.at("options"))
    options.push_back({o.at("symbol").get<std::string>(), o.at("category").get<std::string>()});
  auto kind = j.value("kind", "independent") == "dependent" ? FeatureKind::Dependent : FeatureKind::Independent;
  return FeatureDef(j.at("title").get<std::string>(), std::move(options), kind);
}

FeatureValue feature_value_from_json(const json& j) {
  return FeatureValue{j.at("title").get<std::string>(), j.at("symbol").get<std::string>(),
                      j.at("category").get<std::string>(), j.value("explanation", ""),
                      j.value("speculation", 0)};
}

SiliconResponse response_from_json(const json& j) {
  SiliconResponse r;
  r.user_id = j.at("user_id").get<std::string>();
  r.poll_id = j.value("poll_id", "");
  r.fieldwork_date = parse_date(j.at("fieldwork_date").get<std::string>());
  r.area = opt_string(j, "area");
  for (const auto& [k, v] : j.at("values").items()) r.values[k] = feature_value_from_json(v);
  if (auto it = j.find("strategy_votes"); it != j.end())
    for (const auto& [k, v] : it->items()) r.strategy_votes[k] = feature_value_from_json(v);
  return r;
}

std::string responses_to_jsonl(const std::vector<SiliconResponse>& responses) {
  std::string out;
  for (const auto& r : responses) out += to_json(r).dump() + "\n";
  return out;
}

std::vector<SiliconResponse> responses_from_jsonl(std::string_view text) {
  std::vector<SiliconResponse> out;
  for (const auto& line : split(text, '\n')) {
    if (trim(line).empty()) continue;
    out.push_back(response_from_json(json::parse(line)));
  }
  return out;
}

}  // namespace possum
