#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "possum/backend.hpp"
#include "possum/domain.hpp"
#include "possum/pool.hpp"

namespace possum {

/// user_id -> last date the user went through the cascade.
class ProcessingLedger {
 public:
  /// Keeps the later of the stored and the given date.
  void record(const std::string& user_id, Date date);
  std::optional<Date> last_processed(const std::string& user_id) const;
  const std::map<std::string, Date>& entries() const { return last_; }
  std::size_t size() const { return last_.size(); }

  std::string to_csv() const;
  static ProcessingLedger from_csv(std::string_view text);

 private:
  std::map<std::string, Date> last_;
};

struct GeoResult {
  bool level1_member = false;
  std::optional<std::string> level2;  // state name or "USA"

  bool stateless() const { return level1_member && level2 == "USA"; }
  bool operator==(const GeoResult&) const = default;
};

enum class EntityKind { Person, Other };

enum class QuotaOutcome { Accepted, Rejected, NoCell };

struct QuotaDecision {
  QuotaOutcome outcome;
  int cell_id = 0;  // set when Accepted or Rejected
};

/// Drops users processed at most window_days before the pool date.
SubjectPool temporal_filter(const SubjectPool& pool, const ProcessingLedger& ledger, int window_days);
SubjectPool null_geography_filter(const SubjectPool& pool);

std::string entity_prompt(const Mould& mould);
std::string geographic_prompt(const Mould& mould);
/// Throws UnparseableReply; backend failures propagate.
EntityKind entity_filter(const Mould& mould, AnnotatorBackend& annotator);
EntityKind parse_entity_reply(std::string_view reply);
/// Throws UnparseableReply.
GeoResult geographic_filter(const Mould& mould, AnnotatorBackend& annotator);
GeoResult parse_geo_reply(std::string_view reply);

/// The 50 states and the District of Columbia.
const std::vector<std::string>& us_state_names();
std::optional<std::string> canonical_state(std::string_view name);

/// Cell match and counter below quota, checked and incremented atomically. Throws SchemaMismatch.
QuotaDecision quota_filter(const AttributeMap& attrs, QuotaState& quotas);

/// Throws InvalidArgument unless lambda > 1 and m_politics >= 1.
int timeline_depth(const CaptureKind& kind, int m_politics, double lambda);

/// Throws AlreadyAugmented; client errors propagate.
Mould augment_mould(const Mould& mould, PlatformClient& client, int depth);

struct AuditRecord {
  std::string user_id;
  std::string stage;
  std::string decision;
  std::string reason;
};

std::string audit_to_jsonl(const std::vector<AuditRecord>& records);
std::vector<AuditRecord> audit_from_jsonl(std::string_view text);

}  // namespace possum
