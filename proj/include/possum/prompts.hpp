#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "possum/backend.hpp"
#include "possum/domain.hpp"

namespace possum {

extern const std::string kEntityPrompt;
extern const std::string kGeoPrompt;
extern const std::string kSpeculationModule;
/// Marker that precedes the feature listing in every extraction prompt.
extern const std::string kFeatureListIntro;
/// Marker present in every feature-builder prompt.
extern const std::string kBuilderMarker;

struct PromptSections {
  std::string background;
  std::string mould_text;
  std::string instructions;
};

/// Plain-text layout with {{background}}, {{mould}} and {{features}} slots.
struct PromptTemplate {
  std::string text = "{{background}}{{mould}}{{features}}";
  static PromptTemplate from_file(const std::filesystem::path& path);
};

struct PromptOptions {
  bool randomize_order = false;
  bool include_speculation = true;
  std::uint64_t seed = 0;
  PromptTemplate layout;
};

std::string render_mould(const Mould& mould);
std::string render_feature_block(const FeatureDef& def);
/// "The results of the 2020 US Presidential election in state -- X -- are reported below." plus table.
std::string render_background(const std::string& state, const std::vector<std::pair<std::string, double>>& shares);
/// Reads X back out of a background produced by render_background.
std::optional<std::string> background_state(const std::string& background);

/// Independent features first; each group shuffled under the seed when requested.
std::vector<FeatureDef> order_features(const std::vector<FeatureDef>& features, bool randomize, std::uint64_t seed);

std::string render_instructions(const std::vector<FeatureDef>& ordered, bool include_speculation);
PromptSections prompt_sections(const std::string& background, const Mould& mould,
                               const std::vector<FeatureDef>& ordered, bool include_speculation);
std::string assemble_prompt(const PromptSections& sections, const PromptTemplate& layout = {});

/// Throws EmptyFeatures.
std::string build_prompt(const std::string& background, const Mould& mould, const std::vector<FeatureDef>& features,
                         const PromptOptions& options = {});

/// Parses "TITLE:\nsym) category\n..." blocks. Throws ParseError.
std::vector<FeatureDef> parse_feature_listing(std::string_view text, FeatureKind kind = FeatureKind::Independent);

std::string builder_prompt(const std::string& background, const std::string& feature_template);
/// Sends the builder prompt and parses the completed choice sets. Throws PlaceholderLeak, ParseError.
std::vector<FeatureDef> build_features_via_builder(const std::string& background, const std::string& feature_template,
                                                   AnnotatorBackend& annotator);

enum class ParseWarningKind { SymbolCategoryDisagreement, SpeculationClamped, SpeculationMissing, UnexpectedTitle };

struct ParseWarning {
  ParseWarningKind kind;
  std::string title;
  std::string detail;
};

struct ParsedAnnotation {
  std::vector<FeatureValue> entries;  // in the order of the expected defs
  std::vector<ParseWarning> warnings;

  const FeatureValue* find(std::string_view title) const;
};

/// Throws MissingTitle, DuplicateTitle, UnknownSymbol, ParseError.
ParsedAnnotation parse_annotation(std::string_view raw, const std::vector<FeatureDef>& expected);

/// Formats one answer block exactly as the instructions request.
std::string render_answer(const FeatureValue& value);

enum class SpeculationBand { Low, ModerateLow, Moderate, ModerateHigh, High };
std::string_view to_string(SpeculationBand band);
/// Throws OutOfRange.
SpeculationBand speculation_band(int score);
/// Throws MissingTitle when a relevant title has no value.
bool is_highly_speculative(const SiliconResponse& response, const std::set<std::string>& relevant_titles,
                           int threshold = 80);

enum class PromptStrategy { MinimallyInformative, ModeratelyInformative, HighlyInformative, JointSociodemographic };
std::string_view to_string(PromptStrategy s);
inline constexpr PromptStrategy kAllStrategies[] = {
    PromptStrategy::MinimallyInformative, PromptStrategy::ModeratelyInformative,
    PromptStrategy::HighlyInformative, PromptStrategy::JointSociodemographic};

/// Moderately and Highly need `state_vote`; Highly also needs `background`.
/// Throws MissingStateFeatures, MissingBackground.
std::string strategy_prompt(PromptStrategy strategy, const Mould& mould, const FeatureDef& vote,
                            const std::vector<FeatureDef>& demographics, const std::optional<FeatureDef>& state_vote,
                            const std::string& background, const PromptOptions& options = {});

/// Plurality winner; ties resolved uniformly under the seed.
std::string majority_vote(const std::vector<std::string>& votes, std::uint64_t seed);

/// The option whose category equals `base` or extends it (state-conditioned choice sets).
const FeatureOption* option_extending(const FeatureDef& def, std::string_view base);

}  // namespace possum
