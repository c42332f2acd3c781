#include "possum/prompts.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <regex>

#include "possum/error.hpp"

namespace possum {

namespace detail {
extern const std::string kBuilderInstructions;
extern const std::string kInstructionsHead;
extern const std::string kInstructionsFormat;
extern const std::string kSpeculationFormatLine;
extern const std::string kInstructionsTail;
}  // namespace detail

namespace {

std::string tweet_time(Timestamp t) {
  auto s = format_timestamp(t);  // YYYY-MM-DDTHH:MM:SS.000Z
  return s.substr(0, 10) + " " + s.substr(11, 8);
}

std::string strip_stars(std::string s) {
  s = trim(s);
  while (s.size() >= 2 && s.compare(s.size() - 2, 2, "**") == 0) s = trim(s.substr(0, s.size() - 2));
  return s;
}

}  // namespace

PromptTemplate PromptTemplate::from_file(const std::filesystem::path& path) {
  PromptTemplate t{read_file(path)};
  for (const char* slot : {"{{mould}}", "{{features}}"})
    if (t.text.find(slot) == std::string::npos)
      throw Error(Errc::InvalidArgument, path.string() + " lacks the " + slot + " slot");
  return t;
}

std::string render_mould(const Mould& mould) {
  const auto& u = mould.user;
  std::string out = "A social media account has the following username, name, description and profile image: ";
  out += "username: " + u.username + ", name: " + u.display_name + ", description: " + u.description;
  out += ", profile image: " + u.profile_image_ref.value_or("none") + ". ";
  out += "Furthermore, they self-report their location in their bio as follows: location: " +
         u.location_raw.value_or("") + "\n\n";
  out += "Finally, they have written the following tweet(s); date and time of tweet (date expressed as Y-m-d): \n";
  for (const auto& t : mould.tweets) out += "created at: " + tweet_time(t.created_at) + ", text: " + t.text + "\n";
  return out;
}

std::string render_feature_block(const FeatureDef& def) {
  std::string out = def.title() + ":\n";
  for (const auto& o : def.options()) out += o.symbol + ") " + o.category + "\n";
  return out;
}

std::string render_background(const std::string& state, const std::vector<std::pair<std::string, double>>& shares) {
  std::string out = "The results of the 2020 US Presidential election in state -- " + state + " -- are reported below.\n";
  out += "Candidate | Share\n";
  for (const auto& [name, share] : shares) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", share);
    out += name + " | " + buf + "\n";
  }
  out += "In the above, note that election results are stated as % of the voting age population in the state.\n";
  return out;
}

std::optional<std::string> background_state(const std::string& background) {
  static const std::regex re(R"(in state -- (.+?) -- are reported below)");
  std::smatch m;
  if (std::regex_search(background, m, re)) return m[1].str();
  return std::nullopt;
}

std::vector<FeatureDef> order_features(const std::vector<FeatureDef>& features, bool randomize, std::uint64_t seed) {
  std::vector<FeatureDef> indep, dep;
  for (const auto& f : features) (f.kind() == FeatureKind::Independent ? indep : dep).push_back(f);
  if (randomize) {
    auto rng = make_rng(seed, {"feature-order"});
    std::shuffle(indep.begin(), indep.end(), rng);
    std::shuffle(dep.begin(), dep.end(), rng);
  }
  indep.insert(indep.end(), dep.begin(), dep.end());
  return indep;
}

std::string render_instructions(const std::vector<FeatureDef>& ordered, bool include_speculation) {
  std::string out = detail::kInstructionsHead;
  if (include_speculation) out += "\n" + kSpeculationModule + "\n\n";
  out += detail::kInstructionsFormat;
  if (include_speculation) out += detail::kSpeculationFormatLine;
  out += detail::kInstructionsTail;
  out += kFeatureListIntro + "\n";
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    if (i) out += "\n";
    out += render_feature_block(ordered[i]);
  }
  return out;
}

PromptSections prompt_sections(const std::string& background, const Mould& mould,
                               const std::vector<FeatureDef>& ordered, bool include_speculation) {
  PromptSections s;
  if (!background.empty()) s.background = "BACKGROUND\n" + background + "\n";
  s.mould_text = "USER DATA\n" + render_mould(mould) + "\n";
  s.instructions = "INSTRUCTIONS\n" + render_instructions(ordered, include_speculation);
  return s;
}

std::string assemble_prompt(const PromptSections& sections, const PromptTemplate& layout) {
  std::string out = layout.text;
  replace_all(out, "{{background}}", sections.background);
  replace_all(out, "{{mould}}", sections.mould_text);
  replace_all(out, "{{features}}", sections.instructions);
  return out;
}

std::string build_prompt(const std::string& background, const Mould& mould, const std::vector<FeatureDef>& features,
                         const PromptOptions& options) {
  if (features.empty()) throw Error(Errc::EmptyFeatures, "no features to extract");
  auto ordered = order_features(features, options.randomize_order, options.seed);
  return assemble_prompt(prompt_sections(background, mould, ordered, options.include_speculation), options.layout);
}

std::vector<FeatureDef> parse_feature_listing(std::string_view text, FeatureKind kind) {
  static const std::regex option_re(R"(^\s*([A-Za-z0-9_.\-]+)\)\s*(.*?)\s*$)");
  std::vector<FeatureDef> defs;
  std::optional<std::string> title;
  std::vector<FeatureOption> options;
  auto flush = [&] {
    if (title) defs.emplace_back(*title, std::move(options), kind);
    title.reset();
    options.clear();
  };
  std::size_t lineno = 0;
  for (const auto& raw : split(text, '\n')) {
    ++lineno;
    auto line = trim(raw);
    if (line.empty()) continue;
    std::smatch m;
    if (std::regex_match(line, m, option_re)) {
      if (!title) throw Error(Errc::ParseError, "option before any title on line " + std::to_string(lineno));
      options.push_back({m[1].str(), m[2].str()});
    } else if (line.back() == ':') {
      flush();
      title = trim(line.substr(0, line.size() - 1));
    } else {
      throw Error(Errc::ParseError, "unexpected text on line " + std::to_string(lineno) + ": " + line);
    }
  }
  flush();
  if (defs.empty()) throw Error(Errc::ParseError, "no feature blocks found");
  return defs;
}

std::string builder_prompt(const std::string& background, const std::string& feature_template) {
  return "BACKGROUND\n" + background + "\nINSTRUCTIONS\n" + detail::kBuilderInstructions + "\n\n" + feature_template;
}

std::vector<FeatureDef> build_features_via_builder(const std::string& background, const std::string& feature_template,
                                                   AnnotatorBackend& annotator) {
  static const std::regex placeholder(R"(<[^<>\n]+>)");
  if (!std::regex_search(feature_template, placeholder))
    throw Error(Errc::InvalidArgument, "feature template has no <...> placeholders");
  auto reply = annotator.complete(builder_prompt(background, feature_template));
  std::smatch m;
  if (std::regex_search(reply, m, placeholder))
    throw Error(Errc::PlaceholderLeak, "builder reply still contains " + m[0].str());
  auto defs = parse_feature_listing(reply, FeatureKind::Independent);
  // symbols of the form <prefix><n> must count up from 1
  static const std::regex numbered(R"(^(.*?)(\d+)$)");
  for (const auto& def : defs) {
    std::smatch sm;
    std::string prefix;
    for (std::size_t i = 0; i < def.options().size(); ++i) {
      const auto& sym = def.options()[i].symbol;
      if (!std::regex_match(sym, sm, numbered)) break;
      if (i == 0) prefix = sm[1].str();
      if (sm[1].str() != prefix || std::stoul(sm[2].str()) != i + 1)
        throw Error(Errc::ParseError, "builder symbols in '" + def.title() + "' are not sequential at " + sym);
    }
  }
  return defs;
}

const FeatureValue* ParsedAnnotation::find(std::string_view title) const {
  auto key = normalize(title);
  for (const auto& e : entries)
    if (normalize(e.title) == key) return &e;
  return nullptr;
}

ParsedAnnotation parse_annotation(std::string_view raw, const std::vector<FeatureDef>& expected) {
  static const std::regex key_re(R"(^\s*\*\*\s*(title|explanation|symbol|category|speculation)\s*:(.*)$)",
                                 std::regex::icase);
  struct Block {
    std::map<std::string, std::string> fields;
  };
  std::vector<Block> blocks;
  std::string current_key;
  for (const auto& line : split(raw, '\n')) {
    std::smatch m;
    if (std::regex_match(line, m, key_re)) {
      current_key = to_lower(m[1].str());
      if (current_key == "title") blocks.emplace_back();
      if (blocks.empty()) {
        current_key.clear();
        continue;
      }
      blocks.back().fields[current_key] = m[2].str();
    } else if (!current_key.empty() && !blocks.empty()) {
      blocks.back().fields[current_key] += "\n" + line;
    }
  }

  ParsedAnnotation out;
  std::map<std::string, std::size_t> wanted;
  for (std::size_t i = 0; i < expected.size(); ++i) wanted[normalize(expected[i].title())] = i;
  std::vector<std::optional<FeatureValue>> found(expected.size());

  for (const auto& block : blocks) {
    auto title = strip_stars(block.fields.at("title"));
    if (!title.empty() && title.back() == ':') title = trim(title.substr(0, title.size() - 1));
    auto it = wanted.find(normalize(title));
    if (it == wanted.end()) {
      out.warnings.push_back({ParseWarningKind::UnexpectedTitle, title, "title was not requested"});
      continue;
    }
    const auto& def = expected[it->second];
    if (found[it->second]) throw Error(Errc::DuplicateTitle, def.title());
    auto field = [&](const char* k) -> std::optional<std::string> {
      auto f = block.fields.find(k);
      if (f == block.fields.end()) return std::nullopt;
      return strip_stars(f->second);
    };
    auto symbol = field("symbol");
    if (!symbol) throw Error(Errc::ParseError, "no symbol given for " + def.title());
    auto sym = trim(*symbol);
    while (!sym.empty() && sym.back() == ')') sym = trim(sym.substr(0, sym.size() - 1));
    const auto* option = def.find_symbol(sym);
    if (!option) throw Error(Errc::UnknownSymbol, "'" + sym + "' is not an option of " + def.title());

    FeatureValue v;
    v.title = def.title();
    v.symbol = option->symbol;
    v.category = option->category;
    v.explanation = field("explanation").value_or("");
    if (auto cat = field("category"); cat && normalize(*cat) != normalize(option->category))
      out.warnings.push_back({ParseWarningKind::SymbolCategoryDisagreement, def.title(),
                              "symbol " + sym + " names '" + option->category + "' but category reads '" + *cat + "'"});
    if (auto spec = field("speculation")) {
      long value = 0;
      auto text = trim(*spec);
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
      if (ec != std::errc() || ptr == text.data())
        throw Error(Errc::ParseError, "speculation for " + def.title() + " is not an integer: '" + text + "'");
      if (value < 0 || value > 100) {
        out.warnings.push_back({ParseWarningKind::SpeculationClamped, def.title(), text});
        value = std::clamp(value, 0L, 100L);
      }
      v.speculation = static_cast<int>(value);
    } else {
      out.warnings.push_back({ParseWarningKind::SpeculationMissing, def.title(), ""});
    }
    found[it->second] = std::move(v);
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (!found[i]) throw Error(Errc::MissingTitle, expected[i].title());
    out.entries.push_back(std::move(*found[i]));
  }
  return out;
}

std::string render_answer(const FeatureValue& v) {
  return "**title: " + v.title + "**\n**explanation: " + v.explanation + "**\n**symbol: " + v.symbol +
         ")**\n**category: " + v.category + "**\n**speculation: " + std::to_string(v.speculation) + "**\n";
}

std::string_view to_string(SpeculationBand band) {
  switch (band) {
    case SpeculationBand::Low: return "Low";
    case SpeculationBand::ModerateLow: return "Moderate-low";
    case SpeculationBand::Moderate: return "Moderate";
    case SpeculationBand::ModerateHigh: return "Moderate-high";
    case SpeculationBand::High: return "High";
  }
  return "Unknown";
}

SpeculationBand speculation_band(int score) {
  if (score < 0 || score > 100) throw Error(Errc::OutOfRange, "speculation score " + std::to_string(score));
  if (score <= 20) return SpeculationBand::Low;
  if (score <= 40) return SpeculationBand::ModerateLow;
  if (score <= 60) return SpeculationBand::Moderate;
  if (score <= 80) return SpeculationBand::ModerateHigh;
  return SpeculationBand::High;
}

bool is_highly_speculative(const SiliconResponse& response, const std::set<std::string>& relevant_titles,
                           int threshold) {
  bool high = false;
  for (const auto& title : relevant_titles) {
    auto it = response.values.find(title);
    if (it == response.values.end()) throw Error(Errc::MissingTitle, title);
    high = high || it->second.speculation > threshold;
  }
  return high;
}

std::string_view to_string(PromptStrategy s) {
  switch (s) {
    case PromptStrategy::MinimallyInformative: return "minimal";
    case PromptStrategy::ModeratelyInformative: return "moderate";
    case PromptStrategy::HighlyInformative: return "high";
    case PromptStrategy::JointSociodemographic: return "joint";
  }
  return "unknown";
}

std::string strategy_prompt(PromptStrategy strategy, const Mould& mould, const FeatureDef& vote,
                            const std::vector<FeatureDef>& demographics, const std::optional<FeatureDef>& state_vote,
                            const std::string& background, const PromptOptions& options) {
  auto render = [&](const std::string& bg, const std::vector<FeatureDef>& ordered) {
    return assemble_prompt(prompt_sections(bg, mould, ordered, options.include_speculation), options.layout);
  };
  switch (strategy) {
    case PromptStrategy::MinimallyInformative:
      return render("", {vote});
    case PromptStrategy::ModeratelyInformative:
      if (!state_vote) throw Error(Errc::MissingStateFeatures, vote.title());
      return render("", {*state_vote});
    case PromptStrategy::HighlyInformative:
      if (!state_vote) throw Error(Errc::MissingStateFeatures, vote.title());
      if (background.empty()) throw Error(Errc::MissingBackground, vote.title());
      return render(background, {*state_vote});
    case PromptStrategy::JointSociodemographic: {
      auto ordered = order_features(demographics, options.randomize_order, options.seed);
      ordered.push_back(vote);
      return render("", ordered);
    }
  }
  throw Error(Errc::InvalidArgument, "unknown strategy");
}

std::string majority_vote(const std::vector<std::string>& votes, std::uint64_t seed) {
  if (votes.empty()) throw Error(Errc::InvalidArgument, "no votes");
  std::map<std::string, int> tally;
  for (const auto& v : votes) ++tally[v];
  int best = 0;
  for (const auto& [v, n] : tally) best = std::max(best, n);
  std::vector<std::string> leaders;
  for (const auto& [v, n] : tally)
    if (n == best) leaders.push_back(v);
  if (leaders.size() == 1) return leaders.front();
  auto rng = make_rng(seed, {"majority-vote"});
  return leaders[static_cast<std::size_t>(uniform01(rng) * leaders.size())];
}

const FeatureOption* option_extending(const FeatureDef& def, std::string_view base) {
  if (const auto* exact = def.find_category(base)) return exact;
  auto key = normalize(base);
  for (const auto& o : def.options()) {
    auto cat = normalize(o.category);
    if (cat.size() > key.size() && cat.compare(0, key.size(), key) == 0 &&
        (cat[key.size()] == ' ' || cat[key.size()] == ','))
      return &o;
  }
  return nullptr;
}

}  // namespace possum
