// Prompt listings reproduced verbatim; tests compare them byte for byte.
#include "possum/prompts.hpp"

namespace possum {

const std::string kEntityPrompt = R"PROMPT(Is this the account of a real-life existing Person, or of another kind of entity ? 
Respond either with "P" for Person or "O" for Other.)PROMPT";

const std::string kGeoPrompt = R"PROMPT(Which state of the USA do they live in?
If they do not specify a state, but are still from the United States, write "USA".
If they are not from a state in the USA, write "Not from a state in the USA".
Write out just the full name of the state.
If they are from the District of Columbia, also known as Washington D.C., write "District of Columbia".)PROMPT";

const std::string kSpeculationModule = R"PROMPT(For each selected symbol / category, please note the level of Speculation involved in this selection.
Present the Speculation level for each selection on a scale from 0 (not speculative at all, every single element of the user data was useful in the selection) to 100 (fully speculative, there is no information related to this title in the user data).
Speculation levels should be a direct measure of the amount of useful information available in the user data.
Speculation levels pertain only to the information available in the user data -- namely the username, name, description, location, profile picture and tweets from this user -- and should not be affected by additional information available to you from any other source. 
To ensure consistency, use the following guidelines to determine speculation levels:

0-20 (Low speculation): The user data provides clear and direct information relevant to the title. (e.g., explicit mention in the profile or tweets)
21-40 (Moderate-low speculation): The user data provides indirect but strong indicators relevant to the title. (e.g., context from multiple sources within the profile or tweets)
41-60 (Moderate speculation): The user data provides some hints or partial information relevant to the title. (e.g., inferred from user interests or indirect references)
61-80 (Moderate-high speculation): The user data provides limited and weak indicators relevant to the title. (e.g., very subtle hints or minimal context)
81-100 (High speculation): The user data provides no or almost no information relevant to the title. (e.g., assumptions based on very general information)

For each selected category, please explain at length what features of the data contributed to your choice and your speculation level.)PROMPT";

const std::string kFeatureListIntro = R"PROMPT(Below is the list of categories to which this user may belong to: )PROMPT";

const std::string kBuilderMarker = "please complete the following set of questions and their options.";

namespace detail {

extern const std::string kBuilderInstructions = R"PROMPT(Based on what you know of the candidates in the 2020 Presidential election held in this state on November 3, 2020, please complete the following set of questions and their options.

If there are no candidates for the given party, remove the option related to the given party entirely -- do not present that party's option at all.
If there is more than one candidate for a single party, write out each option in two separate lines, and assign a different symbol for the identifier to each.

Below is the set of questions and options for you to complete - your job is to replace the instances wrapped in <...> with the correct knowledge for this state.
Do not produce any other text beyond the completed set of questions.)PROMPT";

extern const std::string kInstructionsHead = R"PROMPT(I will show you a number of categories to which this user may belong to.
The categories are preceded by a title (e.g. "AGE:" or "SEX:" etc.) and a symbol (e.g. "A1", "A2" or "E" etc.).
Please select, for each title, the most likely category to which this user belongs to.

In your answer present, for each title, the selected symbol. Write out in full the category associated with the selected symbol. The chosen symbol / category must be the most likely to accurately represent this user. You must only select one symbol / category per title. A title, symbol and category cannot appear more than once in your answer.
)PROMPT";

extern const std::string kInstructionsFormat = R"PROMPT(Preserve a strictly structured answer to ease parsing of the text. Format your output as follows (this is just an example, I do not care about this specific title or symbol / category):

**title: AGE**
**explanation: ...**
**symbol: A1)**
**category: 18-25**
)PROMPT";

extern const std::string kSpeculationFormatLine = "**speculation: 90**\n";

extern const std::string kInstructionsTail = R"PROMPT(
YOU MUST GIVE AN ANSWER FOR EVERY TITLE !
)PROMPT";

}  // namespace detail

}  // namespace possum
