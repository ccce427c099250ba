#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "astrack/errors.hpp"

namespace astrack {

/// One workflow action: a name plus ordered slot values.
///
/// Reserved characters: ";" separates actions, "[" / "]" delimit the value
/// list, and "," separates values. Names must not contain ";", "[" or "]";
/// values must not contain ";", "[", "]" or ",".
struct ActionStep {
    std::string name;
    std::vector<std::string> values;

    bool operator==(const ActionStep&) const = default;
};

/// Renders one step as `name` (no values) or `name [v1, v2]`.
std::string serialize_step(const ActionStep& step);

/// Renders a sequence as `step; step; step`. Inverse of parse_action_string.
std::string format_action_sequence(std::span<const ActionStep> steps);

/// Parses `a [v1, v2]; b; c [x]` into steps. Whitespace around names and
/// values is trimmed; an empty bracket pair and blank value tokens yield no
/// values. Throws ParseError on unbalanced brackets or an empty action name,
/// naming the offending segment.
std::vector<ActionStep> parse_action_string(std::string_view text);

/// Throws ValidationError when the step violates the reserved-character
/// rules or carries blank/untrimmed values (those cannot survive a
/// format/parse round trip).
void validate_action_step(const ActionStep& step);

enum class TurnKind { User, System, Action };

std::string_view to_string(TurnKind kind);
TurnKind turn_kind_from_string(std::string_view s);

struct Turn {
    TurnKind kind = TurnKind::User;
    std::string text;  // meaningful for user/system turns
    ActionStep action; // meaningful for action turns
    int index = 0;     // 0-based position within the dialogue

    bool is_action() const { return kind == TurnKind::Action; }
    bool is_utterance() const { return !is_action(); }
};

struct Dialogue {
    std::string id;
    std::string policy;
    std::optional<bool> success;
    std::vector<Turn> turns;

    /// The workflow: all action turns, in order.
    std::vector<ActionStep> workflow() const;
    std::vector<int> action_turn_indices() const;
    int action_count() const;
    int utterance_count() const;
};

/// A dialogue cut immediately after its k-th action turn (k=0 cuts before
/// the first action). `future_actions` are the action turns of the
/// remainder; `last_action` is the k-th action when k >= 1.
struct ContextSplit {
    std::string dialogue_id;
    int k = 0;
    std::vector<Turn> context;
    std::vector<ActionStep> future_actions;
    std::optional<ActionStep> last_action;
};

/// Valid k range is [0, action_count]; out of range throws ValidationError.
ContextSplit split_at_action(const Dialogue& dialogue, int k);

/// Regression targets computed at a split point (success, completion
/// fraction, remaining-utterance counts by speaker).
struct StatTargets {
    std::optional<int> success;
    double fraction_complete = 0.0;
    int remaining_utterances = 0;
    int remaining_user_utterances = 0;
    int remaining_system_utterances = 0;
};

StatTargets export_stat_targets(const Dialogue& dialogue, int k);
nlohmann::json stat_targets_to_json(const StatTargets& targets);

/// Reads a jsonl-v1 corpus: one dialogue object per line. Blank lines are
/// skipped. Throws ValidationError naming the line and field on any schema
/// violation. `format` must be "jsonl-v1".
std::vector<Dialogue> load_corpus(const std::string& path,
                                  const std::string& format = "jsonl-v1");

/// Writes the corpus in canonical jsonl-v1 form (sorted keys, one line per
/// dialogue). Output is byte-stable for a given input.
void save_corpus(std::span<const Dialogue> dialogues, const std::string& path);

nlohmann::json dialogue_to_json(const Dialogue& dialogue);

/// `line_no` (1-based) is included in error messages when >= 1.
Dialogue dialogue_from_json(const nlohmann::json& object, int line_no = -1);

} // namespace astrack
