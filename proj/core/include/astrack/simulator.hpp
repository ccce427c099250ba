#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "astrack/corpus.hpp"
#include "astrack/predictors.hpp"

namespace astrack {

/// One-step assistance suggests the single next action after every executed
/// action; multi-step assistance shows whole remaining sequences and
/// re-prompts once the approved prefix is exhausted.
enum class AssistMode { OneStep, MultiStep };

std::string_view to_string(AssistMode mode);
AssistMode assist_mode_from_string(std::string_view s);

struct SimulationConfig {
    AssistMode mode = AssistMode::OneStep;
    /// Approve a suggestion only when the full step (name and values)
    /// matches the ground truth; false relaxes to the action name.
    bool joint_approval = true;
    /// Report percentage aggregates as the mean of per-conversation ratios
    /// (macro) or as pooled counts (micro).
    bool micro_average = false;
    int jobs = 1;
};

struct ConversationRecord {
    std::string dialogue_id;
    int suggestions = 0;
    int steps_automated = 0;
    int total_steps = 0;
    int utterances_automated = 0;
    int total_utterances = 0;
};

struct SimulationReport {
    AssistMode mode = AssistMode::OneStep;
    int conversations = 0;
    int failures = 0;
    double avg_suggestions = 0.0;
    double pct_steps_automated = 0.0;      // in [0, 100]
    double pct_utterances_automated = 0.0; // in [0, 100]
    std::vector<ConversationRecord> records;
};

/// Utterance turn indices attributed to action `ordinal`: everything
/// strictly after the previous action turn (or the conversation start) up to
/// the action's own turn. Trailing utterances after the last action belong
/// to no action and are never automated.
std::set<int> utterance_span(const Dialogue& dialogue, int ordinal);

/// Suggest the next action at every k = 0..N-1; a suggestion whose first
/// top-1 step matches the true next action automates that step and its
/// utterance span. Context always advances along the ground truth.
/// Suggestions shown = N.
ConversationRecord simulate_one_step(const Predictor& predictor, const Dialogue& dialogue,
                                     bool joint_approval = true);

/// Show the whole predicted remainder, approve its longest exactly-matching
/// prefix, advance past it and re-prompt. A zero-length prefix means the
/// agent performs the next true action manually (not automated) before the
/// next call. Stops when the workflow completes or after N calls.
ConversationRecord simulate_multi_step(const Predictor& predictor, const Dialogue& dialogue,
                                       bool joint_approval = true);

/// Runs the configured mode over every dialogue with at least one action.
/// Predictor failures exclude the conversation and are counted; all
/// conversations failing is an error.
SimulationReport run_simulation(const SimulationConfig& config, const Predictor& predictor,
                                std::span<const Dialogue> dialogues);

nlohmann::json simulation_to_json(const SimulationReport& report);
std::string simulation_to_csv(const SimulationReport& report);

/// Plain-text table with one row per report: average suggestions, % steps
/// automated, % utterances automated.
std::string simulation_table(std::span<const SimulationReport> reports);

} // namespace astrack
