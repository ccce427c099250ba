#include "astrack/simulator.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <thread>

#include "astrack/action_graph.hpp"

namespace astrack {

std::string_view to_string(AssistMode mode) {
    return mode == AssistMode::OneStep ? "one-step" : "multi-step";
}

AssistMode assist_mode_from_string(std::string_view s) {
    if (s == "one-step") return AssistMode::OneStep;
    if (s == "multi-step") return AssistMode::MultiStep;
    throw ValidationError("unknown assist mode \"" + std::string(s) +
                          "\" (expected one-step or multi-step)");
}

std::set<int> utterance_span(const Dialogue& dialogue, int ordinal) {
    std::vector<int> action_indices = dialogue.action_turn_indices();
    int n = static_cast<int>(action_indices.size());
    if (ordinal < 0 || ordinal >= n) {
        throw ValidationError("action ordinal " + std::to_string(ordinal) +
                              " out of range for dialogue \"" + dialogue.id + "\"");
    }
    int lower = ordinal == 0 ? -1 : action_indices[ordinal - 1];
    int upper = action_indices[ordinal];
    std::set<int> span;
    for (int index = lower + 1; index < upper; ++index) {
        if (dialogue.turns[static_cast<size_t>(index)].is_utterance()) {
            span.insert(index);
        }
    }
    return span;
}

namespace {

std::string approval_key(const ActionStep& step, bool joint_approval) {
    return joint_approval ? serialize_step(step) : step.name;
}

ConversationRecord base_record(const Dialogue& dialogue) {
    ConversationRecord record;
    record.dialogue_id = dialogue.id;
    record.total_steps = dialogue.action_count();
    record.total_utterances = dialogue.utterance_count();
    return record;
}

void add_automated_spans(const Dialogue& dialogue, const std::set<int>& ordinals,
                         ConversationRecord& record) {
    std::set<int> automated_turns;
    for (int ordinal : ordinals) {
        std::set<int> span = utterance_span(dialogue, ordinal);
        automated_turns.insert(span.begin(), span.end());
    }
    record.utterances_automated = static_cast<int>(automated_turns.size());
}

} // namespace

ConversationRecord simulate_one_step(const Predictor& predictor, const Dialogue& dialogue,
                                     bool joint_approval) {
    int n = dialogue.action_count();
    if (n < 1) {
        throw ValidationError("cannot simulate dialogue \"" + dialogue.id + "\" with no actions");
    }
    ConversationRecord record = base_record(dialogue);
    std::set<int> automated_ordinals;
    for (int k = 0; k < n; ++k) {
        ContextSplit split = split_at_action(dialogue, k);
        PredictionGraph graph = predictor.predict(split, dialogue.policy);
        std::vector<ActionStep> suggestion = top1_sequence(graph);
        ++record.suggestions;
        if (!suggestion.empty() &&
            approval_key(suggestion.front(), joint_approval) ==
                approval_key(split.future_actions.front(), joint_approval)) {
            ++record.steps_automated;
            automated_ordinals.insert(k);
        }
    }
    add_automated_spans(dialogue, automated_ordinals, record);
    return record;
}

ConversationRecord simulate_multi_step(const Predictor& predictor, const Dialogue& dialogue,
                                       bool joint_approval) {
    int n = dialogue.action_count();
    if (n < 1) {
        throw ValidationError("cannot simulate dialogue \"" + dialogue.id + "\" with no actions");
    }
    ConversationRecord record = base_record(dialogue);
    std::set<int> automated_ordinals;
    int k = 0;
    while (k < n && record.suggestions < n) {
        ContextSplit split = split_at_action(dialogue, k);
        PredictionGraph graph = predictor.predict(split, dialogue.policy);
        std::vector<ActionStep> suggestion = top1_sequence(graph);
        ++record.suggestions;
        size_t limit = std::min(suggestion.size(), split.future_actions.size());
        int approved = 0;
        while (static_cast<size_t>(approved) < limit &&
               approval_key(suggestion[static_cast<size_t>(approved)], joint_approval) ==
                   approval_key(split.future_actions[static_cast<size_t>(approved)],
                                joint_approval)) {
            ++approved;
        }
        if (approved > 0) {
            for (int i = 0; i < approved; ++i) {
                automated_ordinals.insert(k + i);
            }
            record.steps_automated += approved;
            k += approved;
        } else {
            // Nothing usable: the agent performs the next true action by
            // hand, which guarantees one unit of progress per call.
            k += 1;
        }
    }
    add_automated_spans(dialogue, automated_ordinals, record);
    return record;
}

SimulationReport run_simulation(const SimulationConfig& config, const Predictor& predictor,
                                std::span<const Dialogue> dialogues) {
    std::vector<const Dialogue*> eligible;
    for (const Dialogue& dialogue : dialogues) {
        if (dialogue.action_count() >= 1) eligible.push_back(&dialogue);
    }
    if (eligible.empty()) {
        throw ValidationError("no dialogue with at least one action to simulate");
    }

    std::vector<ConversationRecord> records(eligible.size());
    std::vector<char> failed(eligible.size(), 0);
    auto worker = [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            try {
                records[i] = config.mode == AssistMode::OneStep
                                 ? simulate_one_step(predictor, *eligible[i],
                                                     config.joint_approval)
                                 : simulate_multi_step(predictor, *eligible[i],
                                                       config.joint_approval);
            } catch (const std::exception&) {
                failed[i] = 1;
            }
        }
    };
    int jobs = std::max(1, config.jobs);
    if (jobs == 1 || eligible.size() < 2) {
        worker(0, eligible.size());
    } else {
        size_t n_threads = std::min<size_t>(static_cast<size_t>(jobs), eligible.size());
        std::vector<std::thread> threads;
        size_t chunk = (eligible.size() + n_threads - 1) / n_threads;
        for (size_t t = 0; t < n_threads; ++t) {
            size_t begin = t * chunk;
            size_t end = std::min(eligible.size(), begin + chunk);
            if (begin < end) threads.emplace_back(worker, begin, end);
        }
        for (std::thread& thread : threads) thread.join();
    }

    SimulationReport report;
    report.mode = config.mode;
    long pooled_steps = 0, pooled_steps_total = 0;
    long pooled_utterances = 0, pooled_utterances_total = 0;
    double sum_suggestions = 0.0, sum_step_ratio = 0.0, sum_utterance_ratio = 0.0;
    for (size_t i = 0; i < records.size(); ++i) {
        if (failed[i]) {
            ++report.failures;
            continue;
        }
        const ConversationRecord& record = records[i];
        ++report.conversations;
        sum_suggestions += record.suggestions;
        sum_step_ratio += static_cast<double>(record.steps_automated) /
                          static_cast<double>(record.total_steps);
        // A conversation without utterances has nothing left to automate;
        // count it as fully automated rather than dividing by zero.
        sum_utterance_ratio +=
            record.total_utterances == 0
                ? 1.0
                : static_cast<double>(record.utterances_automated) /
                      static_cast<double>(record.total_utterances);
        pooled_steps += record.steps_automated;
        pooled_steps_total += record.total_steps;
        pooled_utterances += record.utterances_automated;
        pooled_utterances_total += record.total_utterances;
        report.records.push_back(record);
    }
    if (report.conversations == 0) {
        throw Error("every conversation failed during simulation");
    }
    auto count = static_cast<double>(report.conversations);
    report.avg_suggestions = sum_suggestions / count;
    if (config.micro_average) {
        report.pct_steps_automated =
            100.0 * static_cast<double>(pooled_steps) / static_cast<double>(pooled_steps_total);
        report.pct_utterances_automated =
            pooled_utterances_total == 0
                ? 100.0
                : 100.0 * static_cast<double>(pooled_utterances) /
                      static_cast<double>(pooled_utterances_total);
    } else {
        report.pct_steps_automated = 100.0 * sum_step_ratio / count;
        report.pct_utterances_automated = 100.0 * sum_utterance_ratio / count;
    }
    return report;
}

nlohmann::json simulation_to_json(const SimulationReport& report) {
    nlohmann::json conversations = nlohmann::json::array();
    for (const ConversationRecord& record : report.records) {
        conversations.push_back({
            {"dialogue_id", record.dialogue_id},
            {"suggestions", record.suggestions},
            {"steps_automated", record.steps_automated},
            {"total_steps", record.total_steps},
            {"utterances_automated", record.utterances_automated},
            {"total_utterances", record.total_utterances},
        });
    }
    return nlohmann::json{
        {"mode", std::string(to_string(report.mode))},
        {"conversations", report.conversations},
        {"failures", report.failures},
        {"avg_suggestions", report.avg_suggestions},
        {"pct_steps_automated", report.pct_steps_automated},
        {"pct_utterances_automated", report.pct_utterances_automated},
        {"per_conversation", std::move(conversations)},
    };
}

std::string simulation_to_csv(const SimulationReport& report) {
    std::ostringstream out;
    out << "dialogue_id,suggestions,steps_automated,total_steps,utterances_automated,"
           "total_utterances\n";
    for (const ConversationRecord& record : report.records) {
        out << record.dialogue_id << ',' << record.suggestions << ',' << record.steps_automated
            << ',' << record.total_steps << ',' << record.utterances_automated << ','
            << record.total_utterances << '\n';
    }
    return out.str();
}

std::string simulation_table(std::span<const SimulationReport> reports) {
    std::ostringstream out;
    out << std::left << std::setw(12) << "Mode" << std::right << std::setw(18)
        << "Avg #suggestions" << std::setw(18) << "% Steps autom." << std::setw(22)
        << "% Utterances autom." << '\n';
    out << std::fixed << std::setprecision(2);
    for (const SimulationReport& report : reports) {
        out << std::left << std::setw(12) << to_string(report.mode) << std::right
            << std::setw(18) << report.avg_suggestions << std::setw(18)
            << report.pct_steps_automated << std::setw(22) << report.pct_utterances_automated
            << '\n';
    }
    return out.str();
}

} // namespace astrack
