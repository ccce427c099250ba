#include "astrack/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "astrack/io.hpp"

namespace astrack {

namespace {

std::string_view trim(std::string_view s) {
    size_t begin = 0;
    size_t end = s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
    return s.substr(begin, end - begin);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    size_t start = 0;
    while (true) {
        size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.push_back(s.substr(start));
            break;
        }
        parts.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

[[noreturn]] void fail_line(int line_no, const std::string& what) {
    if (line_no >= 1) {
        throw ValidationError("line " + std::to_string(line_no) + ": " + what);
    }
    throw ValidationError(what);
}

} // namespace

std::string serialize_step(const ActionStep& step) {
    if (step.values.empty()) {
        return step.name;
    }
    std::string out = step.name;
    out += " [";
    for (size_t i = 0; i < step.values.size(); ++i) {
        if (i > 0) out += ", ";
        out += step.values[i];
    }
    out += "]";
    return out;
}

std::string format_action_sequence(std::span<const ActionStep> steps) {
    std::string out;
    for (size_t i = 0; i < steps.size(); ++i) {
        if (i > 0) out += "; ";
        out += serialize_step(steps[i]);
    }
    return out;
}

std::vector<ActionStep> parse_action_string(std::string_view text) {
    std::vector<ActionStep> steps;
    if (trim(text).empty()) {
        return steps;
    }
    for (std::string_view raw : split(text, ';')) {
        std::string_view segment = trim(raw);
        if (segment.empty()) {
            throw ParseError("empty action name in segment \"" + std::string(raw) + "\"");
        }
        size_t open = segment.find('[');
        if (open == std::string_view::npos) {
            if (segment.find(']') != std::string_view::npos) {
                throw ParseError("unbalanced bracket in segment \"" + std::string(segment) + "\"");
            }
            steps.push_back(ActionStep{std::string(segment), {}});
            continue;
        }
        if (segment.back() != ']') {
            throw ParseError("unbalanced bracket in segment \"" + std::string(segment) + "\"");
        }
        std::string_view inner = segment.substr(open + 1, segment.size() - open - 2);
        if (inner.find('[') != std::string_view::npos ||
            inner.find(']') != std::string_view::npos) {
            throw ParseError("unbalanced bracket in segment \"" + std::string(segment) + "\"");
        }
        std::string_view name = trim(segment.substr(0, open));
        if (name.empty()) {
            throw ParseError("empty action name in segment \"" + std::string(segment) + "\"");
        }
        ActionStep step{std::string(name), {}};
        if (!trim(inner).empty()) {
            for (std::string_view value : split(inner, ',')) {
                std::string_view trimmed = trim(value);
                if (!trimmed.empty()) {
                    step.values.emplace_back(trimmed);
                }
            }
        }
        steps.push_back(std::move(step));
    }
    return steps;
}

void validate_action_step(const ActionStep& step) {
    if (step.name.empty() || trim(step.name).size() != step.name.size()) {
        throw ValidationError("action name must be non-empty and trimmed: \"" + step.name + "\"");
    }
    if (step.name.find_first_of(";[]") != std::string::npos) {
        throw ValidationError("action name contains a reserved character: \"" + step.name + "\"");
    }
    for (const std::string& value : step.values) {
        if (value.empty() || trim(value).size() != value.size()) {
            throw ValidationError("action value must be non-empty and trimmed in \"" +
                                  step.name + "\"");
        }
        if (value.find_first_of(";[],") != std::string::npos) {
            throw ValidationError("action value contains a reserved character: \"" + value + "\"");
        }
    }
}

std::string_view to_string(TurnKind kind) {
    switch (kind) {
    case TurnKind::User: return "user";
    case TurnKind::System: return "system";
    case TurnKind::Action: return "action";
    }
    return "user";
}

TurnKind turn_kind_from_string(std::string_view s) {
    if (s == "user") return TurnKind::User;
    if (s == "system") return TurnKind::System;
    if (s == "action") return TurnKind::Action;
    throw ValidationError("unknown turn kind \"" + std::string(s) + "\"");
}

std::vector<ActionStep> Dialogue::workflow() const {
    std::vector<ActionStep> actions;
    for (const Turn& turn : turns) {
        if (turn.is_action()) actions.push_back(turn.action);
    }
    return actions;
}

std::vector<int> Dialogue::action_turn_indices() const {
    std::vector<int> indices;
    for (const Turn& turn : turns) {
        if (turn.is_action()) indices.push_back(turn.index);
    }
    return indices;
}

int Dialogue::action_count() const {
    return static_cast<int>(std::count_if(turns.begin(), turns.end(),
                                          [](const Turn& t) { return t.is_action(); }));
}

int Dialogue::utterance_count() const {
    return static_cast<int>(turns.size()) - action_count();
}

ContextSplit split_at_action(const Dialogue& dialogue, int k) {
    std::vector<int> action_indices = dialogue.action_turn_indices();
    int n = static_cast<int>(action_indices.size());
    if (k < 0 || k > n) {
        throw ValidationError("split point k=" + std::to_string(k) +
                              " out of range [0, " + std::to_string(n) + "] for dialogue \"" +
                              dialogue.id + "\"");
    }
    ContextSplit out;
    out.dialogue_id = dialogue.id;
    out.k = k;
    // Context ends just after the k-th action turn; for k=0 it ends just
    // before the first action (or spans the whole dialogue if there is none).
    int boundary; // first turn index of the remainder
    if (k == 0) {
        boundary = n == 0 ? static_cast<int>(dialogue.turns.size()) : action_indices[0];
    } else {
        boundary = action_indices[k - 1] + 1;
        out.last_action = dialogue.turns[action_indices[k - 1]].action;
    }
    for (const Turn& turn : dialogue.turns) {
        if (turn.index < boundary) {
            out.context.push_back(turn);
        } else if (turn.is_action()) {
            out.future_actions.push_back(turn.action);
        }
    }
    return out;
}

StatTargets export_stat_targets(const Dialogue& dialogue, int k) {
    ContextSplit split = split_at_action(dialogue, k);
    StatTargets targets;
    if (dialogue.success.has_value()) {
        targets.success = *dialogue.success ? 1 : 0;
    }
    size_t total = dialogue.turns.size();
    targets.fraction_complete =
        total == 0 ? 1.0 : static_cast<double>(split.context.size()) / static_cast<double>(total);
    for (size_t i = split.context.size(); i < total; ++i) {
        const Turn& turn = dialogue.turns[i];
        if (turn.kind == TurnKind::User) {
            ++targets.remaining_user_utterances;
        } else if (turn.kind == TurnKind::System) {
            ++targets.remaining_system_utterances;
        }
    }
    targets.remaining_utterances =
        targets.remaining_user_utterances + targets.remaining_system_utterances;
    return targets;
}

nlohmann::json stat_targets_to_json(const StatTargets& targets) {
    nlohmann::json object;
    object["success"] =
        targets.success.has_value() ? nlohmann::json(*targets.success) : nlohmann::json(nullptr);
    object["fraction_complete"] = targets.fraction_complete;
    object["remaining_utterances"] = targets.remaining_utterances;
    object["remaining_user_utterances"] = targets.remaining_user_utterances;
    object["remaining_system_utterances"] = targets.remaining_system_utterances;
    return object;
}

nlohmann::json dialogue_to_json(const Dialogue& dialogue) {
    nlohmann::json object;
    object["id"] = dialogue.id;
    object["policy"] = dialogue.policy;
    object["success"] =
        dialogue.success.has_value() ? nlohmann::json(*dialogue.success) : nlohmann::json(nullptr);
    nlohmann::json turns = nlohmann::json::array();
    for (const Turn& turn : dialogue.turns) {
        nlohmann::json t;
        t["kind"] = std::string(to_string(turn.kind));
        if (turn.is_action()) {
            t["action"] = {{"name", turn.action.name}, {"values", turn.action.values}};
        } else {
            t["text"] = turn.text;
        }
        turns.push_back(std::move(t));
    }
    object["turns"] = std::move(turns);
    return object;
}

Dialogue dialogue_from_json(const nlohmann::json& object, int line_no) {
    if (!object.is_object()) fail_line(line_no, "dialogue must be a JSON object");
    Dialogue dialogue;
    if (!object.contains("id") || !object["id"].is_string()) {
        fail_line(line_no, "missing or non-string field \"id\"");
    }
    dialogue.id = object["id"].get<std::string>();
    if (!object.contains("policy") || !object["policy"].is_string()) {
        fail_line(line_no, "missing or non-string field \"policy\"");
    }
    dialogue.policy = object["policy"].get<std::string>();
    if (object.contains("success") && !object["success"].is_null()) {
        if (!object["success"].is_boolean()) {
            fail_line(line_no, "field \"success\" must be boolean or null");
        }
        dialogue.success = object["success"].get<bool>();
    }
    if (!object.contains("turns") || !object["turns"].is_array()) {
        fail_line(line_no, "missing or non-array field \"turns\"");
    }
    int index = 0;
    for (const nlohmann::json& t : object["turns"]) {
        if (!t.is_object() || !t.contains("kind") || !t["kind"].is_string()) {
            fail_line(line_no, "turn " + std::to_string(index) +
                                   ": missing or non-string field \"kind\"");
        }
        Turn turn;
        try {
            turn.kind = turn_kind_from_string(t["kind"].get<std::string>());
        } catch (const ValidationError& e) {
            fail_line(line_no, std::string(e.what()) + " at turn " + std::to_string(index));
        }
        turn.index = index;
        if (turn.is_action()) {
            if (t.contains("text")) {
                fail_line(line_no, "turn " + std::to_string(index) +
                                       ": action turn must not carry \"text\"");
            }
            if (!t.contains("action") || !t["action"].is_object()) {
                fail_line(line_no, "turn " + std::to_string(index) +
                                       ": missing or non-object field \"action\"");
            }
            const nlohmann::json& a = t["action"];
            if (!a.contains("name") || !a["name"].is_string()) {
                fail_line(line_no, "turn " + std::to_string(index) +
                                       ": missing or non-string field \"action.name\"");
            }
            turn.action.name = a["name"].get<std::string>();
            if (a.contains("values")) {
                if (!a["values"].is_array()) {
                    fail_line(line_no, "turn " + std::to_string(index) +
                                           ": field \"action.values\" must be an array");
                }
                for (const nlohmann::json& v : a["values"]) {
                    if (!v.is_string()) {
                        fail_line(line_no, "turn " + std::to_string(index) +
                                               ": action values must be strings");
                    }
                    // Values are trimmed on load; "," is the value separator
                    // and may not appear inside a value.
                    turn.action.values.emplace_back(trim(v.get<std::string>()));
                }
            }
            try {
                validate_action_step(turn.action);
            } catch (const ValidationError& e) {
                fail_line(line_no, "turn " + std::to_string(index) + ": " + e.what());
            }
        } else {
            if (t.contains("action")) {
                fail_line(line_no, "turn " + std::to_string(index) +
                                       ": utterance turn must not carry \"action\"");
            }
            if (!t.contains("text") || !t["text"].is_string()) {
                fail_line(line_no, "turn " + std::to_string(index) +
                                       ": missing or non-string field \"text\"");
            }
            turn.text = t["text"].get<std::string>();
        }
        dialogue.turns.push_back(std::move(turn));
        ++index;
    }
    return dialogue;
}

std::vector<Dialogue> load_corpus(const std::string& path, const std::string& format) {
    if (format != "jsonl-v1") {
        throw ValidationError("unknown corpus format \"" + format + "\" (expected \"jsonl-v1\")");
    }
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open corpus file \"" + path + "\"");
    }
    std::vector<Dialogue> dialogues;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json object;
        try {
            object = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail_line(line_no, std::string("malformed JSON: ") + e.what());
        }
        dialogues.push_back(dialogue_from_json(object, line_no));
    }
    return dialogues;
}

void save_corpus(std::span<const Dialogue> dialogues, const std::string& path) {
    std::ostringstream out;
    for (const Dialogue& dialogue : dialogues) {
        out << dialogue_to_json(dialogue).dump() << '\n';
    }
    write_file_atomic(path, out.str());
}

} // namespace astrack
