#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "astrack/corpus.hpp"

namespace testutil {

inline std::string data_path(const std::string& name) {
    return std::string(ASTRACK_TEST_DATA_DIR) + "/" + name;
}

/// Unique scratch directory, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    TempDir() {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("astrack_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline const std::vector<std::string>& action_alphabet() {
    static const std::vector<std::string> names = {"open-case", "check-history",
                                                   "verify-account", "close-case"};
    return names;
}

inline const std::vector<std::string>& value_alphabet() {
    static const std::vector<std::string> values = {"alpha", "bravo 7", "charlie-9", "delta"};
    return values;
}

inline astrack::ActionStep random_step(std::mt19937& rng, int max_values = 2) {
    const auto& names = action_alphabet();
    const auto& values = value_alphabet();
    std::uniform_int_distribution<size_t> name_dist(0, names.size() - 1);
    std::uniform_int_distribution<int> count_dist(0, max_values);
    astrack::ActionStep step{names[name_dist(rng)], {}};
    int count = count_dist(rng);
    std::uniform_int_distribution<size_t> value_dist(0, values.size() - 1);
    for (int i = 0; i < count; ++i) {
        step.values.push_back(values[value_dist(rng)]);
    }
    return step;
}

inline std::vector<astrack::ActionStep> random_sequence(std::mt19937& rng, int max_len = 5,
                                                        int max_values = 2) {
    std::uniform_int_distribution<int> len_dist(0, max_len);
    int length = len_dist(rng);
    std::vector<astrack::ActionStep> steps;
    steps.reserve(static_cast<size_t>(length));
    for (int i = 0; i < length; ++i) {
        steps.push_back(random_step(rng, max_values));
    }
    return steps;
}

/// Builds a dialogue from a compact pattern: 'u' user turn, 's' system turn,
/// 'A' action turn consuming the next step from `steps`.
inline astrack::Dialogue make_dialogue(const std::string& id, const std::string& policy,
                                       const std::string& pattern,
                                       std::vector<astrack::ActionStep> steps) {
    astrack::Dialogue dialogue;
    dialogue.id = id;
    dialogue.policy = policy;
    size_t next_step = 0;
    int index = 0;
    for (char c : pattern) {
        astrack::Turn turn;
        turn.index = index++;
        if (c == 'A') {
            turn.kind = astrack::TurnKind::Action;
            turn.action = steps.at(next_step++);
        } else {
            turn.kind = c == 'u' ? astrack::TurnKind::User : astrack::TurnKind::System;
            turn.text = std::string(1, c) + "-turn-" + std::to_string(turn.index);
        }
        dialogue.turns.push_back(std::move(turn));
    }
    return dialogue;
}

} // namespace testutil
