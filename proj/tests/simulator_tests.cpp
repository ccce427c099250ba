#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>

#include "astrack/simulator.hpp"
#include "test_util.hpp"

using namespace astrack;

namespace {

std::vector<Dialogue> eval_corpus() {
    return load_corpus(testutil::data_path("corpus_eval.jsonl"));
}

ReplayPredictor oracle_for(const std::vector<Dialogue>& dialogues) {
    return ReplayPredictor(ReplayStore::from_ground_truth(dialogues), 64);
}

/// Test predictor driven by a (dialogue_id, k) -> sequence table; anything
/// missing predicts a fixed wrong action.
class TablePredictor : public Predictor {
public:
    using Table = std::map<std::pair<std::string, int>, std::vector<ActionStep>>;

    explicit TablePredictor(Table table) : table_(std::move(table)) {}

    PredictionGraph predict(const ContextSplit& split, const std::string&) const override {
        auto it = table_.find({split.dialogue_id, split.k});
        std::vector<ActionStep> rollout =
            it == table_.end() ? std::vector<ActionStep>{{"totally-wrong", {}}} : it->second;
        return aggregate_rollouts(split.last_action, {std::move(rollout)}, 64);
    }

private:
    Table table_;
};

class ThrowingPredictor : public Predictor {
public:
    explicit ThrowingPredictor(std::string fail_id) : fail_id_(std::move(fail_id)) {}

    PredictionGraph predict(const ContextSplit& split, const std::string&) const override {
        if (fail_id_.empty() || split.dialogue_id == fail_id_) throw Error("boom");
        return aggregate_rollouts(split.last_action, {split.future_actions}, 64);
    }

private:
    std::string fail_id_;
};

} // namespace

TEST_CASE("utterance_span attributes the lead-up to each action") {
    // turns: u A s B u  ->  span(A) = {0}, span(B) = {2}; turn 4 is trailing.
    Dialogue d = testutil::make_dialogue("d", "p", "uAsAu", {{"A", {}}, {"B", {}}});
    CHECK(utterance_span(d, 0) == std::set<int>{0});
    CHECK(utterance_span(d, 1) == std::set<int>{2});
    CHECK_THROWS_AS(utterance_span(d, 2), ValidationError);
    CHECK_THROWS_AS(utterance_span(d, -1), ValidationError);

    SUBCASE("an opening action has an empty span") {
        Dialogue opens = testutil::make_dialogue("d2", "p", "Au", {{"A", {}}});
        CHECK(utterance_span(opens, 0).empty());
    }
    SUBCASE("consecutive actions have empty later spans") {
        Dialogue packed = testutil::make_dialogue("d3", "p", "uAA", {{"A", {}}, {"B", {}}});
        CHECK(utterance_span(packed, 0) == std::set<int>{0});
        CHECK(utterance_span(packed, 1).empty());
    }
}

TEST_CASE("one-step simulation suggests at every action ordinal") {
    auto dialogues = eval_corpus();
    const Dialogue& e1 = dialogues[0]; // 3 actions, 4 utterances, 1 trailing

    SUBCASE("the oracle automates everything spanned") {
        auto oracle = oracle_for(dialogues);
        ConversationRecord record = simulate_one_step(oracle, e1);
        CHECK(record.suggestions == 3);
        CHECK(record.steps_automated == 3);
        CHECK(record.total_steps == 3);
        CHECK(record.total_utterances == 4);
        CHECK(record.utterances_automated == 3); // trailing system turn stays manual
    }
    SUBCASE("an always-wrong predictor automates nothing") {
        TablePredictor wrong({});
        ConversationRecord record = simulate_one_step(wrong, e1);
        CHECK(record.suggestions == 3);
        CHECK(record.steps_automated == 0);
        CHECK(record.utterances_automated == 0);
    }
    SUBCASE("correct on exactly the first action of a two-action dialogue") {
        const Dialogue& e2 = dialogues[1];
        TablePredictor partial({{{"e-2", 0}, {{"pull-up-account", {"omar reyes"}}}}});
        ConversationRecord record = simulate_one_step(partial, e2);
        CHECK(record.suggestions == 2);
        CHECK(record.steps_automated == 1);
        CHECK(record.total_steps == 2);
    }
    SUBCASE("joint approval rejects wrong values unless action-only") {
        const Dialogue& e2 = dialogues[1];
        TablePredictor wrong_values({{{"e-2", 0}, {{"pull-up-account", {"nobody"}}}},
                                     {{"e-2", 1}, {{"update-address", {"nowhere"}}}}});
        CHECK(simulate_one_step(wrong_values, e2, true).steps_automated == 0);
        CHECK(simulate_one_step(wrong_values, e2, false).steps_automated == 2);
    }
    SUBCASE("a dialogue without actions cannot be simulated") {
        Dialogue empty = testutil::make_dialogue("x", "p", "us", {});
        auto oracle = oracle_for(dialogues);
        CHECK_THROWS_AS(simulate_one_step(oracle, empty), ValidationError);
    }
    SUBCASE("steps automated equals a brute-force recount") {
        TablePredictor partial({{{"e-1", 0}, {{"pull-up-account", {"dana hale"}}}},
                                {{"e-1", 2}, {{"offer-refund", {"80 dollars"}}}}});
        ConversationRecord record = simulate_one_step(partial, e1);
        int recount = 0;
        for (int k = 0; k < e1.action_count(); ++k) {
            ContextSplit split = split_at_action(e1, k);
            auto top = top1_sequence(partial.predict(split, e1.policy));
            if (!top.empty() && serialize_step(top[0]) == serialize_step(split.future_actions[0]))
                ++recount;
        }
        CHECK(record.steps_automated == recount);
        CHECK(record.steps_automated == 2);
    }
}

TEST_CASE("multi-step simulation approves matching prefixes") {
    auto dialogues = eval_corpus();
    const Dialogue& e1 = dialogues[0];

    SUBCASE("the oracle needs exactly one call") {
        auto oracle = oracle_for(dialogues);
        ConversationRecord record = simulate_multi_step(oracle, e1);
        CHECK(record.suggestions == 1);
        CHECK(record.steps_automated == 3);
        CHECK(record.utterances_automated == 3);
    }
    SUBCASE("one-right-action-per-call degenerates to one-step behavior") {
        // 4-action dialogue; each call predicts exactly the next action.
        Dialogue four = testutil::make_dialogue(
            "four", "p", "uAAAA", {{"a", {}}, {"b", {}}, {"c", {}}, {"d", {}}});
        TablePredictor stepper({{{"four", 0}, {{"a", {}}, {"x", {}}}},
                                {{"four", 1}, {{"b", {}}, {"x", {}}}},
                                {{"four", 2}, {{"c", {}}, {"x", {}}}},
                                {{"four", 3}, {{"d", {}}}}});
        ConversationRecord record = simulate_multi_step(stepper, four);
        CHECK(record.suggestions == 4);
        CHECK(record.steps_automated == 4);
    }
    SUBCASE("prefix of two then the rest") {
        TablePredictor two_then_one(
            {{{"e-1", 0},
              {{"pull-up-account", {"dana hale"}}, {"validate-purchase", {"7001"}},
               {"wrong-tail", {}}}},
             {{"e-1", 2}, {{"offer-refund", {"80 dollars"}}}}});
        ConversationRecord record = simulate_multi_step(two_then_one, e1);
        CHECK(record.suggestions == 2);
        CHECK(record.steps_automated == 3);
    }
    SUBCASE("zero-length prefixes advance manually and stay within N calls") {
        TablePredictor wrong({});
        ConversationRecord record = simulate_multi_step(wrong, e1);
        CHECK(record.suggestions == 3); // bounded by N
        CHECK(record.steps_automated == 0);
        CHECK(record.utterances_automated == 0);
    }
    SUBCASE("suggestions never exceed N in either mode") {
        auto oracle = oracle_for(dialogues);
        TablePredictor wrong({});
        for (const Dialogue& dialogue : dialogues) {
            int n = dialogue.action_count();
            CHECK(simulate_one_step(oracle, dialogue).suggestions <= n);
            CHECK(simulate_multi_step(oracle, dialogue).suggestions <= n);
            CHECK(simulate_multi_step(wrong, dialogue).suggestions <= n);
        }
    }
    SUBCASE("multi-step needs no more suggestions than one-step for the oracle") {
        auto oracle = oracle_for(dialogues);
        for (const Dialogue& dialogue : dialogues) {
            CHECK(simulate_multi_step(oracle, dialogue).suggestions <=
                  simulate_one_step(oracle, dialogue).suggestions);
        }
    }
}

TEST_CASE("run_simulation aggregates per-conversation records") {
    auto dialogues = eval_corpus();
    auto oracle = oracle_for(dialogues);

    SUBCASE("oracle bounds in both modes") {
        SimulationConfig multi;
        multi.mode = AssistMode::MultiStep;
        SimulationReport multi_report = run_simulation(multi, oracle, dialogues);
        CHECK(multi_report.conversations == 4);
        CHECK(multi_report.avg_suggestions == doctest::Approx(1.0));
        CHECK(multi_report.pct_steps_automated == doctest::Approx(100.0));

        SimulationConfig one;
        one.mode = AssistMode::OneStep;
        SimulationReport one_report = run_simulation(one, oracle, dialogues);
        // N per conversation: 3, 2, 3, 3 -> mean 2.75
        CHECK(one_report.avg_suggestions == doctest::Approx(2.75));
        CHECK(one_report.pct_steps_automated == doctest::Approx(100.0));
    }
    SUBCASE("utterances automated equals total minus unspanned when all automate") {
        SimulationConfig multi;
        multi.mode = AssistMode::MultiStep;
        SimulationReport report = run_simulation(multi, oracle, dialogues);
        for (const ConversationRecord& record : report.records) {
            const Dialogue* dialogue = nullptr;
            for (const Dialogue& candidate : dialogues) {
                if (candidate.id == record.dialogue_id) dialogue = &candidate;
            }
            REQUIRE(dialogue != nullptr);
            std::set<int> spanned;
            for (int i = 0; i < dialogue->action_count(); ++i) {
                auto span = utterance_span(*dialogue, i);
                spanned.insert(span.begin(), span.end());
            }
            CHECK(record.utterances_automated == static_cast<int>(spanned.size()));
        }
    }
    SUBCASE("failed conversations are excluded but counted") {
        ThrowingPredictor flaky("e-2");
        SimulationConfig config;
        SimulationReport report = run_simulation(config, flaky, dialogues);
        CHECK(report.failures == 1);
        CHECK(report.conversations == 3);
    }
    SUBCASE("all conversations failing is an error") {
        ThrowingPredictor dead("");
        SimulationConfig config;
        CHECK_THROWS_AS(run_simulation(config, dead, dialogues), Error);
    }
    SUBCASE("micro average pools counts") {
        TablePredictor partial({{{"e-2", 0}, {{"pull-up-account", {"omar reyes"}}}}});
        SimulationConfig macro;
        SimulationConfig micro;
        micro.micro_average = true;
        SimulationReport macro_report = run_simulation(macro, partial, dialogues);
        SimulationReport micro_report = run_simulation(micro, partial, dialogues);
        // 1 automated of 11 pooled steps vs mean of {0, 1/2, 0, 0}.
        CHECK(micro_report.pct_steps_automated == doctest::Approx(100.0 / 11.0));
        CHECK(macro_report.pct_steps_automated == doctest::Approx(12.5));
    }
    SUBCASE("parallel simulation matches sequential") {
        SimulationConfig sequential;
        SimulationConfig parallel;
        parallel.jobs = 4;
        nlohmann::json a = simulation_to_json(run_simulation(sequential, oracle, dialogues));
        nlohmann::json b = simulation_to_json(run_simulation(parallel, oracle, dialogues));
        CHECK(a == b);
    }
    SUBCASE("report serializations carry the table columns") {
        SimulationConfig config;
        SimulationReport report = run_simulation(config, oracle, dialogues);
        std::string csv = simulation_to_csv(report);
        CHECK(csv.find("dialogue_id,suggestions") == 0);
        std::vector<SimulationReport> reports{report};
        std::string table = simulation_table(reports);
        CHECK(table.find("Avg #suggestions") != std::string::npos);
        CHECK(table.find("one-step") != std::string::npos);
    }
}
