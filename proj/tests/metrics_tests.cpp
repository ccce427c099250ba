#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "astrack/metrics.hpp"
#include "reference_metrics.hpp"
#include "test_util.hpp"

using namespace astrack;

namespace {

std::vector<ActionStep> steps(std::initializer_list<const char*> names) {
    std::vector<ActionStep> out;
    for (const char* name : names) out.push_back({name, {}});
    return out;
}

PredictionGraph graph_of(std::initializer_list<std::tuple<const char*, const char*, int>> edges,
                         const std::string& root) {
    PredictionGraph g;
    g.root = root;
    g.max_len = 7;
    g.nodes.insert(root);
    for (const auto& [from, to, count] : edges) {
        g.edge_counts[{from, to}] = count;
        g.nodes.insert(from);
        g.nodes.insert(to);
    }
    return g;
}

} // namespace

TEST_CASE("exact match compares the selected view") {
    auto same = steps({"A", "B"});
    CHECK(exact_match(same, same, View::Action) == 1.0);
    CHECK(exact_match(steps({"A", "B"}), steps({"A", "B", "C"}), View::Action) == 0.0);
    CHECK(exact_match(steps({"A", "B"}), steps({"A", "B", "C"}), View::Joint) == 0.0);

    std::vector<ActionStep> pred{{"A", {"x"}}};
    std::vector<ActionStep> gt{{"A", {"y"}}};
    CHECK(exact_match(pred, gt, View::Action) == 1.0);
    CHECK(exact_match(pred, gt, View::Value) == 0.0);
    CHECK(exact_match(pred, gt, View::Joint) == 0.0);
}

TEST_CASE("cascading evaluation gives prefix credit") {
    CHECK(cascading_eval(steps({"A", "B", "C"}), steps({"A", "B", "D"}), View::Action) ==
          doctest::Approx(2.0 / 3.0));
    // Overgeneration past the truth is never penalized.
    CHECK(cascading_eval(steps({"A", "B", "C", "Z", "Q"}), steps({"A", "B", "C"}),
                         View::Action) == 1.0);
    CHECK(cascading_eval(steps({"X", "B", "C"}), steps({"A", "B", "C"}), View::Action) == 0.0);
    CHECK(cascading_eval({}, steps({"A"}), View::Action) == 0.0);
    CHECK(cascading_eval(steps({"A"}), {}, View::Action) == 1.0);
    CHECK(cascading_eval({}, {}, View::Action) == 1.0);

    SUBCASE("value view sees value mismatches") {
        std::vector<ActionStep> pred{{"A", {"x"}}, {"B", {}}};
        std::vector<ActionStep> gt{{"A", {"y"}}, {"B", {}}};
        CHECK(cascading_eval(pred, gt, View::Action) == 1.0);
        CHECK(cascading_eval(pred, gt, View::Value) == 0.0);
    }
}

TEST_CASE("f1 works on deduplicated unordered sets") {
    CHECK(f1_score(steps({"A", "B"}), steps({"B", "C"}), View::Action) == doctest::Approx(0.5));
    CHECK(f1_score(steps({"A", "A", "B"}), steps({"B", "A"}), View::Action) == 1.0);
    CHECK(f1_score({}, steps({"A"}), View::Action) == 0.0);
    CHECK(f1_score(steps({"A"}), {}, View::Action) == 0.0);
    CHECK(f1_score({}, {}, View::Action) == 1.0);
    CHECK(f1_score(steps({"A"}), steps({"B"}), View::Action) == 0.0);
}

TEST_CASE("f1 is invariant to permutation and duplication") {
    std::mt19937 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        auto pred = testutil::random_sequence(rng, 5);
        auto gt = testutil::random_sequence(rng, 5);
        double base = f1_score(pred, gt, View::Joint);
        auto shuffled = pred;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        if (!pred.empty()) shuffled.push_back(pred.front()); // duplicate one
        CHECK(f1_score(shuffled, gt, View::Joint) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("bleu follows the pinned smoothing and conventions") {
    auto four = steps({"A", "B", "C", "D"});
    CHECK(bleu_score(four, four, View::Action) == doctest::Approx(100.0));
    CHECK(bleu_score(steps({"A"}), steps({"A"}), View::Action) == doctest::Approx(100.0));
    CHECK(bleu_score({}, four, View::Action) == 0.0);
    CHECK(bleu_score(four, {}, View::Action) == 0.0);
    CHECK(bleu_score({}, {}, View::Action) == 100.0);
    CHECK(bleu_score(steps({"X"}), steps({"A"}), View::Action) == 0.0);

    SUBCASE("agrees with the independent reference implementation") {
        auto five = steps({"A", "B", "C", "D", "E"});
        double mine = bleu_score(five, four, View::Action);
        double ref = refmetrics::bleu_score(five, four, View::Action);
        CHECK(mine == doctest::Approx(ref).epsilon(1e-12));
        CHECK(mine > 0.0);
        CHECK(mine < 100.0);
    }
}

TEST_CASE("graph NLL walks the truth through the graph") {
    PredictionGraph g = graph_of({{"root", "B", 3}, {"root", "C", 1}}, "root");
    CHECK(graph_nll(g, steps({"B"})) == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
    CHECK(graph_nll(g, steps({"D"})) == doctest::Approx(69.0776).epsilon(1e-4));
    CHECK(graph_nll(g, {}) == 0.0);

    SUBCASE("traversal continues from the true node after a miss") {
        PredictionGraph chain = graph_of({{"root", "B", 1}, {"D", "E", 1}}, "root");
        // root->D missing (1e-30), then D->E present with probability 1.
        double nll = graph_nll(chain, steps({"D", "E"}));
        CHECK(nll == doctest::Approx(-std::log(1e-30)).epsilon(1e-9));
    }
    SUBCASE("monotone in a ground-truth edge count") {
        PredictionGraph before = graph_of({{"root", "B", 2}, {"root", "C", 5}}, "root");
        PredictionGraph after = graph_of({{"root", "B", 3}, {"root", "C", 5}}, "root");
        CHECK(graph_nll(after, steps({"B"})) < graph_nll(before, steps({"B"})));
    }
}

TEST_CASE("metrics agree with brute-force references on random pairs") {
    std::mt19937 rng(2024);
    const View views[] = {View::Action, View::Value, View::Joint};
    for (int trial = 0; trial < 1000; ++trial) {
        auto pred = testutil::random_sequence(rng, 5);
        auto gt = testutil::random_sequence(rng, 5);
        for (View view : views) {
            CHECK(exact_match(pred, gt, view) == refmetrics::exact_match(pred, gt, view));
            CHECK(cascading_eval(pred, gt, view) ==
                  refmetrics::cascading_eval(pred, gt, view));
            CHECK(f1_score(pred, gt, view) == refmetrics::f1_score(pred, gt, view));
            CHECK(bleu_score(pred, gt, view) ==
                  doctest::Approx(refmetrics::bleu_score(pred, gt, view)).epsilon(1e-9));
        }
        std::vector<std::vector<ActionStep>> rollouts;
        std::uniform_int_distribution<int> n_rollouts(1, 4);
        int n = n_rollouts(rng);
        for (int i = 0; i < n; ++i) rollouts.push_back(testutil::random_sequence(rng, 4, 0));
        PredictionGraph g = aggregate_rollouts(testutil::random_step(rng, 0), rollouts, 7);
        CHECK(graph_nll(g, gt) == doctest::Approx(refmetrics::graph_nll(g, gt)).epsilon(1e-9));
    }
}

TEST_CASE("ordering invariants hold on random pairs") {
    std::mt19937 rng(77);
    const View views[] = {View::Action, View::Value, View::Joint};
    for (int trial = 0; trial < 500; ++trial) {
        auto pred = testutil::random_sequence(rng, 5);
        auto gt = testutil::random_sequence(rng, 5);
        for (View view : views) {
            double em = exact_match(pred, gt, view);
            double ce = cascading_eval(pred, gt, view);
            CHECK(ce >= em);
            if (em == 1.0) {
                CHECK(ce == 1.0);
                CHECK(f1_score(pred, gt, view) == 1.0);
                CHECK(bleu_score(pred, gt, view) == doctest::Approx(100.0));
            }
        }
    }
}

namespace {

// Test predictor that replays the split's own future (an oracle), failing on
// a designated dialogue id.
class OracleWithFailure : public Predictor {
public:
    explicit OracleWithFailure(std::string fail_id = "") : fail_id_(std::move(fail_id)) {}

    PredictionGraph predict(const ContextSplit& split, const std::string&) const override {
        if (split.dialogue_id == fail_id_) {
            throw Error("synthetic failure");
        }
        return aggregate_rollouts(split.last_action, {split.future_actions}, 64);
    }

private:
    std::string fail_id_;
};

class RootOnlyPredictor : public Predictor {
public:
    PredictionGraph predict(const ContextSplit& split, const std::string&) const override {
        return root_only_graph(
            split.last_action ? split.last_action->name : std::string(kStartNode), 7);
    }
};

} // namespace

TEST_CASE("evaluate_dataset aggregates per-example scores") {
    auto dialogues = load_corpus(testutil::data_path("corpus_eval.jsonl"));
    auto splits = enumerate_splits(dialogues);
    REQUIRE(splits.size() == 11);

    SUBCASE("an oracle predictor maxes every metric") {
        OracleWithFailure oracle;
        MetricReport report = evaluate_dataset(oracle, dialogues, splits);
        CHECK(report.count == 11);
        CHECK(report.failures == 0);
        CHECK(report.means.action_em == 1.0);
        CHECK(report.means.joint_em == 1.0);
        CHECK(report.means.action_ce == 1.0);
        CHECK(report.means.joint_f1 == 1.0);
        CHECK(report.means.action_bleu == doctest::Approx(100.0));
        CHECK(report.means.value_bleu == doctest::Approx(100.0));
        CHECK(report.examples.size() == 11);
    }
    SUBCASE("root-only graphs score zero CE and the missing-edge NLL") {
        RootOnlyPredictor nothing;
        MetricReport report = evaluate_dataset(nothing, dialogues, splits);
        CHECK(report.means.action_ce == 0.0);
        CHECK(report.means.action_em == 0.0);
        double total_gt_steps = 0;
        for (const SplitPoint& point : splits) {
            total_gt_steps += static_cast<double>(
                split_at_action(dialogues[static_cast<size_t>(point.dialogue_index)], point.k)
                    .future_actions.size());
        }
        double expected = total_gt_steps / static_cast<double>(splits.size()) * 69.0776;
        CHECK(report.means.action_graph_nll == doctest::Approx(expected).epsilon(1e-4));
    }
    SUBCASE("failures are counted and excluded") {
        OracleWithFailure flaky("e-3");
        MetricReport report = evaluate_dataset(flaky, dialogues, splits);
        CHECK(report.failures == 3);
        CHECK(report.count == 8);
        CHECK(report.means.action_em == 1.0);
    }
    SUBCASE("a single example is its own mean") {
        std::vector<SplitPoint> one{splits.front()};
        OracleWithFailure oracle;
        MetricReport report = evaluate_dataset(oracle, dialogues, one);
        CHECK(report.count == 1);
        CHECK(report.means.action_bleu == doctest::Approx(100.0));
    }
    SUBCASE("parallel evaluation matches sequential") {
        OracleWithFailure flaky("e-2");
        EvalOptions sequential;
        EvalOptions parallel;
        parallel.jobs = 4;
        nlohmann::json a = report_to_json(evaluate_dataset(flaky, dialogues, splits, sequential));
        nlohmann::json b = report_to_json(evaluate_dataset(flaky, dialogues, splits, parallel));
        CHECK(a == b);
    }
    SUBCASE("max_steps truncates prediction and truth") {
        OracleWithFailure oracle;
        EvalOptions options;
        options.max_steps = 1;
        MetricReport report = evaluate_dataset(oracle, dialogues, splits, options);
        CHECK(report.means.action_em == 1.0);
    }
}

TEST_CASE("report serialization handles N/A value metrics") {
    auto dialogues = load_corpus(testutil::data_path("corpus_eval.jsonl"));
    auto train = load_corpus(testutil::data_path("corpus_3policy.jsonl"));
    TraversalPredictor traversal(build_policy_graphs(train, 1, 7));
    MetricReport report = evaluate_dataset(traversal, dialogues, enumerate_splits(dialogues));
    CHECK(report.value_metrics_na);
    nlohmann::json object = report_to_json(report);
    CHECK(object["means"]["value_em"].is_null());
    CHECK(object["means"]["joint_bleu"].is_null());
    CHECK(object["means"]["action_em"].is_number());

    std::string csv = report_to_csv(report);
    CHECK(csv.find(",NA") != std::string::npos);
    std::string table = report_to_table(report);
    CHECK(table.find("N/A") != std::string::npos);
}
