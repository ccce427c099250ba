#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "astrack/action_graph.hpp"
#include "astrack/corpus.hpp"
#include "astrack/metrics.hpp"

namespace {

using namespace astrack;

const std::vector<std::string>& names() {
    static const std::vector<std::string> pool = {
        "pull-up-account", "validate-purchase", "offer-refund",  "membership",
        "update-address",  "send-confirmation", "verify-identity", "check-status",
        "renew-plan",      "send-invoice",      "enroll",          "escalate",
    };
    return pool;
}

std::vector<Dialogue> synthetic_corpus(int dialogues, int policies, std::mt19937& rng) {
    std::uniform_int_distribution<int> length(1, 8);
    std::uniform_int_distribution<size_t> pick(0, names().size() - 1);
    std::uniform_int_distribution<int> policy(0, policies - 1);
    std::vector<Dialogue> out;
    out.reserve(static_cast<size_t>(dialogues));
    for (int i = 0; i < dialogues; ++i) {
        Dialogue d;
        d.id = "d" + std::to_string(i);
        d.policy = "policy-" + std::to_string(policy(rng));
        int n = length(rng);
        for (int turn = 0; turn < n; ++turn) {
            Turn t;
            t.kind = TurnKind::Action;
            t.index = turn;
            t.action = {names()[pick(rng)], {}};
            d.turns.push_back(std::move(t));
        }
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<ActionStep> random_steps(std::mt19937& rng, int max_len) {
    std::uniform_int_distribution<int> length(0, max_len);
    std::uniform_int_distribution<size_t> pick(0, names().size() - 1);
    std::vector<ActionStep> steps;
    int n = length(rng);
    for (int i = 0; i < n; ++i) steps.push_back({names()[pick(rng)], {"v1", "v2"}});
    return steps;
}

void BM_BuildPolicyGraphs(benchmark::State& state) {
    std::mt19937 rng(42);
    auto corpus = synthetic_corpus(static_cast<int>(state.range(0)), 12, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(build_policy_graphs(corpus, 1, 7));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BuildPolicyGraphs)->Arg(1000)->Arg(10000);

void BM_TraverseAndTop1(benchmark::State& state) {
    std::mt19937 rng(43);
    auto corpus = synthetic_corpus(5000, 8, rng);
    PolicyGraphSet graphs = build_policy_graphs(corpus, 1, 7);
    std::uniform_int_distribution<size_t> pick(0, names().size() - 1);
    for (auto _ : state) {
        PredictionGraph g =
            traverse(graphs, "policy-3", ActionStep{names()[pick(rng)], {}});
        benchmark::DoNotOptimize(top1_sequence(g));
    }
}
BENCHMARK(BM_TraverseAndTop1);

void BM_ParseFormatRoundTrip(benchmark::State& state) {
    std::mt19937 rng(44);
    std::vector<std::string> serialized;
    for (int i = 0; i < 256; ++i) {
        serialized.push_back(format_action_sequence(random_steps(rng, 7)));
    }
    size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(parse_action_string(serialized[i++ % serialized.size()]));
    }
}
BENCHMARK(BM_ParseFormatRoundTrip);

void BM_SequenceMetrics(benchmark::State& state) {
    std::mt19937 rng(45);
    std::vector<std::pair<std::vector<ActionStep>, std::vector<ActionStep>>> pairs;
    for (int i = 0; i < 128; ++i) {
        pairs.emplace_back(random_steps(rng, 5), random_steps(rng, 5));
    }
    size_t i = 0;
    for (auto _ : state) {
        const auto& [pred, gt] = pairs[i++ % pairs.size()];
        benchmark::DoNotOptimize(exact_match(pred, gt, View::Joint));
        benchmark::DoNotOptimize(cascading_eval(pred, gt, View::Joint));
        benchmark::DoNotOptimize(f1_score(pred, gt, View::Joint));
        benchmark::DoNotOptimize(bleu_score(pred, gt, View::Joint));
    }
}
BENCHMARK(BM_SequenceMetrics);

void BM_GraphNll(benchmark::State& state) {
    std::mt19937 rng(46);
    std::vector<std::vector<ActionStep>> rollouts;
    for (int i = 0; i < 20; ++i) rollouts.push_back(random_steps(rng, 7));
    PredictionGraph graph = aggregate_rollouts(std::nullopt, rollouts, 7);
    auto gt = random_steps(rng, 5);
    for (auto _ : state) {
        benchmark::DoNotOptimize(graph_nll(graph, gt));
    }
}
BENCHMARK(BM_GraphNll);

} // namespace

BENCHMARK_MAIN();
