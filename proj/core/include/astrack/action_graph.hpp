#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "astrack/corpus.hpp"

namespace astrack {

/// Synthetic root used when no action has executed yet. It never appears in
/// emitted sequences.
inline constexpr const char* kStartNode = "START";

/// Weighted directed graph over action names. Edge weights are transition
/// counts; the probability of an edge is its count normalized over all
/// counts leaving the same node. Cycles are permitted.
///
/// Graphs built from rollouts retain the rollouts themselves so that top-1
/// extraction can return a sequence some model actually produced (with its
/// slot values) instead of a path spliced from different rollouts.
struct PredictionGraph {
    std::string root = kStartNode;
    int max_len = 7;
    std::set<std::string> nodes;
    std::map<std::pair<std::string, std::string>, int> edge_counts;
    std::optional<std::vector<std::vector<ActionStep>>> rollouts;

    bool has_node(const std::string& name) const { return nodes.count(name) > 0; }
    bool has_edge(const std::string& from, const std::string& to) const;

    /// Sum of counts on edges leaving `from`; 0 for sinks and unknown nodes.
    int out_total(const std::string& from) const;

    /// count(from,to) / out_total(from); 0 when the edge is absent.
    double probability(const std::string& from, const std::string& to) const;
};

/// Graph with just the root and no edges (cold start / empty prediction).
PredictionGraph root_only_graph(const std::string& root, int max_len,
                                bool retain_empty_rollouts = false);

/// Per-policy transition graphs built from training workflows, each rooted
/// at START. Only edges observed at least `edge_threshold` times are kept.
struct PolicyGraphSet {
    int edge_threshold = 1;
    int max_len = 7;
    std::map<std::string, PredictionGraph> policies;
};

/// Counts consecutive action transitions (with START prepended to every
/// workflow) per policy and drops edges seen fewer than `edge_threshold`
/// times. Dialogues without actions contribute nothing.
PolicyGraphSet build_policy_graphs(std::span<const Dialogue> dialogues, int edge_threshold,
                                   int max_len);

/// Combines rollouts into a graph rooted at the last executed action (or
/// START when absent); every rollout contributes the transition chain
/// root -> r1 -> r2 -> ... The rollouts are retained on the graph.
/// Throws Error when `rollouts` is empty (individual rollouts may be empty).
PredictionGraph aggregate_rollouts(const std::optional<ActionStep>& last_action,
                                   std::vector<std::vector<ActionStep>> rollouts, int max_len);

/// Subgraph of the policy graph reachable from the last executed action (or
/// START), counts preserved, re-rooted there. A last action that is not a
/// node of the policy graph yields a root-only graph (cold start). An
/// unknown policy throws ValidationError.
PredictionGraph traverse(const PolicyGraphSet& graphs, const std::string& policy,
                         const std::optional<ActionStep>& last_action);

/// The single most likely action chain:
///  - rollout-built graphs return the modal rollout (ties broken by larger
///    edge-probability product, then lexicographic serialization);
///  - pure graphs walk greedily from the root along the max-probability edge
///    (ties broken by action name), stopping at a sink or after max_len
///    steps. Steps from a pure graph carry no values.
/// Both forms are capped at max_len steps. Deterministic.
std::vector<ActionStep> top1_sequence(const PredictionGraph& graph);

/// Nearest-rank percentile (the ceil(q/100 * n)-th smallest) of per-dialogue
/// action counts. Throws ValidationError on an empty corpus, a percentile
/// outside (0, 100], or when the selected rank lands on a zero count.
int sequence_length_percentile(std::span<const Dialogue> dialogues, double percentile);

nlohmann::json graph_to_json(const PredictionGraph& graph);
PredictionGraph graph_from_json(const nlohmann::json& object);
nlohmann::json policy_graphs_to_json(const PolicyGraphSet& graphs);
PolicyGraphSet policy_graphs_from_json(const nlohmann::json& object);

/// Graphviz text; edge labels carry transition counts.
std::string to_dot(const PredictionGraph& graph, const std::string& name = "prediction");
std::string to_dot(const PolicyGraphSet& graphs);

} // namespace astrack
