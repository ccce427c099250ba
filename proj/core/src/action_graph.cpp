#include "astrack/action_graph.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <sstream>

namespace astrack {

bool PredictionGraph::has_edge(const std::string& from, const std::string& to) const {
    return edge_counts.count({from, to}) > 0;
}

int PredictionGraph::out_total(const std::string& from) const {
    int total = 0;
    // Edges from one node are contiguous under pair ordering.
    for (auto it = edge_counts.lower_bound({from, std::string()});
         it != edge_counts.end() && it->first.first == from; ++it) {
        total += it->second;
    }
    return total;
}

double PredictionGraph::probability(const std::string& from, const std::string& to) const {
    auto it = edge_counts.find({from, to});
    if (it == edge_counts.end()) return 0.0;
    return static_cast<double>(it->second) / static_cast<double>(out_total(from));
}

PredictionGraph root_only_graph(const std::string& root, int max_len,
                                bool retain_empty_rollouts) {
    PredictionGraph graph;
    graph.root = root;
    graph.max_len = max_len;
    graph.nodes.insert(root);
    if (retain_empty_rollouts) {
        graph.rollouts.emplace();
    }
    return graph;
}

PolicyGraphSet build_policy_graphs(std::span<const Dialogue> dialogues, int edge_threshold,
                                   int max_len) {
    if (edge_threshold < 1) {
        throw ValidationError("edge threshold must be >= 1");
    }
    if (max_len < 1) {
        throw ValidationError("max_len must be >= 1");
    }
    std::map<std::string, std::map<std::pair<std::string, std::string>, int>> counts;
    for (const Dialogue& dialogue : dialogues) {
        std::vector<ActionStep> workflow = dialogue.workflow();
        if (workflow.empty()) continue;
        auto& policy_counts = counts[dialogue.policy];
        std::string prev = kStartNode;
        for (const ActionStep& step : workflow) {
            ++policy_counts[{prev, step.name}];
            prev = step.name;
        }
    }
    PolicyGraphSet out;
    out.edge_threshold = edge_threshold;
    out.max_len = max_len;
    for (auto& [policy, policy_counts] : counts) {
        PredictionGraph graph;
        graph.root = kStartNode;
        graph.max_len = max_len;
        graph.nodes.insert(kStartNode);
        for (const auto& [edge, count] : policy_counts) {
            if (count < edge_threshold) continue;
            graph.edge_counts[edge] = count;
            graph.nodes.insert(edge.first);
            graph.nodes.insert(edge.second);
        }
        out.policies.emplace(policy, std::move(graph));
    }
    return out;
}

PredictionGraph aggregate_rollouts(const std::optional<ActionStep>& last_action,
                                   std::vector<std::vector<ActionStep>> rollouts, int max_len) {
    if (rollouts.empty()) {
        throw Error("aggregate_rollouts requires at least one rollout");
    }
    PredictionGraph graph;
    graph.root = last_action.has_value() ? last_action->name : kStartNode;
    graph.max_len = max_len;
    graph.nodes.insert(graph.root);
    for (const std::vector<ActionStep>& rollout : rollouts) {
        std::string prev = graph.root;
        for (const ActionStep& step : rollout) {
            ++graph.edge_counts[{prev, step.name}];
            graph.nodes.insert(step.name);
            prev = step.name;
        }
    }
    graph.rollouts = std::move(rollouts);
    return graph;
}

PredictionGraph traverse(const PolicyGraphSet& graphs, const std::string& policy,
                         const std::optional<ActionStep>& last_action) {
    auto it = graphs.policies.find(policy);
    if (it == graphs.policies.end()) {
        throw ValidationError("unknown policy \"" + policy + "\"");
    }
    const PredictionGraph& source = it->second;
    std::string start = last_action.has_value() ? last_action->name : std::string(kStartNode);
    if (!source.has_node(start)) {
        return root_only_graph(start, graphs.max_len);
    }
    std::set<std::string> reachable{start};
    std::deque<std::string> frontier{start};
    while (!frontier.empty()) {
        std::string from = frontier.front();
        frontier.pop_front();
        for (auto edge = source.edge_counts.lower_bound({from, std::string()});
             edge != source.edge_counts.end() && edge->first.first == from; ++edge) {
            if (reachable.insert(edge->first.second).second) {
                frontier.push_back(edge->first.second);
            }
        }
    }
    PredictionGraph out;
    out.root = start;
    out.max_len = graphs.max_len;
    out.nodes = reachable;
    for (const auto& [edge, count] : source.edge_counts) {
        if (reachable.count(edge.first) > 0) {
            out.edge_counts[edge] = count;
        }
    }
    return out;
}

namespace {

std::vector<ActionStep> modal_rollout(const PredictionGraph& graph) {
    struct Candidate {
        int count = 0;
        double product = 0.0;
        const std::vector<ActionStep>* steps = nullptr;
    };
    // Keyed by joint serialization; map order makes the lexicographic
    // tie-break implicit (first best key wins under strict comparisons).
    std::map<std::string, Candidate> candidates;
    for (const std::vector<ActionStep>& rollout : *graph.rollouts) {
        Candidate& c = candidates[format_action_sequence(rollout)];
        ++c.count;
        c.steps = &rollout;
    }
    const Candidate* best = nullptr;
    for (auto& [key, candidate] : candidates) {
        double product = 1.0;
        std::string prev = graph.root;
        for (const ActionStep& step : *candidate.steps) {
            product *= graph.probability(prev, step.name);
            prev = step.name;
        }
        candidate.product = product;
        if (best == nullptr || candidate.count > best->count ||
            (candidate.count == best->count && candidate.product > best->product)) {
            best = &candidate;
        }
    }
    if (best == nullptr || best->steps == nullptr) return {};
    std::vector<ActionStep> out = *best->steps;
    if (static_cast<int>(out.size()) > graph.max_len) {
        out.resize(static_cast<size_t>(graph.max_len));
    }
    return out;
}

std::vector<ActionStep> greedy_walk(const PredictionGraph& graph) {
    std::vector<ActionStep> out;
    std::string current = graph.root;
    while (static_cast<int>(out.size()) < graph.max_len) {
        const std::string* next = nullptr;
        int best_count = 0;
        for (auto it = graph.edge_counts.lower_bound({current, std::string()});
             it != graph.edge_counts.end() && it->first.first == current; ++it) {
            // Strict > keeps the lexicographically first name on ties.
            if (it->second > best_count) {
                best_count = it->second;
                next = &it->first.second;
            }
        }
        if (next == nullptr) break;
        out.push_back(ActionStep{*next, {}});
        current = *next;
    }
    return out;
}

} // namespace

std::vector<ActionStep> top1_sequence(const PredictionGraph& graph) {
    if (graph.rollouts.has_value()) {
        if (graph.rollouts->empty()) return {};
        return modal_rollout(graph);
    }
    return greedy_walk(graph);
}

int sequence_length_percentile(std::span<const Dialogue> dialogues, double percentile) {
    if (dialogues.empty()) {
        throw ValidationError("cannot take a length percentile of an empty corpus");
    }
    if (!(percentile > 0.0) || percentile > 100.0) {
        throw ValidationError("percentile must lie in (0, 100]");
    }
    std::vector<int> lengths;
    lengths.reserve(dialogues.size());
    for (const Dialogue& dialogue : dialogues) {
        lengths.push_back(dialogue.action_count());
    }
    std::sort(lengths.begin(), lengths.end());
    auto n = static_cast<double>(lengths.size());
    auto rank = static_cast<size_t>(std::ceil(percentile * n / 100.0));
    rank = std::clamp<size_t>(rank, 1, lengths.size());
    int value = lengths[rank - 1];
    if (value < 1) {
        throw ValidationError("length percentile landed on a dialogue with no actions");
    }
    return value;
}

nlohmann::json graph_to_json(const PredictionGraph& graph) {
    nlohmann::json object;
    object["root"] = graph.root;
    object["max_len"] = graph.max_len;
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [edge, count] : graph.edge_counts) {
        edges.push_back({{"from", edge.first}, {"to", edge.second}, {"count", count}});
    }
    object["edges"] = std::move(edges);
    if (graph.rollouts.has_value()) {
        nlohmann::json rollouts = nlohmann::json::array();
        for (const std::vector<ActionStep>& rollout : *graph.rollouts) {
            nlohmann::json steps = nlohmann::json::array();
            for (const ActionStep& step : rollout) steps.push_back(serialize_step(step));
            rollouts.push_back(std::move(steps));
        }
        object["rollouts"] = std::move(rollouts);
    } else {
        object["rollouts"] = nullptr;
    }
    return object;
}

PredictionGraph graph_from_json(const nlohmann::json& object) {
    PredictionGraph graph;
    graph.root = object.at("root").get<std::string>();
    graph.max_len = object.at("max_len").get<int>();
    // The node set is implied: every node is the root or an edge endpoint.
    graph.nodes.insert(graph.root);
    for (const nlohmann::json& edge : object.at("edges")) {
        std::string from = edge.at("from").get<std::string>();
        std::string to = edge.at("to").get<std::string>();
        int count = edge.at("count").get<int>();
        if (count <= 0) {
            throw ValidationError("edge counts must be positive");
        }
        graph.edge_counts[{from, to}] = count;
        graph.nodes.insert(from);
        graph.nodes.insert(to);
    }
    if (object.contains("rollouts") && !object.at("rollouts").is_null()) {
        graph.rollouts.emplace();
        for (const nlohmann::json& rollout : object.at("rollouts")) {
            std::vector<ActionStep> steps;
            for (const nlohmann::json& step : rollout) {
                std::vector<ActionStep> parsed = parse_action_string(step.get<std::string>());
                steps.insert(steps.end(), parsed.begin(), parsed.end());
            }
            graph.rollouts->push_back(std::move(steps));
        }
    }
    return graph;
}

nlohmann::json policy_graphs_to_json(const PolicyGraphSet& graphs) {
    nlohmann::json object;
    object["edge_threshold"] = graphs.edge_threshold;
    object["max_len"] = graphs.max_len;
    nlohmann::json policies = nlohmann::json::object();
    for (const auto& [policy, graph] : graphs.policies) {
        policies[policy] = graph_to_json(graph);
    }
    object["policies"] = std::move(policies);
    return object;
}

PolicyGraphSet policy_graphs_from_json(const nlohmann::json& object) {
    PolicyGraphSet graphs;
    graphs.edge_threshold = object.at("edge_threshold").get<int>();
    graphs.max_len = object.at("max_len").get<int>();
    for (const auto& [policy, graph_json] : object.at("policies").items()) {
        graphs.policies.emplace(policy, graph_from_json(graph_json));
    }
    return graphs;
}

namespace {

std::string dot_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out;
}

void append_dot_body(std::ostringstream& out, const PredictionGraph& graph) {
    out << "  \"" << dot_escape(graph.root) << "\" [shape=doublecircle];\n";
    for (const std::string& node : graph.nodes) {
        if (node != graph.root) {
            out << "  \"" << dot_escape(node) << "\";\n";
        }
    }
    for (const auto& [edge, count] : graph.edge_counts) {
        out << "  \"" << dot_escape(edge.first) << "\" -> \"" << dot_escape(edge.second)
            << "\" [label=\"" << count << "\"];\n";
    }
}

std::string sanitize_graph_name(const std::string& name) {
    std::string out;
    for (char c : name) {
        out += (std::isalnum(static_cast<unsigned char>(c)) != 0) ? c : '_';
    }
    if (out.empty()) out = "g";
    return out;
}

} // namespace

std::string to_dot(const PredictionGraph& graph, const std::string& name) {
    std::ostringstream out;
    out << "digraph " << sanitize_graph_name(name) << " {\n";
    append_dot_body(out, graph);
    out << "}\n";
    return out.str();
}

std::string to_dot(const PolicyGraphSet& graphs) {
    std::ostringstream out;
    for (const auto& [policy, graph] : graphs.policies) {
        out << "digraph " << sanitize_graph_name(policy) << " {\n";
        out << "  label=\"" << dot_escape(policy) << "\";\n";
        append_dot_body(out, graph);
        out << "}\n";
    }
    return out.str();
}

} // namespace astrack
