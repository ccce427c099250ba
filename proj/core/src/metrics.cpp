#include "astrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace astrack {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

} // namespace

std::string_view to_string(View view) {
    switch (view) {
    case View::Action: return "action";
    case View::Value: return "value";
    case View::Joint: return "joint";
    }
    return "action";
}

std::vector<std::string> view_elements(std::span<const ActionStep> steps, View view) {
    std::vector<std::string> out;
    out.reserve(steps.size());
    for (const ActionStep& step : steps) {
        switch (view) {
        case View::Action:
            out.push_back(step.name);
            break;
        case View::Value: {
            std::string values = "[";
            for (size_t i = 0; i < step.values.size(); ++i) {
                if (i > 0) values += ", ";
                values += step.values[i];
            }
            values += "]";
            out.push_back(std::move(values));
            break;
        }
        case View::Joint:
            out.push_back(serialize_step(step));
            break;
        }
    }
    return out;
}

double exact_match(std::span<const ActionStep> pred, std::span<const ActionStep> gt, View view) {
    return view_elements(pred, view) == view_elements(gt, view) ? 1.0 : 0.0;
}

double cascading_eval(std::span<const ActionStep> pred, std::span<const ActionStep> gt,
                      View view) {
    if (gt.empty()) {
        return 1.0; // nothing left to predict; overgeneration never penalizes
    }
    std::vector<std::string> p = view_elements(pred, view);
    std::vector<std::string> g = view_elements(gt, view);
    size_t matched_prefix = 0;
    while (matched_prefix < p.size() && matched_prefix < g.size() &&
           p[matched_prefix] == g[matched_prefix]) {
        ++matched_prefix;
    }
    return static_cast<double>(matched_prefix) / static_cast<double>(g.size());
}

double f1_score(std::span<const ActionStep> pred, std::span<const ActionStep> gt, View view) {
    std::vector<std::string> p = view_elements(pred, view);
    std::vector<std::string> g = view_elements(gt, view);
    std::set<std::string> pred_set(p.begin(), p.end());
    std::set<std::string> gt_set(g.begin(), g.end());
    if (pred_set.empty() && gt_set.empty()) return 1.0;
    if (pred_set.empty() || gt_set.empty()) return 0.0;
    size_t common = 0;
    for (const std::string& element : pred_set) {
        common += gt_set.count(element);
    }
    double precision = static_cast<double>(common) / static_cast<double>(pred_set.size());
    double recall = static_cast<double>(common) / static_cast<double>(gt_set.size());
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

namespace {

std::vector<std::string> bleu_tokens(std::span<const ActionStep> steps, View view) {
    std::vector<std::string> elements = view_elements(steps, view);
    std::string serialized;
    for (size_t i = 0; i < elements.size(); ++i) {
        if (i > 0) serialized += "; ";
        serialized += elements[i];
    }
    std::string padded;
    for (char c : serialized) {
        if (c == ';' || c == '[' || c == ']' || c == ',') {
            padded += ' ';
            padded += c;
            padded += ' ';
        } else {
            padded += c;
        }
    }
    std::vector<std::string> tokens;
    std::istringstream stream(padded);
    std::string token;
    while (stream >> token) tokens.push_back(token);
    return tokens;
}

std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& tokens,
                                                     size_t order) {
    std::map<std::vector<std::string>, int> counts;
    if (tokens.size() < order) return counts;
    for (size_t i = 0; i + order <= tokens.size(); ++i) {
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<long>(i),
                                          tokens.begin() + static_cast<long>(i + order))];
    }
    return counts;
}

} // namespace

double bleu_score(std::span<const ActionStep> pred, std::span<const ActionStep> gt, View view) {
    std::vector<std::string> candidate = bleu_tokens(pred, view);
    std::vector<std::string> reference = bleu_tokens(gt, view);
    if (candidate.empty() && reference.empty()) return 100.0;
    if (candidate.empty() || reference.empty()) return 0.0;

    double log_sum = 0.0;
    for (size_t order = 1; order <= 4; ++order) {
        std::map<std::vector<std::string>, int> cand = ngram_counts(candidate, order);
        std::map<std::vector<std::string>, int> ref = ngram_counts(reference, order);
        long matched = 0;
        long possible = 0;
        for (const auto& [gram, count] : cand) {
            possible += count;
            auto it = ref.find(gram);
            if (it != ref.end()) matched += std::min(count, it->second);
        }
        double precision;
        if (matched > 0) {
            precision = static_cast<double>(matched) / static_cast<double>(possible);
        } else if (order >= 2) {
            precision = 1.0 / static_cast<double>(possible + 1);
        } else {
            return 0.0; // no unigram overlap
        }
        log_sum += 0.25 * std::log(precision);
    }
    double brevity = 1.0;
    if (candidate.size() < reference.size()) {
        brevity = std::exp(1.0 - static_cast<double>(reference.size()) /
                                     static_cast<double>(candidate.size()));
    }
    return 100.0 * brevity * std::exp(log_sum);
}

double graph_nll(const PredictionGraph& graph, std::span<const ActionStep> gt) {
    double nll = 0.0;
    std::string previous = graph.root;
    for (const ActionStep& step : gt) {
        double p = kMissingEdgeProbability;
        if (graph.has_edge(previous, step.name)) {
            p = graph.probability(previous, step.name);
        }
        nll -= std::log(p);
        previous = step.name; // continue along the truth even off-graph
    }
    return nll;
}

std::vector<SplitPoint> enumerate_splits(std::span<const Dialogue> dialogues) {
    std::vector<SplitPoint> splits;
    for (size_t d = 0; d < dialogues.size(); ++d) {
        int n = dialogues[d].action_count();
        for (int k = 0; k < n; ++k) {
            splits.push_back(SplitPoint{static_cast<int>(d), k});
        }
    }
    return splits;
}

ExampleMetrics score_example(const PredictionGraph& graph, std::span<const ActionStep> gt,
                             int max_steps, bool value_metrics_na) {
    std::vector<ActionStep> pred = top1_sequence(graph);
    std::vector<ActionStep> truth(gt.begin(), gt.end());
    if (max_steps > 0) {
        if (static_cast<int>(pred.size()) > max_steps) pred.resize(static_cast<size_t>(max_steps));
        if (static_cast<int>(truth.size()) > max_steps)
            truth.resize(static_cast<size_t>(max_steps));
    }
    ExampleMetrics m;
    m.action_em = exact_match(pred, truth, View::Action);
    m.action_ce = cascading_eval(pred, truth, View::Action);
    m.action_f1 = f1_score(pred, truth, View::Action);
    m.action_bleu = bleu_score(pred, truth, View::Action);
    if (value_metrics_na) {
        m.value_em = m.joint_em = kNaN;
        m.value_ce = m.joint_ce = kNaN;
        m.value_f1 = m.joint_f1 = kNaN;
        m.value_bleu = m.joint_bleu = kNaN;
    } else {
        m.value_em = exact_match(pred, truth, View::Value);
        m.joint_em = exact_match(pred, truth, View::Joint);
        m.value_ce = cascading_eval(pred, truth, View::Value);
        m.joint_ce = cascading_eval(pred, truth, View::Joint);
        m.value_f1 = f1_score(pred, truth, View::Value);
        m.joint_f1 = f1_score(pred, truth, View::Joint);
        m.value_bleu = bleu_score(pred, truth, View::Value);
        m.joint_bleu = bleu_score(pred, truth, View::Joint);
    }
    m.action_graph_nll = graph_nll(graph, truth);
    return m;
}

namespace {

using MetricField = double ExampleMetrics::*;

constexpr std::pair<const char*, MetricField> kMetricFields[] = {
    {"action_em", &ExampleMetrics::action_em},
    {"value_em", &ExampleMetrics::value_em},
    {"joint_em", &ExampleMetrics::joint_em},
    {"action_ce", &ExampleMetrics::action_ce},
    {"value_ce", &ExampleMetrics::value_ce},
    {"joint_ce", &ExampleMetrics::joint_ce},
    {"action_f1", &ExampleMetrics::action_f1},
    {"value_f1", &ExampleMetrics::value_f1},
    {"joint_f1", &ExampleMetrics::joint_f1},
    {"action_bleu", &ExampleMetrics::action_bleu},
    {"value_bleu", &ExampleMetrics::value_bleu},
    {"joint_bleu", &ExampleMetrics::joint_bleu},
    {"action_graph_nll", &ExampleMetrics::action_graph_nll},
};

bool is_value_field(const std::string& name) {
    return name.rfind("value_", 0) == 0 || name.rfind("joint_", 0) == 0;
}

} // namespace

MetricReport evaluate_dataset(const Predictor& predictor, std::span<const Dialogue> dialogues,
                              std::span<const SplitPoint> splits, const EvalOptions& options) {
    bool value_na = predictor.value_free();
    std::vector<ExampleMetrics> rows(splits.size());
    std::vector<char> failed(splits.size(), 0);

    auto worker = [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            const SplitPoint& point = splits[i];
            const Dialogue& dialogue = dialogues[static_cast<size_t>(point.dialogue_index)];
            try {
                ContextSplit split = split_at_action(dialogue, point.k);
                PredictionGraph graph = predictor.predict(split, dialogue.policy);
                rows[i] = score_example(graph, split.future_actions, options.max_steps, value_na);
            } catch (const std::exception&) {
                failed[i] = 1;
            }
            rows[i].dialogue_id = dialogue.id;
            rows[i].k = point.k;
        }
    };

    int jobs = std::max(1, options.jobs);
    if (jobs == 1 || splits.size() < 2) {
        worker(0, splits.size());
    } else {
        size_t n_threads = std::min<size_t>(static_cast<size_t>(jobs), splits.size());
        std::vector<std::thread> threads;
        size_t chunk = (splits.size() + n_threads - 1) / n_threads;
        for (size_t t = 0; t < n_threads; ++t) {
            size_t begin = t * chunk;
            size_t end = std::min(splits.size(), begin + chunk);
            if (begin < end) threads.emplace_back(worker, begin, end);
        }
        for (std::thread& thread : threads) thread.join();
    }

    MetricReport report;
    report.value_metrics_na = value_na;
    for (size_t i = 0; i < rows.size(); ++i) {
        if (failed[i]) {
            ++report.failures;
            continue;
        }
        ++report.count;
        for (const auto& [name, field] : kMetricFields) {
            report.means.*field += rows[i].*field;
        }
        if (options.keep_examples) {
            report.examples.push_back(std::move(rows[i]));
        }
    }
    if (report.count > 0) {
        for (const auto& [name, field] : kMetricFields) {
            report.means.*field /= static_cast<double>(report.count);
        }
    }
    if (value_na) {
        for (const auto& [name, field] : kMetricFields) {
            if (is_value_field(name)) report.means.*field = kNaN;
        }
    }
    return report;
}

nlohmann::json report_to_json(const MetricReport& report) {
    nlohmann::json means;
    for (const auto& [name, field] : kMetricFields) {
        double value = report.means.*field;
        means[name] = std::isnan(value) ? nlohmann::json(nullptr) : nlohmann::json(value);
    }
    return nlohmann::json{
        {"count", report.count},
        {"failures", report.failures},
        {"value_metrics_na", report.value_metrics_na},
        {"means", std::move(means)},
    };
}

std::string report_to_csv(const MetricReport& report) {
    std::ostringstream out;
    out << "dialogue_id,k";
    for (const auto& [name, field] : kMetricFields) out << ',' << name;
    out << '\n';
    out << std::setprecision(10);
    for (const ExampleMetrics& row : report.examples) {
        out << row.dialogue_id << ',' << row.k;
        for (const auto& [name, field] : kMetricFields) {
            double value = row.*field;
            out << ',';
            if (std::isnan(value)) {
                out << "NA";
            } else {
                out << value;
            }
        }
        out << '\n';
    }
    return out.str();
}

std::string report_to_table(const MetricReport& report) {
    std::ostringstream out;
    out << "examples: " << report.count << "  failures: " << report.failures << '\n';
    out << std::left;
    for (const auto& [name, field] : kMetricFields) {
        out << "  " << std::setw(18) << name;
        double value = report.means.*field;
        if (std::isnan(value)) {
            out << "N/A";
        } else {
            out << std::fixed << std::setprecision(4) << value;
            out.unsetf(std::ios::fixed);
        }
        out << '\n';
    }
    return out.str();
}

} // namespace astrack
