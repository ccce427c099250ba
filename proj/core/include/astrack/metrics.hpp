#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "astrack/action_graph.hpp"
#include "astrack/corpus.hpp"
#include "astrack/predictors.hpp"

namespace astrack {

/// Which face of a step a sequence metric compares: the action name, the
/// slot values, or both.
enum class View { Action, Value, Joint };

std::string_view to_string(View view);

/// Per-step strings under a view. Action: the name; Value: the bracketed
/// value list ("[]" when empty); Joint: the full step serialization.
std::vector<std::string> view_elements(std::span<const ActionStep> steps, View view);

/// 1 when the selected views match element-wise at equal length, else 0.
double exact_match(std::span<const ActionStep> pred, std::span<const ActionStep> gt, View view);

/// Prefix credit: the fraction of k in 1..|gt| for which the first k
/// predicted elements exactly equal the first k true ones. Steps predicted
/// beyond |gt| never penalize. Empty ground truth scores 1.
double cascading_eval(std::span<const ActionStep> pred, std::span<const ActionStep> gt,
                      View view);

/// Set precision/recall harmonic mean over deduplicated view elements.
/// Both sides empty -> 1; exactly one empty -> 0; no overlap -> 0.
double f1_score(std::span<const ActionStep> pred, std::span<const ActionStep> gt, View view);

/// Sentence BLEU-4 in [0, 100] over the serialized views ("; " joined),
/// tokenized by padding ";", "[", "]", "," with spaces. Uniform weights,
/// brevity penalty, add-one smoothing on zero-count precisions of order
/// >= 2. Both sides empty -> 100; exactly one empty -> 0.
double bleu_score(std::span<const ActionStep> pred, std::span<const ActionStep> gt, View view);

/// Probability charged for a transition the graph does not carry.
inline constexpr double kMissingEdgeProbability = 1e-30;

/// Negative log-likelihood of the true action names walked from the graph
/// root. Each step reads the normalized edge probability, falling back to
/// kMissingEdgeProbability when the node or edge is absent; the walk then
/// continues from the true name regardless. Empty ground truth -> 0.
double graph_nll(const PredictionGraph& graph, std::span<const ActionStep> gt);

struct ExampleMetrics {
    std::string dialogue_id;
    int k = 0;
    double action_em = 0, value_em = 0, joint_em = 0;
    double action_ce = 0, value_ce = 0, joint_ce = 0;
    double action_f1 = 0, value_f1 = 0, joint_f1 = 0;
    double action_bleu = 0, value_bleu = 0, joint_bleu = 0;
    double action_graph_nll = 0;
};

/// Per-example values plus dataset means (arithmetic). Value/joint fields
/// hold NaN and serialize as null when the predictor is value-free.
struct MetricReport {
    int count = 0;
    int failures = 0;
    bool value_metrics_na = false;
    ExampleMetrics means; // dialogue_id/k unused
    std::vector<ExampleMetrics> examples;
};

struct SplitPoint {
    int dialogue_index = 0;
    int k = 0;
};

/// Every (dialogue, k) with a non-empty future: k in [0, action_count).
std::vector<SplitPoint> enumerate_splits(std::span<const Dialogue> dialogues);

struct EvalOptions {
    /// When positive, both the top-1 prediction and the ground truth are cut
    /// to this many steps before scoring (the varying-N harness).
    int max_steps = 0;
    int jobs = 1;
    bool keep_examples = true;
};

/// Runs the predictor on every split point and scores it with the full
/// metric suite. A predictor failure on an example excludes that example
/// and increments `failures`. Aggregates are order-independent.
MetricReport evaluate_dataset(const Predictor& predictor, std::span<const Dialogue> dialogues,
                              std::span<const SplitPoint> splits, const EvalOptions& options = {});

/// Scores one (prediction graph, ground truth) pair; `value_metrics_na`
/// skips the value/joint families (stored as NaN).
ExampleMetrics score_example(const PredictionGraph& graph, std::span<const ActionStep> gt,
                             int max_steps, bool value_metrics_na);

nlohmann::json report_to_json(const MetricReport& report);
std::string report_to_csv(const MetricReport& report);
std::string report_to_table(const MetricReport& report);

} // namespace astrack
