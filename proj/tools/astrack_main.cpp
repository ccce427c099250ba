// astrack command-line interface: corpus ingestion, graph construction,
// evaluation, automation simulation and feature export.

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "astrack/action_graph.hpp"
#include "astrack/corpus.hpp"
#include "astrack/errors.hpp"
#include "astrack/io.hpp"
#include "astrack/metrics.hpp"
#include "astrack/predictors.hpp"
#include "astrack/simulator.hpp"

namespace {

using nlohmann::json;

struct Options {
    // corpus
    std::string input;
    std::string output;
    std::string format = "jsonl-v1";
    // predictor selection
    std::string predictor = "traversal"; // traversal|incontext|replay|oracle
    std::string train;                   // training corpus (graphs, index, percentile)
    std::string graph;                   // prebuilt policy-graph JSON (traversal)
    std::string replay_store;            // replay rollout dump
    int t_edge = 1;
    int max_len = 0; // 0 -> derive from the length percentile of the training corpus
    double percentile = 99.0;
    int top_k = 5;
    int rollouts = 20;
    std::string retrieval_features = "utterances+actions";
    std::string prediction_features = "utterances+actions";
    std::string vectorizer = "hashed-tfidf";
    std::string vectors; // precomputed index vectors (JSONL)
    bool same_policy_only = false;
    // completion client
    std::string client = "http"; // http|echo
    std::string endpoint_url;    // falls back to AST_COMPLETION_URL
    std::string model = "gpt-3.5-turbo";
    double temperature = 0.7;
    int max_prompt_chars = 0;
    // run control
    int jobs = 1;
    std::uint64_t seed = 0;
    int sample = 0;    // evaluate on a random subset of this many examples
    int at_k = -1;     // restrict evaluation to split point k (-1 = all)
    int max_steps = 0; // truncate predictions and truth to N steps
    // outputs
    std::string out;
    std::string per_example;
    std::string per_conversation;
    std::string dot;
    // evaluate/simulate inputs
    std::string eval;
    std::string mode = "both"; // one-step|multi-step|both
    bool action_only = false;
    bool micro_average = false;
    // export-features
    std::string source = "oracle"; // oracle|predicted
    int max_actions = 0;
    // predict
    std::string dialogue_id;
    int k = 0;
    bool show_prompt = false;
};

void apply_config_file(const std::string& path, Options& options) {
    json config = json::parse(astrack::read_file(path));
    if (!config.is_object()) {
        throw astrack::ValidationError("config file must hold a JSON object");
    }
    for (const auto& [key, value] : config.items()) {
        if (key == "input") options.input = value.get<std::string>();
        else if (key == "output") options.output = value.get<std::string>();
        else if (key == "format") options.format = value.get<std::string>();
        else if (key == "predictor") options.predictor = value.get<std::string>();
        else if (key == "train") options.train = value.get<std::string>();
        else if (key == "graph") options.graph = value.get<std::string>();
        else if (key == "replay_store") options.replay_store = value.get<std::string>();
        else if (key == "t_edge") options.t_edge = value.get<int>();
        else if (key == "max_len") options.max_len = value.get<int>();
        else if (key == "percentile") options.percentile = value.get<double>();
        else if (key == "top_k") options.top_k = value.get<int>();
        else if (key == "rollouts") options.rollouts = value.get<int>();
        else if (key == "retrieval_features") options.retrieval_features = value.get<std::string>();
        else if (key == "prediction_features")
            options.prediction_features = value.get<std::string>();
        else if (key == "vectorizer") options.vectorizer = value.get<std::string>();
        else if (key == "vectors") options.vectors = value.get<std::string>();
        else if (key == "same_policy_only") options.same_policy_only = value.get<bool>();
        else if (key == "client") options.client = value.get<std::string>();
        else if (key == "endpoint_url") options.endpoint_url = value.get<std::string>();
        else if (key == "model") options.model = value.get<std::string>();
        else if (key == "temperature") options.temperature = value.get<double>();
        else if (key == "max_prompt_chars") options.max_prompt_chars = value.get<int>();
        else if (key == "jobs") options.jobs = value.get<int>();
        else if (key == "seed") options.seed = value.get<std::uint64_t>();
        else if (key == "sample") options.sample = value.get<int>();
        else if (key == "at_k") options.at_k = value.get<int>();
        else if (key == "max_steps") options.max_steps = value.get<int>();
        else if (key == "eval") options.eval = value.get<std::string>();
        else if (key == "mode") options.mode = value.get<std::string>();
        else if (key == "action_only") options.action_only = value.get<bool>();
        else if (key == "micro_average") options.micro_average = value.get<bool>();
        else if (key == "source") options.source = value.get<std::string>();
        else if (key == "max_actions") options.max_actions = value.get<int>();
        else throw astrack::ValidationError("unknown config key \"" + key + "\"");
    }
}

std::vector<astrack::Dialogue> load_required(const std::string& path, const std::string& what,
                                             const std::string& format) {
    if (path.empty()) {
        throw astrack::ValidationError("missing " + what + " corpus path");
    }
    return astrack::load_corpus(path, format);
}

int resolve_max_len(const Options& options, const std::vector<astrack::Dialogue>& reference) {
    if (options.max_len > 0) return options.max_len;
    return astrack::sequence_length_percentile(reference, options.percentile);
}

std::shared_ptr<const astrack::CompletionClient> make_client(const Options& options) {
    if (options.client == "echo") {
        return std::make_shared<astrack::EchoTopExampleClient>();
    }
    if (options.client == "http") {
        astrack::HttpClientConfig config;
        config.url = options.endpoint_url;
        config.model = options.model;
        config.temperature = options.temperature;
        return std::make_shared<astrack::HttpCompletionClient>(
            astrack::apply_env_overrides(std::move(config)));
    }
    throw astrack::ValidationError("unknown client \"" + options.client +
                                   "\" (expected http or echo)");
}

/// Builds the configured predictor. `eval_corpus` backs the oracle predictor
/// and the max_len fallback when no training corpus is given.
std::unique_ptr<astrack::Predictor> make_predictor(
    const Options& options, const std::vector<astrack::Dialogue>& eval_corpus) {
    if (options.predictor == "traversal") {
        astrack::PolicyGraphSet graphs;
        if (!options.graph.empty()) {
            graphs = astrack::policy_graphs_from_json(json::parse(astrack::read_file(options.graph)));
        } else {
            std::vector<astrack::Dialogue> train =
                load_required(options.train, "training", options.format);
            graphs = astrack::build_policy_graphs(train, options.t_edge,
                                                  resolve_max_len(options, train));
        }
        return std::make_unique<astrack::TraversalPredictor>(std::move(graphs));
    }
    if (options.predictor == "incontext") {
        auto train = std::make_shared<std::vector<astrack::Dialogue>>(
            load_required(options.train, "training", options.format));
        astrack::PromptSpec spec;
        spec.top_k = options.top_k;
        spec.num_rollouts = options.rollouts;
        spec.retrieval_features = astrack::feature_mode_from_string(options.retrieval_features);
        spec.prediction_features = astrack::feature_mode_from_string(options.prediction_features);
        spec.temperature = options.temperature;
        spec.max_prompt_chars = options.max_prompt_chars;
        astrack::RetrievalIndex index =
            astrack::build_index(train, spec.retrieval_features, options.vectorizer);
        if (!options.vectors.empty()) {
            index.load_vectors(options.vectors);
        }
        int max_len = resolve_max_len(options, *train);
        return std::make_unique<astrack::InContextPredictor>(
            std::move(spec), std::move(index), make_client(options), max_len,
            options.same_policy_only);
    }
    if (options.predictor == "replay") {
        if (options.replay_store.empty()) {
            throw astrack::ValidationError("replay predictor requires --replay-store");
        }
        astrack::ReplayStore store = astrack::ReplayStore::load(options.replay_store);
        int max_len = options.max_len;
        if (max_len <= 0) {
            max_len = astrack::sequence_length_percentile(
                options.train.empty() ? eval_corpus
                                      : load_required(options.train, "training", options.format),
                options.percentile);
        }
        return std::make_unique<astrack::ReplayPredictor>(std::move(store), max_len);
    }
    if (options.predictor == "oracle") {
        // The oracle replays the ground truth; never truncate it.
        int max_len = 1;
        for (const astrack::Dialogue& dialogue : eval_corpus) {
            max_len = std::max(max_len, dialogue.action_count());
        }
        return std::make_unique<astrack::ReplayPredictor>(
            astrack::ReplayStore::from_ground_truth(eval_corpus), max_len);
    }
    throw astrack::ValidationError("unknown predictor \"" + options.predictor +
                                   "\" (expected traversal, incontext, replay or oracle)");
}

int run_ingest(const Options& options) {
    std::vector<astrack::Dialogue> dialogues =
        load_required(options.input, "input", options.format);
    if (!options.output.empty()) {
        astrack::save_corpus(dialogues, options.output);
    }
    std::set<std::string> vocabulary;
    std::vector<int> lengths;
    for (const astrack::Dialogue& dialogue : dialogues) {
        for (const astrack::ActionStep& step : dialogue.workflow()) {
            vocabulary.insert(step.name);
        }
        lengths.push_back(dialogue.action_count());
    }
    std::sort(lengths.begin(), lengths.end());
    auto length_percentile = [&](double q) {
        if (lengths.empty()) return 0;
        auto rank = static_cast<size_t>(std::ceil(q * static_cast<double>(lengths.size()) / 100.0));
        rank = std::clamp<size_t>(rank, 1, lengths.size());
        return lengths[rank - 1];
    };
    std::cout << "dialogues: " << dialogues.size() << '\n';
    std::cout << "action vocabulary: " << vocabulary.size() << '\n';
    std::cout << "actions per dialogue p50/p90/p99: " << length_percentile(50.0) << '/'
              << length_percentile(90.0) << '/' << length_percentile(99.0) << '\n';
    std::cout << "max_len (99th-percentile rule): " << length_percentile(99.0) << '\n';
    if (!options.output.empty()) {
        std::cout << "wrote " << options.output << '\n';
    }
    return 0;
}

int run_build_graph(const Options& options) {
    std::vector<astrack::Dialogue> train =
        load_required(options.train, "training", options.format);
    astrack::PolicyGraphSet graphs =
        astrack::build_policy_graphs(train, options.t_edge, resolve_max_len(options, train));
    if (options.out.empty()) {
        throw astrack::ValidationError("build-graph requires --out");
    }
    astrack::write_file_atomic(options.out, astrack::policy_graphs_to_json(graphs).dump(2) + "\n");
    std::cout << "policies: " << graphs.policies.size() << "  t_edge: " << graphs.edge_threshold
              << "  max_len: " << graphs.max_len << '\n';
    std::cout << "wrote " << options.out << '\n';
    if (!options.dot.empty()) {
        astrack::write_file_atomic(options.dot, astrack::to_dot(graphs));
        std::cout << "wrote " << options.dot << '\n';
    }
    return 0;
}

std::vector<astrack::SplitPoint> select_splits(const Options& options,
                                               const std::vector<astrack::Dialogue>& dialogues) {
    std::vector<astrack::SplitPoint> splits = astrack::enumerate_splits(dialogues);
    if (options.at_k >= 0) {
        std::erase_if(splits,
                      [&](const astrack::SplitPoint& point) { return point.k != options.at_k; });
    }
    if (options.sample > 0 && options.sample < static_cast<int>(splits.size())) {
        std::vector<size_t> order(splits.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(options.seed);
        std::shuffle(order.begin(), order.end(), rng);
        order.resize(static_cast<size_t>(options.sample));
        std::sort(order.begin(), order.end());
        std::vector<astrack::SplitPoint> subset;
        subset.reserve(order.size());
        for (size_t index : order) subset.push_back(splits[index]);
        splits = std::move(subset);
    }
    return splits;
}

int run_evaluate(const Options& options) {
    std::vector<astrack::Dialogue> dialogues = load_required(options.eval, "eval", options.format);
    std::unique_ptr<astrack::Predictor> predictor = make_predictor(options, dialogues);
    std::vector<astrack::SplitPoint> splits = select_splits(options, dialogues);
    astrack::EvalOptions eval_options;
    eval_options.max_steps = options.max_steps;
    eval_options.jobs = options.jobs;
    eval_options.keep_examples = !options.per_example.empty();
    astrack::MetricReport report =
        astrack::evaluate_dataset(*predictor, dialogues, splits, eval_options);
    std::cout << astrack::report_to_table(report);
    if (!options.out.empty()) {
        astrack::write_file_atomic(options.out, astrack::report_to_json(report).dump(2) + "\n");
        std::cout << "wrote " << options.out << '\n';
    }
    if (!options.per_example.empty()) {
        astrack::write_file_atomic(options.per_example, astrack::report_to_csv(report));
        std::cout << "wrote " << options.per_example << '\n';
    }
    return 0;
}

int run_simulate(const Options& options) {
    std::vector<astrack::Dialogue> dialogues = load_required(options.eval, "eval", options.format);
    std::unique_ptr<astrack::Predictor> predictor = make_predictor(options, dialogues);
    std::vector<astrack::AssistMode> modes;
    if (options.mode == "both") {
        modes = {astrack::AssistMode::OneStep, astrack::AssistMode::MultiStep};
    } else {
        modes = {astrack::assist_mode_from_string(options.mode)};
    }
    std::vector<astrack::SimulationReport> reports;
    for (astrack::AssistMode mode : modes) {
        astrack::SimulationConfig config;
        config.mode = mode;
        config.joint_approval = !options.action_only;
        config.micro_average = options.micro_average;
        config.jobs = options.jobs;
        reports.push_back(astrack::run_simulation(config, *predictor, dialogues));
    }
    std::cout << astrack::simulation_table(reports);
    if (!options.out.empty()) {
        json object = json::object();
        for (const astrack::SimulationReport& report : reports) {
            object[std::string(astrack::to_string(report.mode))] =
                astrack::simulation_to_json(report);
        }
        astrack::write_file_atomic(options.out, object.dump(2) + "\n");
        std::cout << "wrote " << options.out << '\n';
    }
    if (!options.per_conversation.empty()) {
        astrack::write_file_atomic(options.per_conversation,
                                   astrack::simulation_to_csv(reports.back()));
        std::cout << "wrote " << options.per_conversation << '\n';
    }
    return 0;
}

int run_export_features(const Options& options) {
    std::vector<astrack::Dialogue> dialogues =
        load_required(options.input.empty() ? options.eval : options.input, "input",
                      options.format);
    astrack::FeatureSource source;
    if (options.source == "oracle") {
        source = astrack::FeatureSource::Oracle;
    } else if (options.source == "predicted") {
        source = astrack::FeatureSource::Predicted;
    } else {
        throw astrack::ValidationError("unknown feature source \"" + options.source +
                                       "\" (expected oracle or predicted)");
    }
    std::unique_ptr<astrack::Predictor> predictor;
    if (source == astrack::FeatureSource::Predicted) {
        predictor = make_predictor(options, dialogues);
    }
    std::vector<astrack::FeatureRecord> records = astrack::export_feature_records(
        dialogues, source, predictor.get(), options.max_actions);
    if (options.out.empty()) {
        throw astrack::ValidationError("export-features requires --out");
    }
    std::string body;
    for (const astrack::FeatureRecord& record : records) {
        body += astrack::feature_record_to_json(record).dump();
        body += '\n';
    }
    astrack::write_file_atomic(options.out, body);
    std::cout << "wrote " << records.size() << " records to " << options.out << '\n';
    return 0;
}

int run_predict(const Options& options) {
    std::vector<astrack::Dialogue> dialogues = load_required(options.eval, "eval", options.format);
    const astrack::Dialogue* dialogue = nullptr;
    for (const astrack::Dialogue& candidate : dialogues) {
        if (candidate.id == options.dialogue_id) {
            dialogue = &candidate;
            break;
        }
    }
    if (dialogue == nullptr) {
        throw astrack::ValidationError("no dialogue with id \"" + options.dialogue_id + "\"");
    }
    std::unique_ptr<astrack::Predictor> predictor = make_predictor(options, dialogues);
    astrack::ContextSplit split = astrack::split_at_action(*dialogue, options.k);
    if (options.show_prompt) {
        if (const auto* incontext =
                dynamic_cast<const astrack::InContextPredictor*>(predictor.get())) {
            std::cout << incontext->prompt_for(split, dialogue->policy) << "\n---\n";
        }
    }
    astrack::PredictionGraph graph = predictor->predict(split, dialogue->policy);
    std::cout << astrack::graph_to_json(graph).dump(2) << '\n';
    std::cout << "top1: " << astrack::format_action_sequence(astrack::top1_sequence(graph))
              << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    Options options;

    // First pass: an optional JSON config file seeds the defaults; explicit
    // flags still win because CLI11 only writes parsed options.
    std::string config_path;
    for (int i = 1; i < argc; ++i) {
        std::string_view arg = argv[i];
        if (arg == "--config" && i + 1 < argc) {
            config_path = argv[i + 1];
        } else if (arg.rfind("--config=", 0) == 0) {
            config_path = std::string(arg.substr(9));
        }
    }
    try {
        if (!config_path.empty()) {
            apply_config_file(config_path, options);
        }
    } catch (const astrack::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }

    CLI::App app{"Multi-step workflow action prediction toolkit"};
    app.require_subcommand(1);
    std::string config_dummy;
    app.add_option("--config", config_dummy, "JSON config file seeding option defaults");

    auto add_corpus_options = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_dummy,
                        "JSON config file seeding option defaults (applied before flags)");
        cmd->add_option("--format", options.format, "Corpus format id")
            ->capture_default_str();
    };
    auto add_predictor_options = [&](CLI::App* cmd) {
        cmd->add_option("--predictor", options.predictor,
                        "traversal | incontext | replay | oracle")
            ->capture_default_str();
        cmd->add_option("--train", options.train, "Training corpus (jsonl-v1)");
        cmd->add_option("--graph", options.graph, "Prebuilt policy-graph JSON (traversal)");
        cmd->add_option("--replay-store", options.replay_store,
                        "Rollout dump for the replay predictor");
        cmd->add_option("--t-edge", options.t_edge, "Edge count threshold")
            ->capture_default_str();
        cmd->add_option("--max-len", options.max_len,
                        "Max predicted sequence length (0 derives it from --percentile)")
            ->capture_default_str();
        cmd->add_option("--percentile", options.percentile,
                        "Length percentile used when --max-len is 0")
            ->capture_default_str();
        cmd->add_option("--top-k,-K", options.top_k, "Retrieved examples per prompt")
            ->capture_default_str();
        cmd->add_option("--rollouts,-R", options.rollouts, "Rollouts per prediction")
            ->capture_default_str();
        cmd->add_option("--retrieval-features", options.retrieval_features,
                        "utterances+actions | utterances | actions")
            ->capture_default_str();
        cmd->add_option("--prediction-features", options.prediction_features,
                        "utterances+actions | utterances | actions")
            ->capture_default_str();
        cmd->add_option("--vectorizer", options.vectorizer, "Retrieval vectorizer id")
            ->capture_default_str();
        cmd->add_option("--vectors", options.vectors,
                        "Precomputed index vectors (JSONL of {entry_id, vector})");
        cmd->add_flag("--same-policy-only", options.same_policy_only,
                      "Restrict retrieval to the test example's policy");
        cmd->add_option("--client", options.client, "Completion client: http | echo")
            ->capture_default_str();
        cmd->add_option("--endpoint-url", options.endpoint_url,
                        "Completion endpoint (default: AST_COMPLETION_URL)");
        cmd->add_option("--model", options.model, "Completion model name")
            ->capture_default_str();
        cmd->add_option("--temperature", options.temperature, "Sampling temperature")
            ->capture_default_str();
        cmd->add_option("--max-prompt-chars", options.max_prompt_chars,
                        "Prompt size cap; least-similar examples are dropped to fit");
        cmd->add_option("--jobs", options.jobs, "Parallel workers")->capture_default_str();
        cmd->add_option("--seed", options.seed, "Random seed for --sample")
            ->capture_default_str();
    };

    CLI::App* ingest = app.add_subcommand("ingest", "Validate a corpus and print summary stats");
    ingest->add_option("--input", options.input, "Input corpus")->required();
    ingest->add_option("--output", options.output, "Validated canonical corpus to write");
    add_corpus_options(ingest);

    CLI::App* build_graph =
        app.add_subcommand("build-graph", "Build per-policy transition graphs");
    build_graph->add_option("--train", options.train, "Training corpus")->required();
    build_graph->add_option("--t-edge", options.t_edge, "Edge count threshold")
        ->capture_default_str();
    build_graph->add_option("--max-len", options.max_len,
                            "Max predicted sequence length (0 derives it from --percentile)")
        ->capture_default_str();
    build_graph->add_option("--percentile", options.percentile,
                            "Length percentile used when --max-len is 0")
        ->capture_default_str();
    build_graph->add_option("--out", options.out, "Graph JSON output")->required();
    build_graph->add_option("--dot", options.dot, "Also write Graphviz text here");
    add_corpus_options(build_graph);

    CLI::App* evaluate = app.add_subcommand("evaluate", "Score a predictor on a corpus");
    evaluate->add_option("--eval", options.eval, "Evaluation corpus")->required();
    evaluate->add_option("--out", options.out, "Metric report JSON output");
    evaluate->add_option("--per-example", options.per_example, "Per-example CSV output");
    evaluate->add_option("--sample", options.sample,
                         "Evaluate a random subset of this many examples");
    evaluate->add_option("--at-k", options.at_k,
                         "Evaluate only split point k (default: every split point)");
    evaluate->add_option("--max-steps", options.max_steps,
                         "Truncate predictions and truth to N steps before scoring");
    add_predictor_options(evaluate);
    add_corpus_options(evaluate);

    CLI::App* simulate = app.add_subcommand("simulate", "Replay automation assistance");
    simulate->add_option("--eval", options.eval, "Conversation corpus")->required();
    simulate->add_option("--mode", options.mode, "one-step | multi-step | both")
        ->capture_default_str();
    simulate->add_option("--out", options.out, "Simulation report JSON output");
    simulate->add_option("--per-conversation", options.per_conversation,
                         "Per-conversation CSV output (last mode run)");
    simulate->add_flag("--action-only", options.action_only,
                       "Approve on action name only, ignoring slot values");
    simulate->add_flag("--micro-average", options.micro_average,
                       "Pool counts across conversations instead of macro-averaging");
    add_predictor_options(simulate);
    add_corpus_options(simulate);

    CLI::App* export_features =
        app.add_subcommand("export-features", "Emit statistic-prediction feature records");
    export_features->add_option("--input", options.input, "Corpus to export from")->required();
    export_features->add_option("--source", options.source, "oracle | predicted")
        ->capture_default_str();
    export_features->add_option("--max-actions", options.max_actions,
                                "Keep at most this many action features (0 = all)");
    export_features->add_option("--out", options.out, "JSONL output")->required();
    add_predictor_options(export_features);
    add_corpus_options(export_features);

    CLI::App* predict = app.add_subcommand("predict", "Ad-hoc prediction for one context");
    predict->add_option("--eval", options.eval, "Corpus holding the context")->required();
    predict->add_option("--id", options.dialogue_id, "Dialogue id")->required();
    predict->add_option("--k", options.k, "Split point (action ordinal)")
        ->capture_default_str();
    predict->add_flag("--show-prompt", options.show_prompt,
                      "Print the assembled prompt (in-context predictor)");
    add_predictor_options(predict);
    add_corpus_options(predict);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (ingest->parsed()) return run_ingest(options);
        if (build_graph->parsed()) return run_build_graph(options);
        if (evaluate->parsed()) return run_evaluate(options);
        if (simulate->parsed()) return run_simulate(options);
        if (export_features->parsed()) return run_export_features(options);
        if (predict->parsed()) return run_predict(options);
    } catch (const astrack::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
