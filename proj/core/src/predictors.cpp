#include "astrack/predictors.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <semaphore>
#include <thread>

#include <httplib.h>

namespace astrack {

const char* kDefaultInstruction =
    "You are a helping a user with a customer service issue. Predict the sequence of "
    "actions the system should take in the future. Follow the format in the examples: "
    "add optional values in square brackets and add a semicolon between actions.";

std::string_view to_string(FeatureMode mode) {
    switch (mode) {
    case FeatureMode::UtterancesAndActions: return "utterances+actions";
    case FeatureMode::Utterances: return "utterances";
    case FeatureMode::Actions: return "actions";
    }
    return "utterances+actions";
}

FeatureMode feature_mode_from_string(std::string_view s) {
    if (s == "utterances+actions") return FeatureMode::UtterancesAndActions;
    if (s == "utterances") return FeatureMode::Utterances;
    if (s == "actions") return FeatureMode::Actions;
    throw ValidationError("unknown feature mode \"" + std::string(s) +
                          "\" (expected utterances+actions, utterances or actions)");
}

std::string render_context(std::span<const Turn> turns, FeatureMode mode) {
    std::string out;
    bool first = true;
    for (const Turn& turn : turns) {
        if (turn.is_action() && mode == FeatureMode::Utterances) continue;
        if (turn.is_utterance() && mode == FeatureMode::Actions) continue;
        if (!first) out += '\n';
        first = false;
        if (turn.is_action()) {
            out += "action: ";
            out += serialize_step(turn.action);
        } else {
            out += turn.kind == TurnKind::User ? "user: " : "system: ";
            out += turn.text;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prompting
// ---------------------------------------------------------------------------

namespace {

std::string prompt_with_examples(const PromptSpec& spec, const RetrievalIndex& index,
                                 std::span<const RetrievalHit> hits,
                                 const std::string& test_context_text) {
    std::string out = spec.instruction;
    int block = 0;
    for (const RetrievalHit& hit : hits) {
        const IndexEntry& entry = index.entries()[static_cast<size_t>(hit.entry_id)];
        ContextSplit split = split_at_action(index.dialogue_of(entry), entry.k);
        out += "\n\nExample#" + std::to_string(++block) + ":\n";
        out += render_context(split.context, spec.prediction_features);
        out += "\nActions: ";
        out += entry.target;
    }
    out += "\n\nExample#" + std::to_string(++block) + ":\n";
    out += test_context_text;
    out += "\nActions:";
    return out;
}

} // namespace

std::string assemble_prompt(const PromptSpec& spec, const RetrievalIndex& index,
                            std::span<const RetrievalHit> hits,
                            const std::string& test_context_text) {
    std::string out = prompt_with_examples(spec, index, hits, test_context_text);
    if (spec.max_prompt_chars > 0) {
        // Drop the least-similar examples until the prompt fits (keep one).
        size_t keep = hits.size();
        while (static_cast<int>(out.size()) > spec.max_prompt_chars && keep > 1) {
            --keep;
            out = prompt_with_examples(spec, index, hits.subspan(0, keep), test_context_text);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Completion clients
// ---------------------------------------------------------------------------

std::vector<std::string> EchoTopExampleClient::complete(const std::string& prompt,
                                                        int n) const {
    static constexpr std::string_view kMarker = "\nActions: ";
    std::string echoed;
    size_t pos = prompt.find(kMarker);
    if (pos != std::string::npos) {
        size_t begin = pos + kMarker.size();
        size_t end = prompt.find('\n', begin);
        echoed = prompt.substr(begin, end == std::string::npos ? end : end - begin);
    }
    return std::vector<std::string>(static_cast<size_t>(n), echoed);
}

HttpClientConfig apply_env_overrides(HttpClientConfig config) {
    if (config.url.empty()) {
        if (const char* url = std::getenv("AST_COMPLETION_URL")) config.url = url;
    }
    if (config.api_key.empty()) {
        if (const char* key = std::getenv("AST_COMPLETION_KEY")) config.api_key = key;
    }
    return config;
}

struct HttpCompletionClient::Impl {
    HttpClientConfig config;
    std::string base;
    std::string path;
    mutable std::counting_semaphore<> in_flight;

    explicit Impl(HttpClientConfig cfg)
        : config(std::move(cfg)), in_flight(std::max(1, config.max_concurrency)) {
        if (config.url.empty()) {
            throw ValidationError(
                "completion endpoint URL not configured (set AST_COMPLETION_URL)");
        }
        size_t scheme_end = config.url.find("://");
        if (scheme_end == std::string::npos) {
            throw ValidationError("completion URL must include a scheme: " + config.url);
        }
        size_t path_begin = config.url.find('/', scheme_end + 3);
        if (path_begin == std::string::npos) {
            base = config.url;
            path = "/";
        } else {
            base = config.url.substr(0, path_begin);
            path = config.url.substr(path_begin);
        }
    }
};

HttpCompletionClient::HttpCompletionClient(HttpClientConfig config)
    : impl_(std::make_unique<Impl>(std::move(config))) {}

HttpCompletionClient::~HttpCompletionClient() = default;

std::vector<std::string> HttpCompletionClient::complete(const std::string& prompt,
                                                        int n) const {
    impl_->in_flight.acquire();
    struct Release {
        std::counting_semaphore<>& sem;
        ~Release() { sem.release(); }
    } release{impl_->in_flight};

    nlohmann::json body;
    body["model"] = impl_->config.model;
    body["messages"] = nlohmann::json::array({
        nlohmann::json{{"role", "user"}, {"content", prompt}},
    });
    body["n"] = n;
    body["temperature"] = impl_->config.temperature;

    httplib::Client client(impl_->base);
    client.set_connection_timeout(impl_->config.timeout_seconds, 0);
    client.set_read_timeout(impl_->config.timeout_seconds, 0);
    httplib::Headers headers;
    if (!impl_->config.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + impl_->config.api_key);
    }
    httplib::Result result = client.Post(impl_->path, headers, body.dump(), "application/json");
    if (!result) {
        throw Error("completion request to " + impl_->config.url +
                    " failed: " + httplib::to_string(result.error()));
    }
    if (result->status != 200) {
        throw Error("completion endpoint returned status " + std::to_string(result->status) +
                    ": " + result->body.substr(0, 200));
    }
    nlohmann::json response;
    try {
        response = nlohmann::json::parse(result->body);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(std::string("completion response is not JSON: ") + e.what());
    }
    if (!response.contains("choices") || !response["choices"].is_array()) {
        throw Error("completion response carries no \"choices\" array");
    }
    std::vector<std::string> completions;
    for (const nlohmann::json& choice : response["choices"]) {
        if (choice.contains("message") && choice["message"].contains("content")) {
            completions.push_back(choice["message"]["content"].get<std::string>());
        } else if (choice.contains("text")) {
            completions.push_back(choice["text"].get<std::string>());
        } else {
            throw Error("completion choice carries neither message.content nor text");
        }
    }
    if (static_cast<int>(completions.size()) != n) {
        throw Error("completion endpoint returned " + std::to_string(completions.size()) +
                    " choices, expected " + std::to_string(n));
    }
    return completions;
}

// ---------------------------------------------------------------------------
// Predictors
// ---------------------------------------------------------------------------

PredictionGraph TraversalPredictor::predict(const ContextSplit& split,
                                            const std::string& policy) const {
    return traverse(graphs_, policy, split.last_action);
}

PredictionGraph rollouts_to_graph(const std::optional<ActionStep>& last_action,
                                  std::span<const std::string> rollout_strings, int max_len) {
    std::vector<std::vector<ActionStep>> rollouts;
    rollouts.reserve(rollout_strings.size());
    for (const std::string& text : rollout_strings) {
        try {
            rollouts.push_back(parse_action_string(text));
        } catch (const ParseError&) {
            // Unparseable model output; drop the rollout, keep the rest.
        }
    }
    std::string root = last_action.has_value() ? last_action->name : std::string(kStartNode);
    if (rollouts.empty()) {
        return root_only_graph(root, max_len, /*retain_empty_rollouts=*/true);
    }
    return aggregate_rollouts(last_action, std::move(rollouts), max_len);
}

InContextPredictor::InContextPredictor(PromptSpec spec, RetrievalIndex index,
                                       std::shared_ptr<const CompletionClient> client,
                                       int max_len, bool same_policy_only, int retry_attempts,
                                       int retry_backoff_ms)
    : spec_(std::move(spec)),
      index_(std::move(index)),
      client_(std::move(client)),
      max_len_(max_len),
      same_policy_only_(same_policy_only),
      retry_attempts_(retry_attempts),
      retry_backoff_ms_(retry_backoff_ms) {
    if (spec_.top_k < 1 || spec_.num_rollouts < 1) {
        throw ValidationError("prompt spec requires top_k >= 1 and num_rollouts >= 1");
    }
    if (!client_) {
        throw ValidationError("in-context predictor requires a completion client");
    }
}

std::string InContextPredictor::prompt_for(const ContextSplit& split,
                                           const std::string& policy) const {
    std::string query = render_context(split.context, spec_.retrieval_features);
    std::function<bool(const IndexEntry&)> filter;
    if (same_policy_only_) {
        filter = [&policy](const IndexEntry& entry) { return entry.policy == policy; };
    }
    std::vector<RetrievalHit> hits = index_.top_k(query, spec_.top_k, filter);
    std::string test_context = render_context(split.context, spec_.prediction_features);
    return assemble_prompt(spec_, index_, hits, test_context);
}

PredictionGraph InContextPredictor::predict(const ContextSplit& split,
                                            const std::string& policy) const {
    std::string prompt = prompt_for(split, policy);
    std::vector<std::string> completions;
    for (int attempt = 0;; ++attempt) {
        try {
            completions = client_->complete(prompt, spec_.num_rollouts);
            break;
        } catch (const std::exception& e) {
            if (attempt + 1 >= retry_attempts_) {
                throw Error("completion client failed after " +
                            std::to_string(retry_attempts_) + " attempts: " + e.what());
            }
            auto backoff = std::chrono::milliseconds(retry_backoff_ms_) * (1 << attempt);
            std::this_thread::sleep_for(backoff);
        }
    }
    if (static_cast<int>(completions.size()) != spec_.num_rollouts) {
        throw Error("completion client returned " + std::to_string(completions.size()) +
                    " rollouts, expected " + std::to_string(spec_.num_rollouts));
    }
    return rollouts_to_graph(split.last_action, completions, max_len_);
}

ReplayStore ReplayStore::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open replay store \"" + path + "\"");
    }
    ReplayStore store;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        nlohmann::json object;
        try {
            object = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError("replay store line " + std::to_string(line_no) +
                                  ": malformed JSON: " + e.what());
        }
        if (!object.contains("id") || !object["id"].is_string() || !object.contains("k") ||
            !object["k"].is_number_integer() || !object.contains("rollouts") ||
            !object["rollouts"].is_array()) {
            throw ValidationError("replay store line " + std::to_string(line_no) +
                                  ": expected {\"id\": str, \"k\": int, \"rollouts\": [str]}");
        }
        std::vector<std::string> rollouts;
        for (const nlohmann::json& rollout : object["rollouts"]) {
            if (!rollout.is_string()) {
                throw ValidationError("replay store line " + std::to_string(line_no) +
                                      ": rollouts must be strings");
            }
            rollouts.push_back(rollout.get<std::string>());
        }
        if (rollouts.empty()) {
            throw ValidationError("replay store line " + std::to_string(line_no) +
                                  ": empty rollout list");
        }
        std::string id = object["id"].get<std::string>();
        int k = object["k"].get<int>();
        if (store.find(id, k) != nullptr) {
            throw ValidationError("replay store line " + std::to_string(line_no) +
                                  ": duplicate key (" + id + ", " + std::to_string(k) + ")");
        }
        store.insert(std::move(id), k, std::move(rollouts));
    }
    return store;
}

ReplayStore ReplayStore::from_ground_truth(std::span<const Dialogue> dialogues, int copies) {
    ReplayStore store;
    for (const Dialogue& dialogue : dialogues) {
        int n = dialogue.action_count();
        for (int k = 0; k < n; ++k) {
            ContextSplit split = split_at_action(dialogue, k);
            std::string target = format_action_sequence(split.future_actions);
            store.insert(dialogue.id, k,
                         std::vector<std::string>(static_cast<size_t>(std::max(1, copies)),
                                                  target));
        }
    }
    return store;
}

void ReplayStore::insert(const std::string& dialogue_id, int k,
                         std::vector<std::string> rollouts) {
    entries_[{dialogue_id, k}] = std::move(rollouts);
}

const std::vector<std::string>* ReplayStore::find(const std::string& dialogue_id, int k) const {
    auto it = entries_.find({dialogue_id, k});
    return it == entries_.end() ? nullptr : &it->second;
}

PredictionGraph ReplayPredictor::predict(const ContextSplit& split,
                                         const std::string& policy) const {
    (void)policy;
    const std::vector<std::string>* rollouts = store_.find(split.dialogue_id, split.k);
    if (rollouts == nullptr) {
        throw Error("replay store has no entry for (" + split.dialogue_id + ", " +
                    std::to_string(split.k) + ")");
    }
    return rollouts_to_graph(split.last_action, *rollouts, max_len_);
}

// ---------------------------------------------------------------------------
// Feature export
// ---------------------------------------------------------------------------

std::vector<FeatureRecord> export_feature_records(std::span<const Dialogue> dialogues,
                                                  FeatureSource source,
                                                  const Predictor* predictor, int max_actions) {
    if (source == FeatureSource::Predicted && predictor == nullptr) {
        throw ValidationError("predicted feature export requires a predictor");
    }
    std::vector<FeatureRecord> records;
    for (const Dialogue& dialogue : dialogues) {
        int n = dialogue.action_count();
        for (int k = 0; k < n; ++k) {
            ContextSplit split = split_at_action(dialogue, k);
            FeatureRecord record;
            record.id = dialogue.id;
            record.k = k;
            record.context_text =
                render_context(split.context, FeatureMode::UtterancesAndActions);
            std::vector<ActionStep> steps;
            if (source == FeatureSource::Oracle) {
                steps = split.future_actions;
            } else {
                steps = top1_sequence(predictor->predict(split, dialogue.policy));
            }
            if (max_actions > 0 && static_cast<int>(steps.size()) > max_actions) {
                steps.resize(static_cast<size_t>(max_actions));
            }
            for (const ActionStep& step : steps) {
                record.action_features.push_back(serialize_step(step));
            }
            record.targets = export_stat_targets(dialogue, k);
            records.push_back(std::move(record));
        }
    }
    return records;
}

nlohmann::json feature_record_to_json(const FeatureRecord& record) {
    nlohmann::json object;
    object["id"] = record.id;
    object["k"] = record.k;
    object["context_text"] = record.context_text;
    object["action_features"] = record.action_features;
    object["targets"] = stat_targets_to_json(record.targets);
    return object;
}

} // namespace astrack
