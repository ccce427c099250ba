#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "astrack/action_graph.hpp"
#include "astrack/corpus.hpp"

namespace astrack {

/// Which turn kinds go into a rendered context: both utterances and actions,
/// utterances only, or actions only.
enum class FeatureMode { UtterancesAndActions, Utterances, Actions };

std::string_view to_string(FeatureMode mode);
FeatureMode feature_mode_from_string(std::string_view s);

/// One line per retained turn: `user: ...`, `system: ...` or
/// `action: name [v1, v2]`, joined with newlines.
std::string render_context(std::span<const Turn> turns, FeatureMode mode);

/// Uniform prediction interface. Implementations are immutable after
/// construction and safe for concurrent predict() calls.
class Predictor {
public:
    virtual ~Predictor() = default;

    /// Returns a graph rooted at the split's last action (or START).
    virtual PredictionGraph predict(const ContextSplit& split,
                                    const std::string& policy) const = 0;

    /// True for predictors that cannot produce slot values (their value and
    /// joint metrics are reported as N/A).
    virtual bool value_free() const { return false; }
};

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

/// Unit-norm embedding stored sparsely: (dimension, weight) pairs sorted by
/// dimension. Keeps large indexes cheap regardless of the hash-space size.
using SparseVector = std::vector<std::pair<int, double>>;

double cosine(const SparseVector& a, const SparseVector& b);
double l2_norm(const SparseVector& v);

class Vectorizer {
public:
    virtual ~Vectorizer() = default;
    virtual std::string id() const = 0;

    /// Observes the index corpus before any embed() call; default no-op.
    virtual void fit(std::span<const std::string> /*documents*/) {}

    /// Returns a unit-norm vector. Texts with no tokens map to a designated
    /// "empty" unit vector so cosine similarity stays defined.
    virtual SparseVector embed(const std::string& text) const = 0;
};

/// Deterministic hashed term-frequency / inverse-document-frequency
/// embedding over lowercase word tokens in a fixed 4096-dimensional space.
/// Keeps tests hermetic; external embeddings plug in via precomputed files.
class HashedTfidfVectorizer : public Vectorizer {
public:
    static constexpr int kDim = 4096;

    std::string id() const override { return "hashed-tfidf"; }
    void fit(std::span<const std::string> documents) override;
    SparseVector embed(const std::string& text) const override;

private:
    std::map<std::string, int> doc_freq_;
    int num_docs_ = 0;
};

std::shared_ptr<Vectorizer> make_vectorizer(const std::string& id);

struct IndexEntry {
    std::string dialogue_id;
    std::string policy;
    int dialogue_index = 0; // into the index's source corpus
    int k = 0;
    std::string retrieval_text;
    std::string target; // formatted future action sequence
};

struct RetrievalHit {
    int entry_id = 0;
    double similarity = 0.0;
};

/// Training examples indexed by embedded context text: one entry per
/// (dialogue, split point) with a non-empty future.
class RetrievalIndex {
public:
    static RetrievalIndex build(std::shared_ptr<const std::vector<Dialogue>> dialogues,
                                FeatureMode retrieval_features,
                                std::shared_ptr<Vectorizer> vectorizer);

    const std::vector<IndexEntry>& entries() const { return entries_; }
    const std::vector<SparseVector>& vectors() const { return vectors_; }
    const std::string& vectorizer_id() const { return vectorizer_id_; }
    const Vectorizer& vectorizer() const { return *vectorizer_; }
    int size() const { return static_cast<int>(entries_.size()); }

    const Dialogue& dialogue_of(const IndexEntry& entry) const;

    /// Top K entries by descending cosine similarity to the embedded query;
    /// ties break by ascending entry id. Entries failing `filter` (when set)
    /// are not candidates. Throws ValidationError when fewer than K
    /// candidates exist.
    std::vector<RetrievalHit> top_k(
        const std::string& query_text, int k,
        const std::function<bool(const IndexEntry&)>& filter = {}) const;

    /// Replaces index vectors with precomputed ones (JSONL of
    /// {"entry_id": int, "vector": [float]}); vectors are L2-normalized on
    /// load and every entry must be covered. Queries must then be embedded
    /// by the same external model for cosine scores to mean anything.
    void load_vectors(const std::string& path);

private:
    std::shared_ptr<const std::vector<Dialogue>> dialogues_;
    std::vector<IndexEntry> entries_;
    std::vector<SparseVector> vectors_;
    std::shared_ptr<Vectorizer> vectorizer_;
    std::string vectorizer_id_;
};

RetrievalIndex build_index(std::shared_ptr<const std::vector<Dialogue>> dialogues,
                           FeatureMode retrieval_features, const std::string& vectorizer_id);

// ---------------------------------------------------------------------------
// Prompting
// ---------------------------------------------------------------------------

/// Instruction used verbatim at the top of every prompt.
extern const char* kDefaultInstruction;

struct PromptSpec {
    std::string instruction = kDefaultInstruction;
    int top_k = 5;
    int num_rollouts = 20;
    FeatureMode retrieval_features = FeatureMode::UtterancesAndActions;
    FeatureMode prediction_features = FeatureMode::UtterancesAndActions;
    double temperature = 0.7; // completion-client knob; no claimed fidelity
    /// 0 disables the cap; otherwise the least-similar examples are dropped
    /// (down to one) until the prompt fits.
    int max_prompt_chars = 0;
};

/// Instruction, one "Example#i:" block per retrieved entry (context rendered
/// with the prediction features, then "Actions: <target>"), and a final
/// block holding the test context with an empty Actions slot.
std::string assemble_prompt(const PromptSpec& spec, const RetrievalIndex& index,
                            std::span<const RetrievalHit> hits,
                            const std::string& test_context_text);

// ---------------------------------------------------------------------------
// Completion clients
// ---------------------------------------------------------------------------

/// Abstracts the text-completion endpoint. Implementations must return
/// exactly n strings and tolerate concurrent in-flight calls.
class CompletionClient {
public:
    virtual ~CompletionClient() = default;
    virtual std::vector<std::string> complete(const std::string& prompt, int n) const = 0;
};

/// Hermetic stub: echoes the target of the first example block in the
/// prompt (the top-retrieved target), n times.
class EchoTopExampleClient : public CompletionClient {
public:
    std::vector<std::string> complete(const std::string& prompt, int n) const override;
};

struct HttpClientConfig {
    std::string url;   // e.g. http://host:port/v1/chat/completions
    std::string model;
    std::string api_key;       // sent as a bearer token when non-empty
    double temperature = 0.7;
    int timeout_seconds = 120;
    int max_concurrency = 4;
};

/// Chat-completion style JSON-over-HTTP client. Each request posts
/// {"model", "messages": [{"role": "user", "content": prompt}], "n",
/// "temperature"} and reads n choices back.
class HttpCompletionClient : public CompletionClient {
public:
    explicit HttpCompletionClient(HttpClientConfig config);
    ~HttpCompletionClient() override;

    std::vector<std::string> complete(const std::string& prompt, int n) const override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Fills url/api_key from AST_COMPLETION_URL / AST_COMPLETION_KEY when the
/// config fields are empty.
HttpClientConfig apply_env_overrides(HttpClientConfig config);

// ---------------------------------------------------------------------------
// Predictors
// ---------------------------------------------------------------------------

/// Zero-shot traversal of prebuilt per-policy transition graphs. Purely a
/// function of (graphs, policy, last action); no rollouts, no client calls.
class TraversalPredictor : public Predictor {
public:
    explicit TraversalPredictor(PolicyGraphSet graphs) : graphs_(std::move(graphs)) {}

    PredictionGraph predict(const ContextSplit& split,
                            const std::string& policy) const override;
    bool value_free() const override { return true; }

    const PolicyGraphSet& graphs() const { return graphs_; }

private:
    PolicyGraphSet graphs_;
};

/// Retrieval-augmented prompting: embeds the context, retrieves top-K
/// examples, prompts the completion client for R rollouts, drops rollouts
/// that fail to parse, and aggregates the rest into a graph. Transport
/// failures are retried with exponential backoff before giving up.
class InContextPredictor : public Predictor {
public:
    InContextPredictor(PromptSpec spec, RetrievalIndex index,
                       std::shared_ptr<const CompletionClient> client, int max_len,
                       bool same_policy_only = false, int retry_attempts = 3,
                       int retry_backoff_ms = 250);

    PredictionGraph predict(const ContextSplit& split,
                            const std::string& policy) const override;

    /// The exact prompt predict() would send; exposed for golden tests and
    /// the ad-hoc predict command.
    std::string prompt_for(const ContextSplit& split, const std::string& policy) const;

private:
    PromptSpec spec_;
    RetrievalIndex index_;
    std::shared_ptr<const CompletionClient> client_;
    int max_len_;
    bool same_policy_only_;
    int retry_attempts_;
    int retry_backoff_ms_;
};

/// Externally generated rollouts keyed by (dialogue id, split point), in the
/// semicolon/bracket serialization. Lets fine-tuned model dumps be scored
/// without running the model here.
class ReplayStore {
public:
    /// JSONL of {"id": str, "k": int, "rollouts": [str]}. An empty rollout
    /// array is a schema violation.
    static ReplayStore load(const std::string& path);

    /// Oracle store: one rollout per (dialogue, k) equal to the ground-truth
    /// future, repeated `copies` times.
    static ReplayStore from_ground_truth(std::span<const Dialogue> dialogues, int copies = 1);

    void insert(const std::string& dialogue_id, int k, std::vector<std::string> rollouts);
    const std::vector<std::string>* find(const std::string& dialogue_id, int k) const;
    int size() const { return static_cast<int>(entries_.size()); }

private:
    std::map<std::pair<std::string, int>, std::vector<std::string>> entries_;
};

class ReplayPredictor : public Predictor {
public:
    ReplayPredictor(ReplayStore store, int max_len)
        : store_(std::move(store)), max_len_(max_len) {}

    /// Parses the stored rollouts (dropping unparseable ones) and aggregates
    /// them exactly as the in-context predictor would. A missing key throws.
    PredictionGraph predict(const ContextSplit& split,
                            const std::string& policy) const override;

private:
    ReplayStore store_;
    int max_len_;
};

/// Shared by the in-context and replay predictors: parse rollout strings,
/// drop the unparseable, aggregate survivors (root-only graph when none
/// survive).
PredictionGraph rollouts_to_graph(const std::optional<ActionStep>& last_action,
                                  std::span<const std::string> rollout_strings, int max_len);

// ---------------------------------------------------------------------------
// Feature export
// ---------------------------------------------------------------------------

enum class FeatureSource { Predicted, Oracle };

struct FeatureRecord {
    std::string id;
    int k = 0;
    std::string context_text;
    std::vector<std::string> action_features; // serialized steps
    StatTargets targets;
};

/// One record per (dialogue, k) with a non-empty future. Action features
/// come from the predictor's top-1 sequence or from the ground truth, cut to
/// `max_actions` when positive.
std::vector<FeatureRecord> export_feature_records(std::span<const Dialogue> dialogues,
                                                  FeatureSource source,
                                                  const Predictor* predictor,
                                                  int max_actions = 0);

nlohmann::json feature_record_to_json(const FeatureRecord& record);

} // namespace astrack
