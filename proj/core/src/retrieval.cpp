#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "astrack/predictors.hpp"

namespace astrack {

namespace {

uint32_t fnv1a(std::string_view s) {
    uint32_t h = 2166136261u;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 16777619u;
    }
    return h;
}

std::vector<std::string> word_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

SparseVector normalized_or_empty_marker(std::map<int, double> weights) {
    double norm_sq = 0.0;
    for (const auto& [dim, w] : weights) norm_sq += w * w;
    if (norm_sq == 0.0) {
        // Token-free text maps to a designated unit vector.
        return SparseVector{{0, 1.0}};
    }
    double inv = 1.0 / std::sqrt(norm_sq);
    SparseVector out;
    out.reserve(weights.size());
    for (const auto& [dim, w] : weights) out.emplace_back(dim, w * inv);
    return out;
}

} // namespace

double l2_norm(const SparseVector& v) {
    double sum = 0.0;
    for (const auto& [dim, w] : v) sum += w * w;
    return std::sqrt(sum);
}

double cosine(const SparseVector& a, const SparseVector& b) {
    double dot = 0.0;
    size_t i = 0;
    size_t j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i].first == b[j].first) {
            dot += a[i].second * b[j].second;
            ++i;
            ++j;
        } else if (a[i].first < b[j].first) {
            ++i;
        } else {
            ++j;
        }
    }
    return dot;
}

void HashedTfidfVectorizer::fit(std::span<const std::string> documents) {
    doc_freq_.clear();
    num_docs_ = static_cast<int>(documents.size());
    for (const std::string& doc : documents) {
        std::vector<std::string> tokens = word_tokens(doc);
        std::sort(tokens.begin(), tokens.end());
        tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
        for (std::string& token : tokens) {
            ++doc_freq_[std::move(token)];
        }
    }
}

SparseVector HashedTfidfVectorizer::embed(const std::string& text) const {
    std::map<std::string, int> tf;
    for (std::string& token : word_tokens(text)) {
        ++tf[std::move(token)];
    }
    std::map<int, double> weights;
    for (const auto& [token, count] : tf) {
        auto df_it = doc_freq_.find(token);
        int df = df_it == doc_freq_.end() ? 0 : df_it->second;
        double idf = std::log((1.0 + num_docs_) / (1.0 + df)) + 1.0;
        weights[static_cast<int>(fnv1a(token) % kDim)] += count * idf;
    }
    return normalized_or_empty_marker(std::move(weights));
}

std::shared_ptr<Vectorizer> make_vectorizer(const std::string& id) {
    if (id == "hashed-tfidf") {
        return std::make_shared<HashedTfidfVectorizer>();
    }
    throw ValidationError("unknown vectorizer \"" + id + "\"");
}

RetrievalIndex RetrievalIndex::build(std::shared_ptr<const std::vector<Dialogue>> dialogues,
                                     FeatureMode retrieval_features,
                                     std::shared_ptr<Vectorizer> vectorizer) {
    if (!dialogues || dialogues->empty()) {
        throw ValidationError("cannot build a retrieval index from an empty corpus");
    }
    RetrievalIndex index;
    index.dialogues_ = std::move(dialogues);
    index.vectorizer_ = std::move(vectorizer);
    index.vectorizer_id_ = index.vectorizer_->id();
    std::vector<std::string> texts;
    for (size_t d = 0; d < index.dialogues_->size(); ++d) {
        const Dialogue& dialogue = (*index.dialogues_)[d];
        int n = dialogue.action_count();
        for (int k = 0; k < n; ++k) {
            ContextSplit split = split_at_action(dialogue, k);
            IndexEntry entry;
            entry.dialogue_id = dialogue.id;
            entry.policy = dialogue.policy;
            entry.dialogue_index = static_cast<int>(d);
            entry.k = k;
            entry.retrieval_text = render_context(split.context, retrieval_features);
            entry.target = format_action_sequence(split.future_actions);
            texts.push_back(entry.retrieval_text);
            index.entries_.push_back(std::move(entry));
        }
    }
    index.vectorizer_->fit(texts);
    index.vectors_.reserve(texts.size());
    for (const std::string& text : texts) {
        index.vectors_.push_back(index.vectorizer_->embed(text));
    }
    return index;
}

const Dialogue& RetrievalIndex::dialogue_of(const IndexEntry& entry) const {
    return (*dialogues_)[static_cast<size_t>(entry.dialogue_index)];
}

std::vector<RetrievalHit> RetrievalIndex::top_k(
    const std::string& query_text, int k,
    const std::function<bool(const IndexEntry&)>& filter) const {
    if (k < 1) {
        throw ValidationError("top-k requires k >= 1");
    }
    SparseVector query = vectorizer_->embed(query_text);
    std::vector<RetrievalHit> hits;
    for (size_t i = 0; i < entries_.size(); ++i) {
        if (filter && !filter(entries_[i])) continue;
        hits.push_back(RetrievalHit{static_cast<int>(i), cosine(vectors_[i], query)});
    }
    if (k > static_cast<int>(hits.size())) {
        throw ValidationError("top-k of " + std::to_string(k) + " exceeds the " +
                              std::to_string(hits.size()) + " candidate entries");
    }
    std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.entry_id < b.entry_id;
    });
    hits.resize(static_cast<size_t>(k));
    return hits;
}

void RetrievalIndex::load_vectors(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open vector file \"" + path + "\"");
    }
    std::vector<SparseVector> vectors(entries_.size());
    std::vector<bool> seen(entries_.size(), false);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        nlohmann::json object;
        try {
            object = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError("vector file line " + std::to_string(line_no) +
                                  ": malformed JSON: " + e.what());
        }
        int entry_id = object.at("entry_id").get<int>();
        if (entry_id < 0 || entry_id >= static_cast<int>(entries_.size())) {
            throw ValidationError("vector file line " + std::to_string(line_no) +
                                  ": entry_id " + std::to_string(entry_id) + " out of range");
        }
        std::vector<double> dense = object.at("vector").get<std::vector<double>>();
        SparseVector sparse;
        for (size_t dim = 0; dim < dense.size(); ++dim) {
            if (dense[dim] != 0.0) sparse.emplace_back(static_cast<int>(dim), dense[dim]);
        }
        double norm = l2_norm(sparse);
        if (norm == 0.0) {
            throw ValidationError("vector file line " + std::to_string(line_no) +
                                  ": zero vector");
        }
        for (auto& [dim, w] : sparse) w /= norm;
        vectors[static_cast<size_t>(entry_id)] = std::move(sparse);
        seen[static_cast<size_t>(entry_id)] = true;
    }
    for (size_t i = 0; i < seen.size(); ++i) {
        if (!seen[i]) {
            throw ValidationError("vector file covers no vector for entry " + std::to_string(i));
        }
    }
    vectors_ = std::move(vectors);
    vectorizer_id_ = "precomputed";
}

RetrievalIndex build_index(std::shared_ptr<const std::vector<Dialogue>> dialogues,
                           FeatureMode retrieval_features, const std::string& vectorizer_id) {
    return RetrievalIndex::build(std::move(dialogues), retrieval_features,
                                 make_vectorizer(vectorizer_id));
}

} // namespace astrack
