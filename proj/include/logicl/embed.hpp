#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "logicl/corpus.hpp"
#include "logicl/linalg.hpp"

namespace logicl::embed {

using corpus::Corpus;
using corpus::LogSequence;

/// Separator placed between the messages of a sequence before embedding.
inline constexpr std::string_view kMessageSeparator = " ;-; ";

std::string join_messages(const LogSequence& seq);

/// Signed feature hashing of character n-grams.
struct HashNgramSpec {
    std::size_t ngram_min = 3;
    std::size_t ngram_max = 5;
    std::size_t dim = 384;
    std::uint64_t seed = 0;
};

/// OpenAI-compatible embeddings service.
struct RemoteEmbeddingSpec {
    std::string endpoint;
    std::string model;
    std::size_t dim = 384;
    double timeout_seconds = 30.0;
    int max_retries = 3;
    std::size_t batch_size = 64;
    std::size_t max_in_flight = 4;
    std::string bearer_token;  ///< not part of the fingerprint
};

using BackboneSpec = std::variant<HashNgramSpec, RemoteEmbeddingSpec>;

/// Throws ConfigError when the spec violates its invariants.
void validate(const BackboneSpec& spec);
std::string fingerprint(const BackboneSpec& spec);
std::size_t dimension(const BackboneSpec& spec);

/// A gram's bucket and sign under `spec`.
struct HashedGram {
    std::size_t bucket;
    double sign;
};
HashedGram hash_gram(std::string_view gram, const HashNgramSpec& spec);

/// Unnormalized signed n-gram counts of already-joined, lowercased text.
Vector hash_ngram_features(std::string_view text, const HashNgramSpec& spec);

/// Frozen text embedder. Implementations count their invocations so callers
/// can verify cache behavior.
class Backbone {
public:
    virtual ~Backbone() = default;

    /// Unit-norm embeddings, one row per sequence.
    virtual Matrix embed_many(std::span<const LogSequence* const> seqs) const = 0;
    virtual std::size_t dim() const = 0;
    virtual std::string fingerprint() const = 0;

    Vector embed(const LogSequence& seq) const;
    std::size_t calls() const noexcept { return calls_.load(); }

protected:
    void count(std::size_t n) const noexcept { calls_.fetch_add(n); }

private:
    mutable std::atomic<std::size_t> calls_{0};
};

class HashNgramBackbone final : public Backbone {
public:
    explicit HashNgramBackbone(HashNgramSpec spec);
    Matrix embed_many(std::span<const LogSequence* const> seqs) const override;
    std::size_t dim() const override { return spec_.dim; }
    std::string fingerprint() const override;
    const HashNgramSpec& spec() const noexcept { return spec_; }

private:
    HashNgramSpec spec_;
};

class RemoteBackbone final : public Backbone {
public:
    explicit RemoteBackbone(RemoteEmbeddingSpec spec);
    Matrix embed_many(std::span<const LogSequence* const> seqs) const override;
    std::size_t dim() const override { return spec_.dim; }
    std::string fingerprint() const override;

private:
    RemoteEmbeddingSpec spec_;
};

std::unique_ptr<Backbone> make_backbone(const BackboneSpec& spec);

/// Backbone stage alone: unit-norm embedding of one sequence.
Vector embed_backbone(const LogSequence& seq, const BackboneSpec& spec);

/// Trainable linear map applied after the backbone.
struct ProjectionHead {
    Matrix weights;  ///< out_dim x in_dim

    std::size_t in_dim() const noexcept { return weights.cols(); }
    std::size_t out_dim() const noexcept { return weights.rows(); }
    std::string fingerprint() const;

    static ProjectionHead identity(std::size_t dim);
    /// Identity plus N(0, noise_std^2) entries from a seeded generator.
    static ProjectionHead perturbed_identity(std::size_t dim, std::uint64_t seed, double noise_std = 1e-3);

    friend bool operator==(const ProjectionHead&, const ProjectionHead&) = default;
};

void save_head(const ProjectionHead& head, const std::filesystem::path& path);
ProjectionHead load_head(const std::filesystem::path& path);

/// normalize(W x). Throws DegenerateInputError when W x vanishes.
Vector project(const ProjectionHead& head, std::span<const double> x);

/// Projects and normalizes every row of `x`.
Matrix project_all(const ProjectionHead& head, const Matrix& x);

class Encoder {
public:
    Encoder(std::shared_ptr<const Backbone> backbone, ProjectionHead head);

    Vector encode(const LogSequence& seq) const;
    const Backbone& backbone() const noexcept { return *backbone_; }
    std::shared_ptr<const Backbone> backbone_ptr() const noexcept { return backbone_; }
    const ProjectionHead& head() const noexcept { return head_; }
    std::string fingerprint() const;

private:
    std::shared_ptr<const Backbone> backbone_;
    ProjectionHead head_;
};

Vector encode(const LogSequence& seq, const Encoder& encoder);

/// u.v / (|u||v|) clamped to [-1, 1]. Throws on mismatched dims or zero norm.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

/// Id-addressable set of vectors tagged with the fingerprint of what produced them.
class EmbeddingStore {
public:
    EmbeddingStore() = default;
    EmbeddingStore(std::string fingerprint, std::vector<std::string> ids, Matrix vectors);

    const std::string& fingerprint() const noexcept { return fingerprint_; }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    const Matrix& vectors() const noexcept { return vectors_; }
    std::size_t size() const noexcept { return ids_.size(); }
    std::size_t dim() const noexcept { return vectors_.cols(); }
    bool contains(const std::string& id) const { return index_.contains(id); }
    std::size_t position(const std::string& id) const;
    std::span<const double> at(const std::string& id) const { return vectors_.row(position(id)); }

    void save(const std::filesystem::path& path) const;
    /// Throws CacheInvalidError when `expected_fingerprint` is given and differs,
    /// FormatError when the file is corrupt.
    static EmbeddingStore load(const std::filesystem::path& path,
                               const std::optional<std::string>& expected_fingerprint = std::nullopt);

    friend bool operator==(const EmbeddingStore& a, const EmbeddingStore& b) {
        return a.fingerprint_ == b.fingerprint_ && a.ids_ == b.ids_ && a.vectors_ == b.vectors_;
    }

private:
    std::string fingerprint_;
    std::vector<std::string> ids_;
    Matrix vectors_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Content hash over ids, domains, labels and messages.
std::string corpus_fingerprint(const Corpus& corpus);

/// Raw backbone vectors for every sequence; reuses `cache_path` when its
/// fingerprint matches, otherwise recomputes and rewrites it.
EmbeddingStore embed_backbone_corpus(const Corpus& corpus, const Backbone& backbone,
                                     const std::optional<std::filesystem::path>& cache_path = std::nullopt);

/// Encoded vectors (backbone then head) for every sequence, cached like above.
EmbeddingStore embed_corpus(const Corpus& corpus, const Encoder& encoder,
                            const std::optional<std::filesystem::path>& cache_path = std::nullopt);

/// Applies `head` to a store of backbone vectors.
EmbeddingStore apply_head(const EmbeddingStore& backbone_store, const ProjectionHead& head);

}  // namespace logicl::embed
