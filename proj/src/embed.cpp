#include "logicl/embed.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <exception>
#include <future>
#include <random>

#include "json.hpp"

#include "logicl/binary_io.hpp"
#include "logicl/error.hpp"
#include "logicl/hash.hpp"
#include "logicl/http.hpp"
#include "logicl/kernels.hpp"

namespace logicl::embed {

namespace {

constexpr char kStoreMagic[8] = {'L', 'G', 'E', 'M', 'B', '0', '0', '1'};
constexpr char kHeadMagic[8] = {'L', 'G', 'H', 'E', 'A', 'D', '0', '1'};

std::string lowercase(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

void normalize_in_place(std::span<double> v, const std::string& what) {
    const double n = norm2(v);
    if (!(n > 0.0) || !std::isfinite(n)) throw DegenerateInputError(what + " has zero or non-finite norm");
    for (double& x : v) x /= n;
}

}  // namespace

std::string join_messages(const LogSequence& seq) {
    std::string out;
    for (std::size_t i = 0; i < seq.messages.size(); ++i) {
        if (i) out += kMessageSeparator;
        out += seq.messages[i];
    }
    return out;
}

void validate(const BackboneSpec& spec) {
    std::visit(
        [](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if (s.dim < 2) throw ConfigError("backbone dim must be >= 2");
            if constexpr (std::is_same_v<T, HashNgramSpec>) {
                if (s.ngram_min < 1) throw ConfigError("ngram_min must be >= 1");
                if (s.ngram_min > s.ngram_max) throw ConfigError("ngram_min must not exceed ngram_max");
            } else {
                http::parse_endpoint(s.endpoint);
                if (s.model.empty()) throw ConfigError("remote embedding model must be set");
                if (!(s.timeout_seconds > 0)) throw ConfigError("remote embedding timeout must be positive");
                if (s.max_retries < 0) throw ConfigError("remote embedding retries must be >= 0");
                if (s.batch_size < 1 || s.max_in_flight < 1)
                    throw ConfigError("remote embedding batch_size and max_in_flight must be >= 1");
            }
        },
        spec);
}

std::string fingerprint(const BackboneSpec& spec) {
    return std::visit(
        [](const auto& s) -> std::string {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, HashNgramSpec>) {
                return "hash_ngram:" + std::to_string(s.ngram_min) + "-" + std::to_string(s.ngram_max) +
                       ":d" + std::to_string(s.dim) + ":s" + std::to_string(s.seed);
            } else {
                return "remote:" + s.endpoint + ":" + s.model + ":d" + std::to_string(s.dim);
            }
        },
        spec);
}

std::size_t dimension(const BackboneSpec& spec) {
    return std::visit([](const auto& s) { return s.dim; }, spec);
}

HashedGram hash_gram(std::string_view gram, const HashNgramSpec& spec) {
    const std::uint64_t h = fnv1a(gram, kFnvOffset ^ splitmix64(spec.seed));
    const std::uint64_t sign_bits = splitmix64(h);
    return {static_cast<std::size_t>(h % spec.dim), (sign_bits >> 63) ? -1.0 : 1.0};
}

Vector hash_ngram_features(std::string_view text, const HashNgramSpec& spec) {
    Vector v(spec.dim, 0.0);
    if (text.empty()) return v;
    if (text.size() < spec.ngram_min) {
        const auto g = hash_gram(text, spec);
        v[g.bucket] += g.sign;
        return v;
    }
    for (std::size_t n = spec.ngram_min; n <= spec.ngram_max && n <= text.size(); ++n) {
        for (std::size_t i = 0; i + n <= text.size(); ++i) {
            const auto g = hash_gram(text.substr(i, n), spec);
            v[g.bucket] += g.sign;
        }
    }
    return v;
}

Vector Backbone::embed(const LogSequence& seq) const {
    const LogSequence* one = &seq;
    Matrix m = embed_many(std::span<const LogSequence* const>(&one, 1));
    auto row = m.row(0);
    return Vector(row.begin(), row.end());
}

HashNgramBackbone::HashNgramBackbone(HashNgramSpec spec) : spec_(spec) { validate(BackboneSpec{spec_}); }

std::string HashNgramBackbone::fingerprint() const { return embed::fingerprint(BackboneSpec{spec_}); }

Matrix HashNgramBackbone::embed_many(std::span<const LogSequence* const> seqs) const {
    count(seqs.size());
    Matrix out(seqs.size(), spec_.dim);
    const auto n = static_cast<std::int64_t>(seqs.size());
    std::vector<std::exception_ptr> errors(seqs.size());
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        try {
            const std::string text = lowercase(join_messages(*seqs[idx]));
            Vector v = hash_ngram_features(text, spec_);
            normalize_in_place(v, "sequence " + seqs[idx]->id);
            std::copy(v.begin(), v.end(), out.row(idx).begin());
        } catch (...) {
            errors[idx] = std::current_exception();
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

RemoteBackbone::RemoteBackbone(RemoteEmbeddingSpec spec) : spec_(std::move(spec)) {
    validate(BackboneSpec{spec_});
}

std::string RemoteBackbone::fingerprint() const { return embed::fingerprint(BackboneSpec{spec_}); }

Matrix RemoteBackbone::embed_many(std::span<const LogSequence* const> seqs) const {
    count(seqs.size());
    const auto endpoint = http::parse_endpoint(spec_.endpoint);
    const http::RetryPolicy retry{spec_.max_retries, std::chrono::milliseconds(200)};
    const std::chrono::duration<double> timeout(spec_.timeout_seconds);

    auto fetch = [&](std::size_t begin, std::size_t end) {
        nlohmann::json inputs = nlohmann::json::array();
        for (std::size_t i = begin; i < end; ++i) inputs.push_back(join_messages(*seqs[i]));
        const nlohmann::json body = {{"model", spec_.model}, {"input", inputs}};
        const nlohmann::json reply = http::post_json(endpoint, "/v1/embeddings", body, timeout,
                                                     spec_.bearer_token, retry);
        if (!reply.contains("data") || !reply["data"].is_array() || reply["data"].size() != end - begin)
            throw TransportError("embedding reply does not carry one vector per input");
        Matrix chunk(end - begin, spec_.dim);
        for (std::size_t k = 0; k < end - begin; ++k) {
            const auto& item = reply["data"][k];
            const std::size_t slot = item.contains("index") ? item["index"].get<std::size_t>() : k;
            if (slot >= end - begin) throw TransportError("embedding reply index out of range");
            const auto values = item.at("embedding").get<std::vector<double>>();
            if (values.size() != spec_.dim)
                throw TransportError("embedding has dim " + std::to_string(values.size()) + ", expected " +
                                     std::to_string(spec_.dim));
            std::copy(values.begin(), values.end(), chunk.row(slot).begin());
            normalize_in_place(chunk.row(slot), "remote embedding of " + seqs[begin + slot]->id);
        }
        return chunk;
    };

    Matrix out(seqs.size(), spec_.dim);
    std::vector<std::pair<std::size_t, std::size_t>> chunks;
    for (std::size_t b = 0; b < seqs.size(); b += spec_.batch_size)
        chunks.emplace_back(b, std::min(seqs.size(), b + spec_.batch_size));
    for (std::size_t wave = 0; wave < chunks.size(); wave += spec_.max_in_flight) {
        std::vector<std::future<Matrix>> inflight;
        const std::size_t wave_end = std::min(chunks.size(), wave + spec_.max_in_flight);
        for (std::size_t c = wave; c < wave_end; ++c)
            inflight.push_back(std::async(std::launch::async, fetch, chunks[c].first, chunks[c].second));
        for (std::size_t c = wave; c < wave_end; ++c) {
            Matrix chunk = inflight[c - wave].get();
            for (std::size_t r = 0; r < chunk.rows(); ++r)
                std::copy(chunk.row(r).begin(), chunk.row(r).end(), out.row(chunks[c].first + r).begin());
        }
    }
    return out;
}

std::unique_ptr<Backbone> make_backbone(const BackboneSpec& spec) {
    return std::visit(
        [](const auto& s) -> std::unique_ptr<Backbone> {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, HashNgramSpec>)
                return std::make_unique<HashNgramBackbone>(s);
            else
                return std::make_unique<RemoteBackbone>(s);
        },
        spec);
}

Vector embed_backbone(const LogSequence& seq, const BackboneSpec& spec) {
    return make_backbone(spec)->embed(seq);
}

std::string ProjectionHead::fingerprint() const {
    std::uint64_t h = fnv1a(std::to_string(weights.rows()) + "x" + std::to_string(weights.cols()));
    return hex64(fnv1a(weights.data(), h));
}

ProjectionHead ProjectionHead::identity(std::size_t dim) { return {Matrix::identity(dim)}; }

ProjectionHead ProjectionHead::perturbed_identity(std::size_t dim, std::uint64_t seed, double noise_std) {
    ProjectionHead head = identity(dim);
    if (noise_std > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0.0, noise_std);
        for (double& w : head.weights.data()) w += noise(rng);
    }
    return head;
}

void save_head(const ProjectionHead& head, const std::filesystem::path& path) {
    io::BinaryWriter w(path);
    w.raw(kHeadMagic, sizeof kHeadMagic);
    w.put<std::uint64_t>(head.weights.rows());
    w.put<std::uint64_t>(head.weights.cols());
    w.doubles(head.weights.data());
    w.finish();
}

ProjectionHead load_head(const std::filesystem::path& path) {
    io::BinaryReader r(path);
    char magic[8];
    r.raw(magic, sizeof magic);
    if (std::memcmp(magic, kHeadMagic, sizeof magic) != 0) r.fail("bad head magic");
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows == 0 || cols == 0 || rows > (1u << 16) || cols > (1u << 16)) r.fail("implausible head shape");
    ProjectionHead head{Matrix(rows, cols)};
    r.doubles(head.weights.data());
    if (!all_finite(head.weights.data())) r.fail("non-finite head weights");
    return head;
}

Vector project(const ProjectionHead& head, std::span<const double> x) {
    if (x.size() != head.in_dim())
        throw ConfigError("projection expects dim " + std::to_string(head.in_dim()) + ", got " +
                          std::to_string(x.size()));
    Vector z(head.out_dim());
    for (std::size_t r = 0; r < z.size(); ++r) z[r] = dot(head.weights.row(r), x);
    normalize_in_place(z, "projection W*x");
    return z;
}

Matrix project_all(const ProjectionHead& head, const Matrix& x) {
    if (x.rows() > 0 && x.cols() != head.in_dim())
        throw ConfigError("projection expects dim " + std::to_string(head.in_dim()) + ", got " +
                          std::to_string(x.cols()));
    Matrix z = kernels::project_rows(head.weights, x);
    for (std::size_t i = 0; i < z.rows(); ++i) normalize_in_place(z.row(i), "projection of row " + std::to_string(i));
    return z;
}

Encoder::Encoder(std::shared_ptr<const Backbone> backbone, ProjectionHead head)
    : backbone_(std::move(backbone)), head_(std::move(head)) {
    if (!backbone_) throw ConfigError("encoder needs a backbone");
    if (head_.in_dim() != backbone_->dim())
        throw ConfigError("projection head input dim " + std::to_string(head_.in_dim()) +
                          " does not match backbone dim " + std::to_string(backbone_->dim()));
    if (!all_finite(head_.weights.data())) throw ConfigError("projection head has non-finite weights");
}

Vector Encoder::encode(const LogSequence& seq) const { return project(head_, backbone_->embed(seq)); }

std::string Encoder::fingerprint() const { return backbone_->fingerprint() + "|head:" + head_.fingerprint(); }

Vector encode(const LogSequence& seq, const Encoder& encoder) { return encoder.encode(seq); }

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw ConfigError("cosine of vectors with different dims");
    const double nu = norm2(u), nv = norm2(v);
    if (!(nu > 0.0) || !(nv > 0.0)) throw DegenerateInputError("cosine of zero-norm vector");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

EmbeddingStore::EmbeddingStore(std::string fingerprint, std::vector<std::string> ids, Matrix vectors)
    : fingerprint_(std::move(fingerprint)), ids_(std::move(ids)), vectors_(std::move(vectors)) {
    if (ids_.size() != vectors_.rows()) throw FormatError("store ids and vectors disagree in count");
    for (std::size_t i = 0; i < ids_.size(); ++i)
        if (!index_.emplace(ids_[i], i).second) throw FormatError("duplicate id in store: " + ids_[i]);
}

std::size_t EmbeddingStore::position(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw FormatError("id not in embedding store: " + id);
    return it->second;
}

void EmbeddingStore::save(const std::filesystem::path& path) const {
    io::BinaryWriter w(path);
    w.raw(kStoreMagic, sizeof kStoreMagic);
    w.str(fingerprint_);
    w.put<std::uint64_t>(dim());
    w.put<std::uint64_t>(size());
    for (std::size_t i = 0; i < size(); ++i) {
        w.str(ids_[i]);
        w.doubles(vectors_.row(i));
    }
    w.finish();
}

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& path,
                                    const std::optional<std::string>& expected_fingerprint) {
    io::BinaryReader r(path);
    char magic[8];
    r.raw(magic, sizeof magic);
    if (std::memcmp(magic, kStoreMagic, sizeof magic) != 0) r.fail("bad embedding cache magic");
    std::string fp = r.str();
    if (expected_fingerprint && fp != *expected_fingerprint)
        throw CacheInvalidError("embedding cache " + path.string() + " was built for a different encoder or corpus");
    const auto d = r.get<std::uint64_t>();
    const auto n = r.get<std::uint64_t>();
    if (d > (1u << 16)) r.fail("implausible dimension");
    std::vector<std::string> ids;
    Matrix vectors(n, d);
    ids.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        ids.push_back(r.str());
        r.doubles(vectors.row(i));
    }
    if (!r.at_end()) r.fail("trailing bytes");
    return EmbeddingStore(std::move(fp), std::move(ids), std::move(vectors));
}

std::string corpus_fingerprint(const Corpus& corpus) {
    std::uint64_t h = kFnvOffset;
    for (const auto& seq : corpus.sequences()) {
        h = fnv1a(seq.id, h);
        h = fnv1a(std::string_view("\x1f"), h);
        h = fnv1a(seq.domain, h);
        h = fnv1a(seq.label ? std::string_view("\x01") : std::string_view("\x00", 1), h);
        for (const auto& m : seq.messages) {
            h = fnv1a(std::string_view("\x1e"), h);
            h = fnv1a(m, h);
        }
        h = fnv1a(std::string_view("\x1d"), h);
    }
    return hex64(h);
}

namespace {

std::optional<EmbeddingStore> try_cache(const std::optional<std::filesystem::path>& cache_path,
                                        const std::string& fp) {
    if (!cache_path || !std::filesystem::exists(*cache_path)) return std::nullopt;
    try {
        return EmbeddingStore::load(*cache_path, fp);
    } catch (const CacheInvalidError&) {
        return std::nullopt;
    } catch (const FormatError&) {
        return std::nullopt;
    }
}

std::vector<std::string> corpus_ids(const Corpus& corpus) {
    std::vector<std::string> ids;
    ids.reserve(corpus.size());
    for (const auto& s : corpus.sequences()) ids.push_back(s.id);
    return ids;
}

Matrix backbone_matrix(const Corpus& corpus, const Backbone& backbone) {
    std::vector<const LogSequence*> ptrs;
    ptrs.reserve(corpus.size());
    for (const auto& s : corpus.sequences()) ptrs.push_back(&s);
    return backbone.embed_many(ptrs);
}

}  // namespace

EmbeddingStore embed_backbone_corpus(const Corpus& corpus, const Backbone& backbone,
                                     const std::optional<std::filesystem::path>& cache_path) {
    if (corpus.empty()) throw EmptyCorpusError("cannot embed an empty corpus");
    const std::string fp = backbone.fingerprint() + "|corpus:" + corpus_fingerprint(corpus);
    if (auto cached = try_cache(cache_path, fp)) return std::move(*cached);
    EmbeddingStore store(fp, corpus_ids(corpus), backbone_matrix(corpus, backbone));
    if (cache_path) store.save(*cache_path);
    return store;
}

EmbeddingStore embed_corpus(const Corpus& corpus, const Encoder& encoder,
                            const std::optional<std::filesystem::path>& cache_path) {
    if (corpus.empty()) throw EmptyCorpusError("cannot embed an empty corpus");
    const std::string fp = encoder.fingerprint() + "|corpus:" + corpus_fingerprint(corpus);
    if (auto cached = try_cache(cache_path, fp)) return std::move(*cached);
    Matrix encoded = project_all(encoder.head(), backbone_matrix(corpus, encoder.backbone()));
    EmbeddingStore store(fp, corpus_ids(corpus), std::move(encoded));
    if (cache_path) store.save(*cache_path);
    return store;
}

EmbeddingStore apply_head(const EmbeddingStore& backbone_store, const ProjectionHead& head) {
    return EmbeddingStore(backbone_store.fingerprint() + "|head:" + head.fingerprint(), backbone_store.ids(),
                          project_all(head, backbone_store.vectors()));
}

}  // namespace logicl::embed
