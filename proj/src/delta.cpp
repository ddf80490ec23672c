#include "logicl/delta.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <exception>
#include <map>

#include "json.hpp"

#include "logicl/binary_io.hpp"
#include "logicl/error.hpp"
#include "logicl/retrieve.hpp"

namespace logicl::delta {

using json = nlohmann::json;

namespace {

constexpr char kMagic[16] = {'L', 'O', 'G', 'I', 'C', 'L', '-', 'D', 'E', 'L', 'T', 'A', '-', 'v', '1', '\n'};

json metadata_json(const DeltaMetadata& m) {
    return {{"n", m.n},
            {"k_candidates", m.k_candidates},
            {"mmr_lambda", m.mmr_lambda},
            {"oracle_fingerprint", m.oracle_fingerprint},
            {"encoder_fingerprint", m.encoder_fingerprint},
            {"corpus_fingerprint", m.corpus_fingerprint},
            {"queries_done", m.queries_done},
            {"complete", m.complete}};
}

DeltaMetadata metadata_from_json(const json& j) {
    DeltaMetadata m;
    m.n = j.at("n").get<std::size_t>();
    m.k_candidates = j.at("k_candidates").get<std::size_t>();
    m.mmr_lambda = j.at("mmr_lambda").get<double>();
    m.oracle_fingerprint = j.at("oracle_fingerprint").get<std::string>();
    m.encoder_fingerprint = j.at("encoder_fingerprint").get<std::string>();
    m.corpus_fingerprint = j.at("corpus_fingerprint").get<std::string>();
    m.queries_done = j.at("queries_done").get<std::size_t>();
    m.complete = j.at("complete").get<bool>();
    return m;
}

bool same_build(const DeltaMetadata& a, const DeltaMetadata& b) {
    return a.n == b.n && a.k_candidates == b.k_candidates && a.mmr_lambda == b.mmr_lambda &&
           a.oracle_fingerprint == b.oracle_fingerprint && a.encoder_fingerprint == b.encoder_fingerprint &&
           a.corpus_fingerprint == b.corpus_fingerprint;
}

}  // namespace

double compute_delta(double p0, double p1, int label) {
    if (!(p0 >= 0.0 && p0 <= 1.0) || !(p1 >= 0.0 && p1 <= 1.0))
        throw ConfigError("delta needs probabilities in [0, 1]");
    if (label != 0 && label != 1) throw ConfigError("delta needs a binary label");
    const double l = static_cast<double>(label);
    return std::abs(p0 - l) - std::abs(p1 - l);
}

void DeltaMatrix::add_row(DeltaRow row) {
    for (const auto& e : row.entries)
        if (e.demo_id == row.query_id) throw FormatError("self pair for query " + row.query_id);
    if (!index_.emplace(row.query_id, rows_.size()).second)
        throw FormatError("duplicate delta row for query " + row.query_id);
    rows_.push_back(std::move(row));
}

const DeltaRow* DeltaMatrix::row(const std::string& query_id) const {
    auto it = index_.find(query_id);
    return it == index_.end() ? nullptr : &rows_[it->second];
}

double DeltaMatrix::value(const std::string& query_id, const std::string& demo_id) const {
    if (const DeltaRow* r = row(query_id))
        for (const auto& e : r->entries)
            if (e.demo_id == demo_id) return e.delta;
    return 0.0;
}

bool DeltaMatrix::has_entry(const std::string& query_id, const std::string& demo_id) const {
    if (const DeltaRow* r = row(query_id))
        for (const auto& e : r->entries)
            if (e.demo_id == demo_id) return true;
    return false;
}

std::size_t DeltaMatrix::entry_count() const noexcept {
    std::size_t n = 0;
    for (const auto& r : rows_) n += r.entries.size();
    return n;
}

DeltaMatrix build_delta_matrix(const corpus::Corpus& train, const embed::EmbeddingStore& train_vectors,
                               const oracle::Oracle& oracle, const BuildOptions& options,
                               const std::string& encoder_fingerprint) {
    if (train.size() < 2) throw EmptyCorpusError("delta matrix needs at least two training sequences");
    if (options.k_candidates < 1) throw ConfigError("k_candidates must be >= 1");
    if (options.checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
    retrieve::validate(retrieve::MMRParams{options.mmr_lambda, options.k_candidates});

    const retrieve::RetrievalIndex index = retrieve::RetrievalIndex::from_store(train_vectors);
    std::vector<std::size_t> store_pos(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) store_pos[i] = train_vectors.position(train[i].id);

    DeltaMetadata meta;
    meta.n = train.size();
    meta.k_candidates = options.k_candidates;
    meta.mmr_lambda = options.mmr_lambda;
    meta.oracle_fingerprint = oracle.fingerprint();
    meta.encoder_fingerprint = encoder_fingerprint;
    meta.corpus_fingerprint = embed::corpus_fingerprint(train);

    DeltaMatrix matrix(meta);
    if (options.resume && options.checkpoint_path && std::filesystem::exists(*options.checkpoint_path)) {
        LoadResult prior = load_matrix(*options.checkpoint_path);
        if (!same_build(prior.matrix.metadata(), meta))
            throw ConfigError("checkpoint " + options.checkpoint_path->string() +
                              " was produced by a different corpus, encoder, oracle or candidate budget");
        for (std::size_t i = 0; i < prior.matrix.rows().size(); ++i)
            if (prior.matrix.rows()[i].query_id != train[i].id)
                throw ConfigError("checkpoint rows do not follow the training corpus order");
        matrix = std::move(prior.matrix);
        if (matrix.metadata().complete) return matrix;
    }

    auto checkpoint = [&] {
        if (options.checkpoint_path) save_matrix(matrix, *options.checkpoint_path);
    };

    const std::size_t threads_cap = std::max<std::size_t>(1, oracle.max_in_flight());
    for (std::size_t start = matrix.metadata().queries_done; start < train.size(); start += options.checkpoint_every) {
        const std::size_t end = std::min(train.size(), start + options.checkpoint_every);
        std::vector<DeltaRow> rows(end - start);
        std::vector<std::exception_ptr> errors(end - start);
        const int threads = static_cast<int>(std::min(threads_cap, end - start));
        const auto count = static_cast<std::int64_t>(end - start);

#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
        for (std::int64_t t = 0; t < count; ++t) {
            const std::size_t qi = start + static_cast<std::size_t>(t);
            try {
                const auto& query = train[qi];
                if (query.label != 0 && query.label != 1) throw FormatError("unlabeled sequence " + query.id);
                const double p0 =
                    oracle::query_oracle(oracle::build_prompt({}, query, false), oracle).probability;
                const std::size_t self = store_pos[qi];
                const auto picks =
                    retrieve::mmr_select(index.vector(self), index, {options.mmr_lambda, options.k_candidates},
                                         std::span<const std::size_t>(&self, 1), kernels::Exec::serial);
                DeltaRow row{query.id, query.label, {}};
                row.entries.reserve(picks.size());
                for (std::size_t pos : picks) {
                    const auto& demo = train.at(index.id(pos));
                    const double p1 = oracle::query_oracle(oracle::build_prompt({demo}, query, false), oracle).probability;
                    row.entries.push_back({demo.id, p0, p1, compute_delta(p0, p1, query.label)});
                }
                rows[static_cast<std::size_t>(t)] = std::move(row);
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        }

        for (std::size_t t = 0; t < rows.size(); ++t) {
            if (errors[t]) {
                checkpoint();
                std::rethrow_exception(errors[t]);
            }
            matrix.add_row(std::move(rows[t]));
            matrix.metadata().queries_done = start + t + 1;
        }
        matrix.metadata().complete = matrix.metadata().queries_done == train.size();
        checkpoint();
    }
    return matrix;
}

void save_matrix(const DeltaMatrix& m, const std::filesystem::path& path) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        io::BinaryWriter w(tmp);
        w.raw(kMagic, sizeof kMagic);
        const std::string header = metadata_json(m.metadata()).dump();
        w.put<std::uint64_t>(header.size());
        w.raw(header.data(), header.size());
        w.put<std::uint64_t>(m.rows().size());
        for (const auto& row : m.rows()) {
            w.str(row.query_id);
            w.put<std::uint8_t>(static_cast<std::uint8_t>(row.label));
            w.put<std::uint32_t>(static_cast<std::uint32_t>(row.entries.size()));
            for (const auto& e : row.entries) {
                w.str(e.demo_id);
                w.put<double>(e.p0);
                w.put<double>(e.p1);
                w.put<double>(e.delta);
            }
        }
        w.finish();
    }
    std::filesystem::rename(tmp, path);
}

LoadResult load_matrix(const std::filesystem::path& path, const std::optional<std::string>& expected_oracle_fingerprint,
                       const std::optional<std::string>& expected_encoder_fingerprint) {
    io::BinaryReader r(path);
    char magic[sizeof kMagic];
    r.raw(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("not a delta matrix file (bad magic)");
    const auto header_len = r.get<std::uint64_t>();
    if (header_len > (1u << 20)) r.fail("implausible header length");
    std::string header(header_len, '\0');
    r.raw(header.data(), header.size());
    DeltaMetadata meta;
    try {
        meta = metadata_from_json(json::parse(header));
    } catch (const json::exception& e) {
        r.fail(std::string("bad metadata header (") + e.what() + ")");
    }

    LoadResult out{DeltaMatrix(meta), false, false, {}};
    const auto row_count = r.get<std::uint64_t>();
    if (row_count != meta.queries_done) r.fail("row count disagrees with metadata");
    for (std::uint64_t i = 0; i < row_count; ++i) {
        DeltaRow row;
        row.query_id = r.str();
        row.label = r.get<std::uint8_t>();
        if (row.label > 1) r.fail("non-binary label");
        const auto n = r.get<std::uint32_t>();
        if (n > meta.k_candidates) r.fail("row exceeds k_candidates");
        row.entries.reserve(n);
        for (std::uint32_t k = 0; k < n; ++k) {
            DeltaEntry e;
            e.demo_id = r.str();
            e.p0 = r.get<double>();
            e.p1 = r.get<double>();
            e.delta = r.get<double>();
            if (!(e.p0 >= 0.0 && e.p0 <= 1.0 && e.p1 >= 0.0 && e.p1 <= 1.0) ||
                e.delta != compute_delta(e.p0, e.p1, row.label))
                r.fail("inconsistent delta entry");
            row.entries.push_back(std::move(e));
        }
        try {
            out.matrix.add_row(std::move(row));
        } catch (const FormatError& e) {
            r.fail(e.what());
        }
    }
    if (!r.at_end()) r.fail("trailing bytes");

    if (expected_oracle_fingerprint && *expected_oracle_fingerprint != meta.oracle_fingerprint) {
        out.oracle_mismatch = true;
        out.warnings.push_back("delta matrix was built with a different oracle (" + meta.oracle_fingerprint + ")");
    }
    if (expected_encoder_fingerprint && *expected_encoder_fingerprint != meta.encoder_fingerprint) {
        out.encoder_mismatch = true;
        out.warnings.push_back("delta matrix was built with a different encoder (" + meta.encoder_fingerprint + ")");
    }
    return out;
}

std::vector<ScoredDemo> row_top_j(const DeltaMatrix& m, std::span<const std::string> anchor_ids, std::size_t j) {
    if (j == 0) return {};
    std::map<std::string, double> sums;
    for (const auto& anchor : anchor_ids)
        if (const DeltaRow* row = m.row(anchor))
            for (const auto& e : row->entries) sums[e.demo_id] += e.delta;
    for (const auto& anchor : anchor_ids) sums.erase(anchor);

    std::vector<ScoredDemo> scored;
    scored.reserve(sums.size());
    for (const auto& [id, s] : sums) scored.push_back({id, s});
    // `sums` iterates in ascending id order, so a stable sort keeps id order among ties.
    std::stable_sort(scored.begin(), scored.end(),
                     [](const ScoredDemo& a, const ScoredDemo& b) { return a.score > b.score; });
    if (scored.size() > j) scored.resize(j);
    return scored;
}

}  // namespace logicl::delta
