#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "logicl/corpus.hpp"
#include "logicl/embed.hpp"
#include "logicl/oracle.hpp"

namespace logicl::delta {

/// Reduction in absolute error when one demonstration is added:
/// |p0 - label| - |p1 - label|. Throws ConfigError for probabilities outside [0, 1].
double compute_delta(double p0, double p1, int label);

struct DeltaEntry {
    std::string demo_id;
    double p0 = 0.0;
    double p1 = 0.0;
    double delta = 0.0;

    friend bool operator==(const DeltaEntry&, const DeltaEntry&) = default;
};

struct DeltaRow {
    std::string query_id;
    int label = 0;
    std::vector<DeltaEntry> entries;  ///< MMR selection order

    friend bool operator==(const DeltaRow&, const DeltaRow&) = default;
};

struct DeltaMetadata {
    std::size_t n = 0;  ///< training sequences
    std::size_t k_candidates = 0;
    double mmr_lambda = 0.0;
    std::string oracle_fingerprint;
    std::string encoder_fingerprint;
    std::string corpus_fingerprint;
    std::size_t queries_done = 0;
    bool complete = false;

    friend bool operator==(const DeltaMetadata&, const DeltaMetadata&) = default;
};

/// Sparse query x demonstration matrix. Rows follow training-corpus order;
/// an absent (query, demo) pair reads as 0.
class DeltaMatrix {
public:
    DeltaMatrix() = default;
    explicit DeltaMatrix(DeltaMetadata meta) : meta_(std::move(meta)) {}

    const DeltaMetadata& metadata() const noexcept { return meta_; }
    DeltaMetadata& metadata() noexcept { return meta_; }
    const std::vector<DeltaRow>& rows() const noexcept { return rows_; }

    void add_row(DeltaRow row);
    const DeltaRow* row(const std::string& query_id) const;
    /// Stored delta, or 0 when the pair was never measured.
    double value(const std::string& query_id, const std::string& demo_id) const;
    bool has_entry(const std::string& query_id, const std::string& demo_id) const;
    std::size_t entry_count() const noexcept;

    friend bool operator==(const DeltaMatrix& a, const DeltaMatrix& b) {
        return a.meta_ == b.meta_ && a.rows_ == b.rows_;
    }

private:
    DeltaMetadata meta_;
    std::vector<DeltaRow> rows_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct BuildOptions {
    std::size_t k_candidates = 128;
    double mmr_lambda = 0.7;
    std::size_t checkpoint_every = 100;
    std::optional<std::filesystem::path> checkpoint_path;
    bool resume = false;
};

/// For every training sequence: one zero-shot oracle call, MMR selection of
/// up to k_candidates other sequences over `train_vectors`, then one one-shot
/// call per candidate. Progress is checkpointed every `checkpoint_every`
/// queries; on oracle failure the checkpoint holds all completed queries and
/// the error propagates.
DeltaMatrix build_delta_matrix(const corpus::Corpus& train, const embed::EmbeddingStore& train_vectors,
                               const oracle::Oracle& oracle, const BuildOptions& options,
                               const std::string& encoder_fingerprint);

struct LoadResult {
    DeltaMatrix matrix;
    bool oracle_mismatch = false;
    bool encoder_mismatch = false;
    std::vector<std::string> warnings;
};

void save_matrix(const DeltaMatrix& m, const std::filesystem::path& path);

/// Reads a matrix file. FormatError (with byte offset) on corruption; a
/// fingerprint that differs from the expected one only sets a warning flag.
LoadResult load_matrix(const std::filesystem::path& path,
                       const std::optional<std::string>& expected_oracle_fingerprint = std::nullopt,
                       const std::optional<std::string>& expected_encoder_fingerprint = std::nullopt);

struct ScoredDemo {
    std::string demo_id;
    double score = 0.0;

    friend bool operator==(const ScoredDemo&, const ScoredDemo&) = default;
};

/// Sums each demonstration's deltas over the anchors' rows (absent = 0),
/// drops the anchors themselves, and returns the j best by summed delta;
/// ties broken by ascending id.
std::vector<ScoredDemo> row_top_j(const DeltaMatrix& m, std::span<const std::string> anchor_ids, std::size_t j);

}  // namespace logicl::delta
