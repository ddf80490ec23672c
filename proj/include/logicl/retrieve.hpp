#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "logicl/embed.hpp"
#include "logicl/kernels.hpp"
#include "logicl/linalg.hpp"

namespace logicl::retrieve {

/// Immutable list of (id, unit vector) candidates. Insertion order is the
/// tie-break order for every ranking.
class RetrievalIndex {
public:
    RetrievalIndex() = default;
    RetrievalIndex(std::vector<std::string> ids, Matrix vectors);
    /// Every entry of `store`, in store order.
    static RetrievalIndex from_store(const embed::EmbeddingStore& store);

    std::size_t size() const noexcept { return ids_.size(); }
    bool empty() const noexcept { return ids_.empty(); }
    std::size_t dim() const noexcept { return vectors_.cols(); }
    const std::string& id(std::size_t pos) const { return ids_[pos]; }
    const std::vector<std::string>& ids() const noexcept { return ids_; }
    const Matrix& vectors() const noexcept { return vectors_; }
    std::span<const double> vector(std::size_t pos) const { return vectors_.row(pos); }

private:
    std::vector<std::string> ids_;
    Matrix vectors_;
};

struct Scored {
    std::size_t position;  ///< position in the index
    double similarity;

    friend bool operator==(const Scored&, const Scored&) = default;
};

/// Cosine similarity of `query` to every index entry (entries are unit norm,
/// so this is the clamped dot product scaled by the query norm).
std::vector<double> similarities(std::span<const double> query, const RetrievalIndex& index,
                                 kernels::Exec exec = kernels::default_exec());

/// The k most similar entries, descending; ties by index position.
std::vector<Scored> top_k_similar(std::span<const double> query, const RetrievalIndex& index,
                                  std::size_t k, kernels::Exec exec = kernels::default_exec());

struct MMRParams {
    double lambda = 0.7;
    std::size_t k = 128;
};

void validate(const MMRParams& params);

/// Greedy maximal-marginal-relevance selection. Positions listed in `excluded`
/// are never selected. Returns index positions in selection order.
std::vector<std::size_t> mmr_select(std::span<const double> query, const RetrievalIndex& index,
                                    const MMRParams& params, std::span<const std::size_t> excluded = {},
                                    kernels::Exec exec = kernels::default_exec());

}  // namespace logicl::retrieve
