#include "logicl/retrieve.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "logicl/error.hpp"

namespace logicl::retrieve {

RetrievalIndex::RetrievalIndex(std::vector<std::string> ids, Matrix vectors)
    : ids_(std::move(ids)), vectors_(std::move(vectors)) {
    if (ids_.size() != vectors_.rows()) throw FormatError("index ids and vectors disagree in count");
    for (std::size_t i = 0; i < vectors_.rows(); ++i) {
        const double n = norm2(vectors_.row(i));
        if (!(std::abs(n - 1.0) <= 1e-6)) throw DegenerateInputError("index vector " + ids_[i] + " is not unit norm");
    }
}

RetrievalIndex RetrievalIndex::from_store(const embed::EmbeddingStore& store) {
    return RetrievalIndex(store.ids(), store.vectors());
}

std::vector<double> similarities(std::span<const double> query, const RetrievalIndex& index,
                                 kernels::Exec exec) {
    if (query.size() != index.dim()) throw ConfigError("query dim does not match index dim");
    const double qn = norm2(query);
    if (!(qn > 0.0)) throw DegenerateInputError("query has zero norm");
    std::vector<double> sims(index.size());
    kernels::dot_scan(query, index.vectors(), sims, exec);
    for (double& s : sims) s = std::clamp(s / qn, -1.0, 1.0);
    return sims;
}

std::vector<Scored> top_k_similar(std::span<const double> query, const RetrievalIndex& index,
                                  std::size_t k, kernels::Exec exec) {
    if (index.empty()) throw EmptyCorpusError("retrieval index is empty");
    if (k == 0) throw ConfigError("k must be >= 1");
    const auto sims = similarities(query, index, exec);
    std::vector<std::size_t> order(index.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t take = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](std::size_t a, std::size_t b) { return sims[a] > sims[b] || (sims[a] == sims[b] && a < b); });
    std::vector<Scored> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back({order[i], sims[order[i]]});
    return out;
}

void validate(const MMRParams& params) {
    if (!(params.lambda >= 0.0 && params.lambda <= 1.0)) throw ConfigError("mmr lambda must lie in [0, 1]");
    if (params.k < 1) throw ConfigError("mmr budget k must be >= 1");
}

std::vector<std::size_t> mmr_select(std::span<const double> query, const RetrievalIndex& index,
                                    const MMRParams& params, std::span<const std::size_t> excluded,
                                    kernels::Exec exec) {
    validate(params);
    if (index.empty()) throw EmptyCorpusError("retrieval index is empty");
    const auto relevance = similarities(query, index, exec);

    std::vector<char> taken(index.size(), 0);
    std::size_t available = index.size();
    for (std::size_t pos : excluded) {
        if (pos < taken.size() && !taken[pos]) {
            taken[pos] = 1;
            --available;
        }
    }

    // Largest similarity of each candidate to anything selected so far.
    std::vector<double> redundancy(index.size(), 0.0);
    std::vector<double> scratch(index.size());
    std::vector<std::size_t> selected;
    const std::size_t budget = std::min(params.k, available);
    selected.reserve(budget);

    while (selected.size() < budget) {
        std::size_t best = index.size();
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < index.size(); ++j) {
            if (taken[j]) continue;
            const double penalty = selected.empty() ? 0.0 : redundancy[j];
            const double score = params.lambda * relevance[j] - (1.0 - params.lambda) * penalty;
            if (score > best_score) {
                best_score = score;
                best = j;
            }
        }
        taken[best] = 1;
        selected.push_back(best);
        if (selected.size() == budget) break;

        kernels::dot_scan(index.vector(best), index.vectors(), scratch, exec);
        for (std::size_t j = 0; j < index.size(); ++j) {
            const double s = std::clamp(scratch[j], -1.0, 1.0);
            redundancy[j] = selected.size() == 1 ? s : std::max(redundancy[j], s);
        }
    }
    return selected;
}

}  // namespace logicl::retrieve
