#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "logicl/corpus.hpp"
#include "logicl/delta.hpp"
#include "logicl/embed.hpp"
#include "logicl/linalg.hpp"

namespace logicl::train {

struct LossWeights {
    double mmd = 0.1;
    double supcon = 1.0;
    double delta = 1.0;
    double delta_neg = 1.0;  ///< weight of the negative-pair hinge inside the delta term
};

enum class Bandwidth { median, fixed };

struct TrainConfig {
    double tau = 0.1;
    double theta = 0.1;
    double epsilon = 1e-8;
    double sim_floor = 1e-4;
    double learning_rate = 1e-2;
    std::size_t epochs = 20;
    std::size_t batch_source = 16;
    std::size_t batch_target = 16;
    Bandwidth bandwidth = Bandwidth::median;
    double fixed_sigma = 1.0;
    bool mmd_squared = false;
    /// One extra step per epoch on the delta term over every pair.
    bool full_pair_pass = false;
    /// Loss trace evaluates the whole training set as one batch up to this size,
    /// otherwise it averages the epoch's batch losses.
    std::size_t full_eval_limit = 4096;
    std::uint64_t seed = 42;
    /// Domains treated as source for the alignment term; empty picks the largest domain.
    std::set<std::string> source_domains;
};

void validate(const LossWeights& w);
void validate(const TrainConfig& c);

struct DeltaPair {
    std::string query_id;
    std::string demo_id;
    double delta = 0.0;
};

/// Positive-delta and negative-delta pairs; zero deltas belong to neither.
struct PairSets {
    std::vector<DeltaPair> positives;
    std::vector<DeltaPair> negatives;
};

PairSets partition_pairs(const delta::DeltaMatrix& m);

/// A pair expressed as row indices into a vector matrix.
struct IndexPair {
    std::size_t i = 0;
    std::size_t j = 0;
    double delta = 0.0;
};

/// Value and gradient with respect to the rows of the input vector matrix.
/// `grad` is empty when only the value was requested.
struct LossValue {
    double value = 0.0;
    Matrix grad;
};

/// Kernel mean-embedding distance (biased V-statistic) with a Gaussian kernel.
/// Returns sqrt(max(0, MMD^2)), or MMD^2 itself when `squared`.
double mmd_loss(const Matrix& source, const Matrix& target, double sigma, bool squared = false);

/// Supervised contrastive loss over all rows; A(i) is every other row, P(i)
/// the other rows sharing i's label, anchors without positives skipped.
double supcon_loss(const Matrix& vecs, std::span<const int> labels, double tau, double epsilon);

struct DeltaLossParts {
    double positive = 0.0;  ///< L+ (unweighted)
    double negative = 0.0;  ///< L- (unweighted)
    double total = 0.0;     ///< L+ + lambda_neg * L-
};

DeltaLossParts delta_loss(std::span<const IndexPair> positives, std::span<const IndexPair> negatives,
                          const Matrix& vecs, double tau, double theta, double lambda_neg, double sim_floor);

/// Id-addressed form over a store of unit vectors. Throws FormatError for ids
/// the store does not hold.
DeltaLossParts delta_loss(const PairSets& pairs, const embed::EmbeddingStore& embeddings, double tau,
                          double theta, double lambda_neg, double sim_floor);

// Gradient-carrying forms. The MMD gradient is taken with sigma held fixed.
LossValue mmd_loss_grad(const Matrix& vecs, std::span<const char> is_source, double sigma, bool squared);
LossValue supcon_loss_grad(const Matrix& vecs, std::span<const int> labels, double tau, double epsilon);
LossValue delta_loss_grad(std::span<const IndexPair> positives, std::span<const IndexPair> negatives,
                          const Matrix& vecs, double tau, double theta, double lambda_neg, double sim_floor,
                          DeltaLossParts* parts = nullptr);

/// Training members (backbone vectors) plus the delta pairs inside them.
struct Batch {
    Matrix inputs;                ///< backbone vectors, one row per member
    std::vector<int> labels;
    std::vector<char> is_source;  ///< 1 for source-domain members
    std::vector<IndexPair> positives;
    std::vector<IndexPair> negatives;
};

struct LossBreakdown {
    double mmd = 0.0;
    double supcon = 0.0;
    double delta_pos = 0.0;
    double delta_neg = 0.0;
    double total = 0.0;
};

/// Median pairwise distance of the rows (1.0 when all rows coincide).
double median_bandwidth(const Matrix& vecs);

/// Bandwidth for `batch` under `head` according to the config.
double resolve_bandwidth(const Matrix& head, const Batch& batch, const TrainConfig& config);

/// Weighted multi-objective loss at projection weights `head`; terms with zero
/// weight are not evaluated and report 0.
LossBreakdown total_loss(const Matrix& head, const Batch& batch, const LossWeights& weights,
                         const TrainConfig& config, double sigma);

struct Gradient {
    LossBreakdown loss;
    Matrix d_head;  ///< same shape as `head`
};

/// Analytic dL/dW through v = Wx / |Wx|. Throws DegenerateInputError when a
/// member projects to zero.
Gradient grad_total_loss(const Matrix& head, const Batch& batch, const LossWeights& weights,
                         const TrainConfig& config, double sigma);

/// Central differences per coordinate of `at` against `grad`; returns the max
/// of |a - f| / max(|a|, |f|, 1e-8).
double finite_diff_check(const std::function<double(const Matrix&)>& loss, const Matrix& grad, const Matrix& at,
                         double h);

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    /// True when a non-smooth point (a positive-pair similarity at the log
    /// floor, or MMD^2 at zero) lies within the probing step.
    bool near_kink = false;
};

FiniteDiffReport finite_diff_check(const Matrix& head, const Batch& batch, const LossWeights& weights,
                                   const TrainConfig& config, double sigma, double h);

struct EpochLoss {
    std::size_t epoch = 0;
    LossBreakdown loss;
    double mean_positive_cosine = 0.0;
};

struct TrainResult {
    embed::ProjectionHead head;
    std::vector<EpochLoss> trace;  ///< entry 0 is the state before any update
};

/// Plain gradient descent on the projection head. `backbone` must hold a
/// vector for every training sequence.
TrainResult train_encoder(const corpus::Corpus& train_corpus, const embed::EmbeddingStore& backbone,
                          const delta::DeltaMatrix& delta_matrix, const embed::ProjectionHead& initial,
                          const LossWeights& weights, const TrainConfig& config);

/// Mean cosine over the positive pairs under `head` (0 when there are none).
double mean_positive_cosine(const embed::EmbeddingStore& backbone, const PairSets& pairs,
                            const embed::ProjectionHead& head);

/// CSV with columns epoch,l_mmd,l_supcon,l_delta_pos,l_delta_neg,l_total.
void write_loss_trace(const std::vector<EpochLoss>& trace, const std::filesystem::path& path);

}  // namespace logicl::train
