#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "logicl/corpus.hpp"
#include "logicl/delta.hpp"
#include "logicl/embed.hpp"
#include "logicl/oracle.hpp"
#include "logicl/retrieve.hpp"

namespace logicl::infer {

struct InferenceConfig {
    std::size_t top_i = 4;
    std::size_t top_j = 4;
    double threshold = 0.5;
    bool cot_enabled = false;
    /// Custom instruction template; empty uses the built-in one.
    std::string instruction_template;
    /// detect_batch gives up when more than this fraction of queries fail.
    double max_failure_ratio = 0.2;

    std::size_t k_total() const noexcept { return top_i + top_j; }
};

void validate(const InferenceConfig& cfg);

struct Selection {
    std::vector<std::string> anchors;     ///< C_sim, similarity descending
    std::vector<std::string> expansions;  ///< C_delta, summed delta descending, then backfill
    std::size_t backfilled = 0;           ///< trailing expansions that came from similarity
};

/// Dual-source demonstration choice. Expansions keep only demos whose summed
/// delta over the anchors is positive; missing slots are filled with the next
/// most similar training sequences not already chosen.
Selection select_demonstrations(std::span<const double> test_vec, const retrieve::RetrievalIndex& train_index,
                                const delta::DeltaMatrix& matrix, const InferenceConfig& cfg);

struct Prediction {
    std::string sequence_id;
    double probability = 0.0;
    int decision = 0;
    std::vector<std::string> anchors;
    std::vector<std::string> expansions;
    std::optional<std::string> reasoning;
    std::size_t backfilled = 0;
    bool failed = false;
    std::string error;  ///< set when failed

    friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// Everything detection reads. Held by reference and never modified.
struct InferenceState {
    const corpus::Corpus& train;
    const retrieve::RetrievalIndex& index;  ///< trained-encoder vectors of `train`, same order
    const delta::DeltaMatrix& matrix;
    const oracle::Oracle& oracle;
};

inline int decide(double probability, double threshold) { return probability >= threshold ? 1 : 0; }

/// Selects demonstrations for an already-encoded test sequence and queries the
/// oracle. Transport and parse failures produce a failed prediction.
Prediction detect(const corpus::LogSequence& test_seq, std::span<const double> test_vec, const InferenceState& state,
                  const InferenceConfig& cfg);

Prediction detect(const corpus::LogSequence& test_seq, const embed::Encoder& encoder, const InferenceState& state,
                  const InferenceConfig& cfg);

/// detect over every test sequence with at most `max_in_flight` concurrent
/// oracle calls (0 uses the oracle's own bound). Output follows input order.
/// Throws TransportError when the failure ratio exceeds cfg.max_failure_ratio.
std::vector<Prediction> detect_batch(const corpus::Corpus& test, const embed::EmbeddingStore& test_vectors,
                                     const InferenceState& state, const InferenceConfig& cfg,
                                     std::size_t max_in_flight = 0);

void save_predictions(const std::vector<Prediction>& predictions, const std::filesystem::path& path);
std::vector<Prediction> load_predictions(const std::filesystem::path& path);

}  // namespace logicl::infer
