#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "logicl/corpus.hpp"
#include "logicl/delta.hpp"
#include "logicl/embed.hpp"
#include "logicl/infer.hpp"

namespace logicl::eval {

struct Metrics {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::size_t failed = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    // Set when the corresponding denominator was zero and the value defaulted to 0.
    bool precision_undefined = false;
    bool recall_undefined = false;
    bool f1_undefined = false;

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

/// Derived metrics from a confusion matrix.
Metrics from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn, std::size_t failed = 0);

/// `predictions` and `test` must list the same ids in the same order. Failed
/// predictions are counted in `failed` only, or as normal when
/// `failed_as_normal` is set.
Metrics compute_metrics(const std::vector<infer::Prediction>& predictions, const corpus::Corpus& test,
                        bool failed_as_normal = false);

nlohmann::json to_json(const Metrics& m);

/// Two CSVs with target ids as rows and source ids as columns: cosine
/// similarity from `store`, and the stored delta (0 when absent) with the
/// target as query. Both share the header and row labels byte for byte.
void export_alignment_matrices(std::span<const std::string> source_ids, std::span<const std::string> target_ids,
                               const embed::EmbeddingStore& store, const delta::DeltaMatrix& matrix,
                               const std::filesystem::path& similarity_csv, const std::filesystem::path& delta_csv);

inline constexpr int kReportSchemaVersion = 1;

struct ReportInput {
    Metrics metrics;
    nlohmann::json config;  ///< effective configuration snapshot
    std::string config_hash;
    nlohmann::json fingerprints = nlohmann::json::object();
    nlohmann::json counters = nlohmann::json::object();
    nlohmann::json overrides = nlohmann::json::array();
};

nlohmann::json build_report(const ReportInput& input);

/// Writes the report as indented JSON with sorted keys.
void write_report(const ReportInput& input, const std::filesystem::path& path);

/// FNV-1a of a file's bytes, hex encoded.
std::string file_hash(const std::filesystem::path& path);

}  // namespace logicl::eval
