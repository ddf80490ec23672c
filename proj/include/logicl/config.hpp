#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "logicl/corpus.hpp"
#include "logicl/embed.hpp"
#include "logicl/infer.hpp"
#include "logicl/oracle.hpp"
#include "logicl/train.hpp"

namespace logicl::config {

enum class DomainFormat { jsonl, raw };
enum class Grouping { window, session };

/// One log source. Its first `train_count` sequences (chronological) go to the
/// training set and the next `test_count` to the test set.
struct DomainSource {
    std::string name;
    std::filesystem::path path;
    DomainFormat format = DomainFormat::jsonl;
    Grouping grouping = Grouping::window;
    std::optional<std::size_t> window_size;  ///< unset: dataset default by name
    bool drop_partial = false;
    std::string key_pattern;
    corpus::LabelMode label_mode = corpus::LabelMode::alert_prefix;
    std::optional<std::filesystem::path> labels_csv;
    std::optional<std::size_t> train_count;  ///< unset: everything not in test
    std::size_t test_count = 0;

    /// Window size actually used for window grouping.
    std::size_t effective_window_size() const;
};

struct DatasetConfig {
    std::vector<DomainSource> domains;
    std::vector<std::pair<std::string, std::string>> rules;
};

struct OracleConfig {
    oracle::OracleSpec spec;
    std::optional<std::filesystem::path> mock_fixture;
    std::optional<std::filesystem::path> instruction_file;
};

struct PipelineConfig {
    std::uint64_t seed = 42;
    DatasetConfig dataset;
    embed::BackboneSpec backbone = embed::HashNgramSpec{};
    double head_init_noise = 1e-3;
    OracleConfig oracle;
    double mmr_lambda = 0.7;
    std::size_t k_candidates = 128;
    std::size_t checkpoint_every = 100;
    train::TrainConfig train;
    train::LossWeights loss_weights;
    infer::InferenceConfig infer;
    bool failed_as_normal = false;
    std::size_t max_in_flight = 0;  ///< 0: the oracle's own bound
    std::filesystem::path state_dir = "state";
    bool alignment_export = true;
    std::size_t alignment_limit = 256;  ///< max rows and columns per alignment CSV
};

struct Violation {
    std::string field;
    std::string message;

    friend bool operator==(const Violation&, const Violation&) = default;
};

/// A value written over the config document at a dotted field path.
struct Override {
    std::string field;
    nlohmann::json value;
    std::string source;  ///< "flag" or "env"
};

/// Reads the config document; parse failures raise ConfigError with line and column.
nlohmann::json read_config_document(const std::filesystem::path& path);

/// Writes each override into `doc`, creating intermediate objects.
void apply_overrides(nlohmann::json& doc, const std::vector<Override>& overrides);

/// Overrides from LOGICL_LLM_ENDPOINT / LOGICL_LLM_MODEL / LOGICL_LLM_TIMEOUT.
std::vector<Override> env_overrides();

/// Builds the config from a document, appending every problem to `violations`.
/// Relative paths resolve against `base_dir`.
PipelineConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                            std::vector<Violation>& violations);

/// Every violation in the file, empty when valid.
std::vector<Violation> validate_config(const std::filesystem::path& path);

/// Loads, applies env then flag overrides, and validates. Throws ConfigError
/// listing every violation.
PipelineConfig load_config(const std::filesystem::path& path, const std::vector<Override>& flag_overrides = {},
                           bool use_env = true);

/// Config echo for reports: relative paths as written, no secrets.
nlohmann::json snapshot(const PipelineConfig& cfg);

/// Bearer token for remote services, from LOGICL_LLM_API_KEY.
std::string bearer_token_from_env();

}  // namespace logicl::config
