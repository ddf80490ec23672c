#pragma once

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "logicl/config.hpp"

namespace logicl::pipeline {

enum class Stage { prepare, embed, build_delta, train, detect, eval, all };

/// "prepare", "embed", "build-delta", "train", "detect", "eval" or "all".
Stage parse_stage(const std::string& name);
std::string stage_name(Stage stage);

/// File names inside the state directory.
struct StatePaths {
    std::filesystem::path dir;

    std::filesystem::path train_corpus() const { return dir / "train.jsonl"; }
    std::filesystem::path test_corpus() const { return dir / "test.jsonl"; }
    std::filesystem::path backbone_train() const { return dir / "backbone_train.emb"; }
    std::filesystem::path backbone_test() const { return dir / "backbone_test.emb"; }
    std::filesystem::path head_init() const { return dir / "head_init.bin"; }
    std::filesystem::path encoded_train_init() const { return dir / "encoded_train_init.emb"; }
    std::filesystem::path delta() const { return dir / "delta.bin"; }
    std::filesystem::path delta_checkpoint() const { return dir / "delta.ckpt"; }
    std::filesystem::path head() const { return dir / "head.bin"; }
    std::filesystem::path loss_trace() const { return dir / "loss_trace.csv"; }
    std::filesystem::path train_summary() const { return dir / "train_summary.json"; }
    std::filesystem::path predictions() const { return dir / "predictions.jsonl"; }
    std::filesystem::path detect_corpus() const { return dir / "detect_test.jsonl"; }
    std::filesystem::path report() const { return dir / "report.json"; }
    std::filesystem::path timing() const { return dir / "timing.json"; }
    std::filesystem::path alignment_similarity() const { return dir / "alignment_similarity.csv"; }
    std::filesystem::path alignment_delta() const { return dir / "alignment_delta.csv"; }
    std::filesystem::path manifest(Stage s) const { return dir / (stage_name(s) + ".manifest.json"); }
};

struct RunOptions {
    config::PipelineConfig config;
    std::string config_hash;
    nlohmann::json overrides = nlohmann::json::array();  ///< logged into the report
    std::optional<std::filesystem::path> test_override;  ///< detect on this corpus instead
    bool resume = false;                                 ///< continue a checkpointed delta build
    std::ostream* log = nullptr;
};

struct StageOutcome {
    Stage stage;
    bool cache_hit = false;
    double seconds = 0.0;
    std::size_t oracle_calls = 0;
    std::size_t backbone_calls = 0;
};

/// Runs one stage (or every stage for Stage::all) against the state directory.
/// A stage whose recorded inputs are unchanged and whose outputs exist is
/// skipped. Throws MissingArtifactError naming the stage to run first.
std::vector<StageOutcome> run_stage(Stage stage, const RunOptions& options);

/// Process exit status for an error escaping run_stage: 1 validation,
/// 2 missing artifact, 3 oracle or transport, 4 anything else.
int exit_code(const std::exception& e);

}  // namespace logicl::pipeline
