// logicl: command-line driver for the log anomaly detection pipeline.

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "logicl/config.hpp"
#include "logicl/embed.hpp"
#include "logicl/error.hpp"
#include "logicl/eval.hpp"
#include "logicl/pipeline.hpp"
#include "logicl/retrieve.hpp"
#include "logicl/synth.hpp"

namespace fs = std::filesystem;
using logicl::config::Override;

namespace {

struct Flags {
    std::string config;
    std::string state_dir;
    std::optional<std::uint64_t> seed;
    std::string llm_endpoint, llm_model, mock_oracle;
    std::optional<double> llm_timeout;
    std::string train_state, test;
    std::optional<std::size_t> top_i, top_j, candidates, checkpoint_every;
    std::optional<double> threshold, mmr_lambda;
    bool cot = false;
    bool resume = false;
    // retrieve
    std::string query_id;
    std::size_t k = 8;
    // synth
    std::string out_dir = "data/synthetic";
    std::uint64_t synth_seed = 7;
};

std::vector<Override> flag_overrides(const Flags& f) {
    std::vector<Override> o;
    if (!f.state_dir.empty()) o.push_back({"output.state_dir", fs::absolute(f.state_dir).string(), "flag"});
    if (!f.train_state.empty()) o.push_back({"output.state_dir", fs::absolute(f.train_state).string(), "flag"});
    if (f.seed) o.push_back({"seed", *f.seed, "flag"});
    if (!f.llm_endpoint.empty()) {
        o.push_back({"oracle.type", "remote", "flag"});
        o.push_back({"oracle.endpoint", f.llm_endpoint, "flag"});
    }
    if (!f.llm_model.empty()) o.push_back({"oracle.model", f.llm_model, "flag"});
    if (f.llm_timeout) o.push_back({"oracle.timeout", *f.llm_timeout, "flag"});
    if (!f.mock_oracle.empty()) {
        o.push_back({"oracle.type", "mock", "flag"});
        o.push_back({"oracle.fixture", fs::absolute(f.mock_oracle).string(), "flag"});
    }
    if (f.top_i) o.push_back({"infer.top_i", *f.top_i, "flag"});
    if (f.top_j) o.push_back({"infer.top_j", *f.top_j, "flag"});
    if (f.threshold) o.push_back({"infer.threshold", *f.threshold, "flag"});
    if (f.cot) o.push_back({"infer.cot", true, "flag"});
    if (f.candidates) o.push_back({"delta.k_candidates", *f.candidates, "flag"});
    if (f.checkpoint_every) o.push_back({"delta.checkpoint_every", *f.checkpoint_every, "flag"});
    if (f.mmr_lambda) o.push_back({"retrieve.mmr_lambda", *f.mmr_lambda, "flag"});
    return o;
}

nlohmann::json override_log(const std::vector<Override>& all) {
    nlohmann::json log = nlohmann::json::array();
    for (const auto& o : all) log.push_back({{"field", o.field}, {"value", o.value}, {"source", o.source}});
    return log;
}

logicl::pipeline::RunOptions load_run(const Flags& f) {
    if (f.config.empty()) throw logicl::ConfigError("--config is required");
    std::vector<Override> all = logicl::config::env_overrides();
    const auto flags = flag_overrides(f);
    all.insert(all.end(), flags.begin(), flags.end());

    logicl::pipeline::RunOptions run;
    run.config = logicl::config::load_config(f.config, all, false);
    run.config_hash = logicl::eval::file_hash(f.config);
    run.overrides = override_log(all);
    if (!f.test.empty()) run.test_override = fs::absolute(f.test);
    run.resume = f.resume;
    if (!logicl::config::bearer_token_from_env().empty())
        run.overrides.push_back({{"field", "oracle.bearer_token"}, {"value", "<redacted>"}, {"source", "env"}});
    return run;
}

int cmd_validate(const Flags& f) {
    if (f.config.empty()) throw logicl::ConfigError("--config is required");
    const auto violations = logicl::config::validate_config(f.config);
    for (const auto& v : violations) std::cout << v.field << ": " << v.message << '\n';
    if (violations.empty()) std::cout << "ok\n";
    return violations.empty() ? 0 : 1;
}

int cmd_retrieve(const Flags& f) {
    const auto run = load_run(f);
    const logicl::pipeline::StatePaths paths{run.config.state_dir};
    for (const auto& p : {paths.train_corpus(), paths.backbone_train(), paths.head_init()})
        if (!fs::exists(p)) throw logicl::MissingArtifactError(p.filename().string() + " is missing: run embed first");
    const auto train = logicl::corpus::load_corpus_jsonl(paths.train_corpus());
    const auto head = logicl::embed::load_head(fs::exists(paths.head()) ? paths.head() : paths.head_init());
    const auto store = logicl::embed::apply_head(logicl::embed::EmbeddingStore::load(paths.backbone_train()), head);
    if (!store.contains(f.query_id)) throw logicl::ConfigError("unknown --query-id " + f.query_id);

    const auto index = logicl::retrieve::RetrievalIndex::from_store(store);
    const std::size_t self = store.position(f.query_id);
    const logicl::retrieve::MMRParams params{run.config.mmr_lambda, f.k};
    const auto picks = logicl::retrieve::mmr_select(store.at(f.query_id), index, params, std::span(&self, 1));
    const auto sims = logicl::retrieve::similarities(store.at(f.query_id), index);
    std::cout << "rank\tid\tsimilarity\tlabel\n";
    for (std::size_t r = 0; r < picks.size(); ++r)
        std::cout << r + 1 << '\t' << index.id(picks[r]) << '\t' << std::fixed << std::setprecision(6)
                  << sims[picks[r]] << '\t' << train.at(index.id(picks[r])).label << '\n';
    return 0;
}

int cmd_synth(const Flags& f) {
    logicl::synth::SynthParams params;
    params.seed = f.synth_seed;
    const auto data = logicl::synth::generate(params);
    logicl::synth::write_fixture(data, params, f.out_dir);
    std::cout << "wrote " << data.source.size() << " source and " << data.target.size() << " target sequences to "
              << f.out_dir << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-domain log anomaly detection with retrieved in-context demonstrations"};
    app.require_subcommand(1);
    app.fallthrough();
    Flags f;
    app.add_option("--config", f.config, "Pipeline config (JSON)");
    app.add_option("--state-dir", f.state_dir, "State directory (overrides output.state_dir)");
    app.add_option("--seed", f.seed, "Random seed");
    app.add_option("--llm-endpoint", f.llm_endpoint, "OpenAI-compatible endpoint, selects the remote oracle");
    app.add_option("--llm-model", f.llm_model, "Model name for the remote oracle");
    app.add_option("--llm-timeout", f.llm_timeout, "Per-request timeout in seconds");
    app.add_option("--mock-oracle", f.mock_oracle, "Mock oracle fixture, selects the mock oracle");

    std::string stage_name;
    for (const char* name : {"prepare", "embed", "build-delta", "train", "detect", "eval", "all"}) {
        auto* sub = app.add_subcommand(name, std::string("Run the ") + name + " stage");
        if (std::string(name) == "all") sub->description("Run every stage in order");
        if (std::string(name) == "build-delta" || std::string(name) == "all") {
            sub->add_option("--candidates", f.candidates, "MMR candidates per query");
            sub->add_option("--checkpoint-every", f.checkpoint_every, "Queries between checkpoints");
            sub->add_flag("--resume", f.resume, "Continue from the last checkpoint");
            sub->add_option("--mmr-lambda", f.mmr_lambda, "MMR relevance weight");
        }
        if (std::string(name) == "detect" || std::string(name) == "all") {
            sub->add_option("--train-state", f.train_state, "State directory holding the trained artifacts");
            sub->add_option("--test", f.test, "Test corpus (JSONL) to use instead of the prepared split");
            sub->add_option("--top-i", f.top_i, "Similarity anchors");
            sub->add_option("--top-j", f.top_j, "Delta-guided expansions");
            sub->add_option("--threshold", f.threshold, "Decision threshold");
            sub->add_flag("--cot", f.cot, "Ask for step-by-step reasoning");
        }
        sub->callback([&stage_name, name] { stage_name = name; });
    }
    auto* retrieve = app.add_subcommand("retrieve", "Show MMR selections for one training sequence");
    retrieve->add_option("--query-id", f.query_id, "Training sequence id")->required();
    retrieve->add_option("--k", f.k, "Number of selections");
    retrieve->add_option("--mmr-lambda", f.mmr_lambda, "MMR relevance weight");
    auto* validate = app.add_subcommand("validate", "Check a config file and list every violation");
    auto* synth = app.add_subcommand("synth", "Write the synthetic two-domain fixture");
    synth->add_option("--out", f.out_dir, "Output directory");
    synth->add_option("--synth-seed", f.synth_seed, "Generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*validate) return cmd_validate(f);
        if (*retrieve) return cmd_retrieve(f);
        if (*synth) return cmd_synth(f);
        const auto run = load_run(f);
        logicl::pipeline::run_stage(logicl::pipeline::parse_stage(stage_name), run);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return logicl::pipeline::exit_code(e);
    }
}
