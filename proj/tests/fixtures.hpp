#pragma once

// Small shared fixtures for unit and acceptance tests.

#include <atomic>
#include <memory>

#include "logicl/corpus.hpp"
#include "logicl/embed.hpp"
#include "logicl/error.hpp"
#include "logicl/oracle.hpp"
#include "logicl/synth.hpp"

namespace testing {

struct DeltaFixture {
    logicl::corpus::Corpus train;
    logicl::embed::EmbeddingStore vectors;
    logicl::oracle::MockSpec oracle;
};

// `n` labeled sequences from both synthetic domains, encoded with the hash backbone.
inline DeltaFixture delta_fixture(std::size_t n, std::uint64_t seed = 3) {
    logicl::synth::SynthParams p;
    p.seed = seed;
    p.source_count = n - n / 2;
    p.target_train = n / 2;
    p.target_test = 0;
    auto data = logicl::synth::generate(p);
    DeltaFixture f;
    f.train = logicl::corpus::concat({&data.source, &data.target});
    logicl::embed::HashNgramBackbone bb(logicl::embed::HashNgramSpec{});
    f.vectors = logicl::embed::embed_backbone_corpus(f.train, bb);
    f.oracle = data.oracle;
    return f;
}

// Mock oracle that starts failing after a fixed number of calls.
class FlakyOracle final : public logicl::oracle::Oracle {
public:
    FlakyOracle(logicl::oracle::MockSpec spec, std::size_t budget) : inner_(std::move(spec)), budget_(budget) {}
    logicl::oracle::OracleResponse query(const logicl::oracle::Prompt& prompt) const override {
        count();
        if (used_.fetch_add(1) >= budget_) throw logicl::TransportError("simulated outage");
        return inner_.query(prompt);
    }
    std::string fingerprint() const override { return inner_.fingerprint(); }
    std::size_t max_in_flight() const override { return inner_.max_in_flight(); }

private:
    logicl::oracle::MockOracle inner_;
    std::size_t budget_;
    mutable std::atomic<std::size_t> used_{0};
};

}  // namespace testing

#include <fstream>

#include "json.hpp"

namespace testing {

// Synthetic fixture on disk with a config patched by `patch` (merge_patch semantics).
inline std::filesystem::path write_synth_fixture(const std::filesystem::path& dir,
                                                 const logicl::synth::SynthParams& params,
                                                 const nlohmann::json& patch = nlohmann::json::object()) {
    logicl::synth::write_fixture(logicl::synth::generate(params), params, dir);
    const auto path = dir / "config.json";
    nlohmann::json cfg;
    {
        std::ifstream in(path);
        in >> cfg;
    }
    cfg.merge_patch(patch);
    std::ofstream(path, std::ios::trunc) << cfg.dump(2) << '\n';
    return path;
}

inline logicl::synth::SynthParams small_synth() {
    logicl::synth::SynthParams p;
    p.source_count = 30;
    p.target_train = 10;
    p.target_test = 12;
    return p;
}

}  // namespace testing
