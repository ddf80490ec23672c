#include "doctest.h"

#include <chrono>
#include <cmath>
#include <set>
#include <thread>

#include "logicl/error.hpp"
#include "logicl/infer.hpp"
#include "support.hpp"

using namespace logicl;
using namespace logicl::infer;

namespace {

// Train vectors on the unit circle at increasing angles from (1, 0).
struct World {
    corpus::Corpus train;
    retrieve::RetrievalIndex index;
    delta::DeltaMatrix matrix;
    Vector query{1.0, 0.0};

    World() {
        Matrix v(0, 0);
        std::vector<std::string> ids;
        for (int k = 0; k < 10; ++k) {
            const std::string id = "t" + std::to_string(k);
            const double a = 0.1 * k;
            v.append_row(Vector{std::cos(a), std::sin(a)});
            ids.push_back(id);
            train.add(testing::seq(id, "src", k % 2, {"msg " + id}));
        }
        index = retrieve::RetrievalIndex(ids, v);
    }
};

// Replies with a probability keyed on the query text; sleeps to scramble completion order.
class ScriptedOracle final : public oracle::Oracle {
public:
    oracle::OracleResponse query(const oracle::Prompt& p) const override {
        count();
        const std::string& text = p.query.messages.at(0);
        if (text.find("boom") != std::string::npos) throw TransportError("down");
        if (text.find("gibberish") != std::string::npos) throw ResponseParseError("no probability", "??");
        const int k = std::stoi(text.substr(text.find('#') + 1));
        std::this_thread::sleep_for(std::chrono::milliseconds(2 * (10 - k % 10)));
        oracle::OracleResponse r;
        r.probability = (k % 3) / 2.0;
        if (p.cot_enabled) r.reasoning = "because " + std::to_string(k);
        r.raw = oracle::format_response(r);
        return r;
    }
    std::string fingerprint() const override { return "scripted"; }
    std::size_t max_in_flight() const override { return 4; }
};

}  // namespace

TEST_CASE("decision threshold is inclusive") {
    CHECK(decide(0.5, 0.5) == 1);
    CHECK(decide(0.4999999, 0.5) == 0);
    CHECK(decide(0.0, 0.1) == 0);
    CHECK(decide(1.0, 0.9) == 1);
}

TEST_CASE("anchors are the nearest neighbours and expansions need positive evidence") {
    World w;
    w.matrix.add_row({"t0", 0, {{"t7", 0, 0, 0.6}, {"t8", 0, 0, -0.9}, {"t1", 0, 0, 0.3}}});
    w.matrix.add_row({"t1", 1, {{"t9", 0, 0, 0.2}, {"t8", 0, 0, 0.1}}});
    InferenceConfig cfg;
    cfg.top_i = 2;
    cfg.top_j = 3;
    const auto sel = select_demonstrations(w.query, w.index, w.matrix, cfg);
    CHECK(sel.anchors == std::vector<std::string>{"t0", "t1"});
    // t7 (0.6), t9 (0.2); t8 sums to -0.8 and is dropped; t1 is an anchor
    CHECK(sel.expansions == std::vector<std::string>{"t7", "t9", "t2"});
    CHECK(sel.backfilled == 1);
}

TEST_CASE("backfill skips anything already chosen") {
    World w;
    w.matrix.add_row({"t0", 0, {{"t2", 0, 0, 0.5}, {"t3", 0, 0, 0.4}}});
    InferenceConfig cfg;
    cfg.top_i = 2;
    cfg.top_j = 4;
    const auto sel = select_demonstrations(w.query, w.index, w.matrix, cfg);
    CHECK(sel.anchors == std::vector<std::string>{"t0", "t1"});
    CHECK(sel.expansions == std::vector<std::string>{"t2", "t3", "t4", "t5"});
    CHECK(sel.backfilled == 2);
    std::set<std::string> all(sel.anchors.begin(), sel.anchors.end());
    for (const auto& e : sel.expansions) CHECK(all.insert(e).second);

    cfg.top_j = 0;
    const auto knn = select_demonstrations(w.query, w.index, w.matrix, cfg);
    CHECK(knn.expansions.empty());

    // an empty matrix degenerates to plain nearest neighbours
    cfg.top_j = 2;
    const auto plain = select_demonstrations(w.query, w.index, delta::DeltaMatrix{}, cfg);
    CHECK(plain.expansions == std::vector<std::string>{"t2", "t3"});
    CHECK(plain.backfilled == 2);

    // a tiny index cannot fill every slot
    cfg.top_i = 8;
    cfg.top_j = 8;
    const auto small = select_demonstrations(w.query, w.index, delta::DeltaMatrix{}, cfg);
    CHECK(small.anchors.size() == 8);
    CHECK(small.expansions.size() == 2);
}

TEST_CASE("matched demonstration flips a coin flip to an anomaly") {
    oracle::MockSpec spec;
    spec.concepts = {{"e", {"qqq"}, {"aaa"}}};
    spec.demo_weight = std::log(9.0);
    const oracle::MockOracle mock(spec);

    corpus::Corpus train;
    train.add(testing::seq("s0", "src", 0, {"zzz"}));
    train.add(testing::seq("s1", "src", 1, {"aaa aaa"}));
    Matrix v(0, 0);
    v.append_row(Vector{1, 0});
    v.append_row(Vector{0, 1});
    const retrieve::RetrievalIndex index({"s0", "s1"}, v);
    delta::DeltaMatrix m;
    m.add_row({"s0", 0, {{"s1", 0.5, 0.5, 0.0}}});
    const InferenceState state{train, index, m, mock};

    InferenceConfig cfg;
    cfg.top_i = 1;
    cfg.top_j = 0;
    const auto q = testing::seq("q", "tgt", 1, {"qqq"});
    const auto without = detect(q, Vector{1, 0}, state, cfg);
    CHECK(without.probability == 0.5);
    CHECK(without.decision == 1);  // p = threshold counts as anomalous
    CHECK(without.anchors == std::vector<std::string>{"s0"});

    cfg.top_j = 1;
    const auto with = detect(q, Vector{1, 0}, state, cfg);
    CHECK(with.expansions == std::vector<std::string>{"s1"});
    CHECK(with.probability == doctest::Approx(0.9));
    CHECK(with.decision == 1);
}

TEST_CASE("batch detection keeps input order under scrambled latency") {
    World w;
    const ScriptedOracle oracle;
    const InferenceState state{w.train, w.index, w.matrix, oracle};
    corpus::Corpus test;
    Matrix tv(0, 0);
    std::vector<std::string> ids;
    for (int k = 0; k < 12; ++k) {
        ids.push_back("q" + std::to_string(k));
        test.add(testing::seq(ids.back(), "tgt", 0, {"query #" + std::to_string(k)}));
        tv.append_row(Vector{std::cos(0.3 * k), std::sin(0.3 * k)});
    }
    const embed::EmbeddingStore store("fp", ids, tv);
    InferenceConfig cfg;
    cfg.cot_enabled = true;
    const auto parallel = detect_batch(test, store, state, cfg, 4);
    const auto serial = detect_batch(test, store, state, cfg, 1);
    REQUIRE(parallel.size() == 12);
    CHECK(parallel == serial);
    for (int k = 0; k < 12; ++k) {
        CHECK(parallel[k].sequence_id == ids[k]);
        CHECK(parallel[k].probability == (k % 3) / 2.0);
        CHECK(parallel[k].reasoning == "because " + std::to_string(k));
        CHECK(parallel[k].anchors.size() == 4);
    }
    CHECK(oracle.calls() == 24);
}

TEST_CASE("failed queries become sentinels until the failure budget runs out") {
    World w;
    const ScriptedOracle oracle;
    const InferenceState state{w.train, w.index, w.matrix, oracle};
    corpus::Corpus test;
    Matrix tv(0, 0);
    std::vector<std::string> ids;
    const std::vector<std::string> texts{"#1", "boom", "#2", "gibberish", "#4", "#5", "#6", "#7", "#8", "#9"};
    for (std::size_t k = 0; k < texts.size(); ++k) {
        ids.push_back("q" + std::to_string(k));
        test.add(testing::seq(ids.back(), "tgt", 0, {texts[k]}));
        tv.append_row(Vector{1, 0});
    }
    const embed::EmbeddingStore store("fp", ids, tv);
    InferenceConfig cfg;
    const auto preds = detect_batch(test, store, state, cfg);
    CHECK(preds[1].failed);
    CHECK(preds[1].error == "down");
    CHECK(preds[3].failed);
    CHECK(!preds[0].failed);

    cfg.max_failure_ratio = 0.1;
    CHECK_THROWS_WITH_AS(detect_batch(test, store, state, cfg), doctest::Contains("2 of 10"), TransportError);
}

TEST_CASE("predictions round trip") {
    testing::TempDir dir;
    std::vector<Prediction> preds(2);
    preds[0] = {"a", 0.75, 1, {"x", "y"}, {"z"}, std::string("why"), 1, false, ""};
    preds[1] = {"b", 0.0, 0, {"x"}, {}, std::nullopt, 0, true, "timeout"};
    save_predictions(preds, dir / "p.jsonl");
    CHECK(load_predictions(dir / "p.jsonl") == preds);
    testing::write_text(dir / "bad.jsonl", "{}\n");
    CHECK_THROWS_AS(load_predictions(dir / "bad.jsonl"), FormatError);
}

TEST_CASE("inference config validation") {
    InferenceConfig cfg;
    CHECK(cfg.k_total() == 8);
    cfg.threshold = 1.0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = InferenceConfig{};
    cfg.top_i = 0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
}
