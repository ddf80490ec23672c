#include "doctest.h"

#include <cstdlib>

#include "logicl/config.hpp"
#include "logicl/error.hpp"
#include "support.hpp"

using namespace logicl;
using namespace logicl::config;
using json = nlohmann::json;

namespace {

struct ConfigDir {
    testing::TempDir dir;
    ConfigDir() {
        testing::write_text(dir / "bgl.log", "- 1 ok\n");
        testing::write_text(dir / "liberty.log", "- 1 ok\n");
        testing::write_text(dir / "tgt.jsonl", "");
        testing::write_text(dir / "mock.json", R"({"bias": 0.0, "keywords": {"FATAL": 2.0}})");
    }
    json minimal() const {
        return {{"dataset",
                 {{"domains",
                   {{{"name", "BGL"}, {"path", "bgl.log"}, {"format", "raw"}, {"test_count", 5}},
                    {{"name", "Liberty"}, {"path", "liberty.log"}, {"format", "raw"}}}}}},
                {"oracle", {{"type", "mock"}, {"fixture", "mock.json"}}}};
    }
    std::filesystem::path write(const json& doc, const std::string& name = "config.json") const {
        testing::write_text(dir / name, doc.dump(2));
        return dir / name;
    }
};

bool has_field(const std::vector<Violation>& v, const std::string& field) {
    for (const auto& x : v)
        if (x.field == field) return true;
    return false;
}

}  // namespace

TEST_CASE("protocol defaults") {
    ConfigDir cd;
    const auto cfg = load_config(cd.write(cd.minimal()), {}, false);
    CHECK(cfg.dataset.domains[0].effective_window_size() == 40);
    CHECK(cfg.dataset.domains[1].effective_window_size() == 30);
    CHECK(cfg.k_candidates == 128);
    CHECK(cfg.mmr_lambda == 0.7);
    CHECK(cfg.infer.k_total() == 8);
    CHECK(cfg.infer.threshold == 0.5);
    CHECK(cfg.loss_weights.mmd == 0.1);
    CHECK(cfg.loss_weights.supcon == 1.0);
    CHECK(cfg.loss_weights.delta == 1.0);
    CHECK(cfg.seed == 42);

    const json snap = snapshot(cfg);
    CHECK(snap["dataset"]["domains"][0]["window_size"] == 40);
    CHECK(snap["dataset"]["domains"][1]["window_size"] == 30);
    CHECK(snap["dataset"]["domains"][0]["path"] == "bgl.log");
    CHECK(snap["delta"]["k_candidates"] == 128);
    CHECK(snap["infer"]["top_i"].get<int>() + snap["infer"]["top_j"].get<int>() == 8);
    CHECK(snap["infer"]["threshold"] == 0.5);
    CHECK(snap["train"]["loss_weights"] == json{{"mmd", 0.1}, {"supcon", 1.0}, {"delta", 1.0}, {"delta_neg", 1.0}});
    CHECK(snap["oracle"]["fixture"] == "mock.json");
}

TEST_CASE("every violation is reported with its field") {
    ConfigDir cd;
    json doc = cd.minimal();
    doc["retrieve"]["mmr_lambda"] = 1.5;
    doc["infer"]["threshold"] = 0.0;
    doc["train"]["tau"] = -1;
    doc["dataset"]["domains"][0]["path"] = "missing.log";
    doc["dataset"]["domains"][1]["name"] = "hdfs";  // raw window without a default size
    doc["delta"]["k_candidate"] = 3;                // misspelt
    const auto v = validate_config(cd.write(doc));
    CHECK(has_field(v, "retrieve.mmr_lambda"));
    CHECK(has_field(v, "infer.threshold"));
    CHECK(has_field(v, "train.tau"));
    CHECK(has_field(v, "dataset.domains[0].path"));
    CHECK(has_field(v, "dataset.domains[1].window_size"));
    CHECK(has_field(v, "delta.k_candidate"));
    CHECK(v.size() == 6);
    CHECK_THROWS_WITH_AS(load_config(cd.write(doc), {}, false), doctest::Contains("retrieve.mmr_lambda"), ConfigError);
    CHECK(validate_config(cd.write(cd.minimal())).empty());
}

TEST_CASE("remote oracle and session grouping requirements") {
    ConfigDir cd;
    json doc = cd.minimal();
    doc["oracle"] = {{"type", "remote"}};
    doc["dataset"]["domains"][0]["grouping"] = "session";
    const auto v = validate_config(cd.write(doc));
    CHECK(has_field(v, "oracle.endpoint"));
    CHECK(has_field(v, "oracle.model"));
    CHECK(has_field(v, "dataset.domains[0].key_pattern"));

    doc["oracle"] = {{"type", "remote"}, {"endpoint", "http://localhost:8000"}, {"model", "m"}};
    doc["dataset"]["domains"][0]["key_pattern"] = "(blk_\\d+)";
    CHECK(validate_config(cd.write(doc)).empty());
}

TEST_CASE("syntax errors carry a position") {
    ConfigDir cd;
    testing::write_text(cd.dir / "bad.json", "{\n  \"seed\": 1,\n  oops\n}\n");
    CHECK_THROWS_WITH_AS(read_config_document(cd.dir / "bad.json"), doctest::Contains("bad.json:3:"), ConfigError);
    CHECK_THROWS_AS(read_config_document(cd.dir / "absent.json"), ConfigError);
}

TEST_CASE("overrides: flags beat environment beats file") {
    ConfigDir cd;
    json doc = cd.minimal();
    doc["oracle"] = {{"type", "remote"}, {"endpoint", "http://file:1"}, {"model", "file-model"}, {"timeout", 9}};
    const auto path = cd.write(doc);

    ::setenv("LOGICL_LLM_MODEL", "env-model", 1);
    ::setenv("LOGICL_LLM_TIMEOUT", "33", 1);
    ::setenv("LOGICL_LLM_API_KEY", "tok", 1);
    const auto env_only = load_config(path, {}, true);
    const auto& r1 = std::get<oracle::RemoteOracleSpec>(env_only.oracle.spec);
    CHECK(r1.model == "env-model");
    CHECK(r1.timeout_seconds == 33);
    CHECK(r1.endpoint == "http://file:1");
    CHECK(r1.bearer_token == "tok");
    CHECK(snapshot(env_only).dump().find("tok") == std::string::npos);

    const auto flagged = load_config(path, {{"oracle.model", "flag-model", "flag"}}, true);
    CHECK(std::get<oracle::RemoteOracleSpec>(flagged.oracle.spec).model == "flag-model");
    CHECK(std::get<oracle::RemoteOracleSpec>(flagged.oracle.spec).timeout_seconds == 33);

    ::setenv("LOGICL_LLM_TIMEOUT", "soon", 1);
    CHECK_THROWS_AS(env_overrides(), ConfigError);
    ::unsetenv("LOGICL_LLM_MODEL");
    ::unsetenv("LOGICL_LLM_TIMEOUT");
    ::unsetenv("LOGICL_LLM_API_KEY");
    CHECK(env_overrides().empty());
}

TEST_CASE("dotted overrides create intermediate objects") {
    json doc = json::object();
    apply_overrides(doc, {{"infer.top_j", 0, "flag"}, {"seed", 7, "flag"}});
    CHECK(doc == json{{"infer", {{"top_j", 0}}}, {"seed", 7}});
}

TEST_CASE("relative paths resolve against the config file") {
    ConfigDir cd;
    json doc = cd.minimal();
    doc["output"]["state_dir"] = "run1";
    const auto cfg = load_config(cd.write(doc), {}, false);
    CHECK(cfg.state_dir == cd.dir.path() / "run1");
    CHECK(cfg.dataset.domains[0].path == cd.dir.path() / "bgl.log");
}
