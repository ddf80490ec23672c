#include "logicl/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <regex>
#include <set>
#include <sstream>

#include "logicl/error.hpp"
#include "logicl/http.hpp"

namespace logicl::config {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::size_t DomainSource::effective_window_size() const {
    return window_size ? *window_size : corpus::default_window_size(name);
}

json read_config_document(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config " + path.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        // Translate the byte offset into line:column.
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError(path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) +
                          ": config is not valid JSON");
    }
}

void apply_overrides(json& doc, const std::vector<Override>& overrides) {
    for (const auto& o : overrides) {
        json* node = &doc;
        std::stringstream parts(o.field);
        std::string part;
        std::vector<std::string> keys;
        while (std::getline(parts, part, '.')) keys.push_back(part);
        for (std::size_t k = 0; k + 1 < keys.size(); ++k) {
            if (!node->contains(keys[k]) || !(*node)[keys[k]].is_object()) (*node)[keys[k]] = json::object();
            node = &(*node)[keys[k]];
        }
        (*node)[keys.back()] = o.value;
    }
}

std::vector<Override> env_overrides() {
    std::vector<Override> out;
    if (const char* v = std::getenv("LOGICL_LLM_ENDPOINT"); v && *v) {
        out.push_back({"oracle.type", "remote", "env"});
        out.push_back({"oracle.endpoint", v, "env"});
    }
    if (const char* v = std::getenv("LOGICL_LLM_MODEL"); v && *v) out.push_back({"oracle.model", v, "env"});
    if (const char* v = std::getenv("LOGICL_LLM_TIMEOUT"); v && *v) {
        char* end = nullptr;
        const double t = std::strtod(v, &end);
        if (end == v || *end != '\0') throw ConfigError("LOGICL_LLM_TIMEOUT is not a number");
        out.push_back({"oracle.timeout", t, "env"});
    }
    return out;
}

std::string bearer_token_from_env() {
    const char* v = std::getenv("LOGICL_LLM_API_KEY");
    return v ? v : "";
}

namespace {

// Typed reads from one JSON object that record problems instead of throwing.
class Section {
public:
    Section(const json& doc, std::string prefix, std::vector<Violation>& out) : prefix_(std::move(prefix)), out_(out) {
        if (doc.is_null()) {
            obj_ = &empty_;
        } else if (!doc.is_object()) {
            fail("", "expected an object");
            obj_ = &empty_;
        } else {
            obj_ = &doc;
        }
    }

    ~Section() {
        for (const auto& item : obj_->items())
            if (!known_.contains(item.key())) fail(item.key(), "unknown field");
    }

    std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }
    void fail(const std::string& key, const std::string& message) { out_.push_back({path(key), message}); }
    bool has(const std::string& key) {
        known_.insert(key);
        return obj_->contains(key);
    }
    const json& raw(const std::string& key) {
        known_.insert(key);
        return obj_->contains(key) ? (*obj_)[key] : null_;
    }

    double number(const std::string& key, double def) {
        const json& v = raw(key);
        if (v.is_null()) return def;
        if (!v.is_number()) return fail(key, "expected a number"), def;
        return v.get<double>();
    }
    std::size_t count(const std::string& key, std::size_t def) {
        const json& v = raw(key);
        if (v.is_null()) return def;
        if (!v.is_number_integer() || v.get<long long>() < 0) return fail(key, "expected a non-negative integer"), def;
        return v.get<std::size_t>();
    }
    bool flag(const std::string& key, bool def) {
        const json& v = raw(key);
        if (v.is_null()) return def;
        if (!v.is_boolean()) return fail(key, "expected true or false"), def;
        return v.get<bool>();
    }
    std::string text(const std::string& key, const std::string& def) {
        const json& v = raw(key);
        if (v.is_null()) return def;
        if (!v.is_string()) return fail(key, "expected a string"), def;
        return v.get<std::string>();
    }

private:
    const json* obj_ = nullptr;
    std::string prefix_;
    std::vector<Violation>& out_;
    std::set<std::string> known_;
    static inline const json empty_ = json::object();
    static inline const json null_ = nullptr;
};

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path raw(p);
    return raw.is_absolute() ? raw : base / raw;
}

void require(bool ok, std::vector<Violation>& v, const std::string& field, const std::string& message) {
    if (!ok) v.push_back({field, message});
}

void require_file(const fs::path& p, std::vector<Violation>& v, const std::string& field) {
    std::error_code ec;
    if (!fs::is_regular_file(p, ec)) v.push_back({field, "file not found: " + p.string()});
}

DomainSource parse_domain(const json& j, const std::string& prefix, const fs::path& base,
                          std::vector<Violation>& v) {
    Section s(j, prefix, v);
    DomainSource d;
    d.name = s.text("name", "");
    require(!d.name.empty(), v, prefix + ".name", "must be set");
    const std::string path = s.text("path", "");
    if (path.empty()) v.push_back({prefix + ".path", "must be set"});
    else require_file(d.path = resolve(base, path), v, prefix + ".path");

    const std::string format = s.text("format", "jsonl");
    if (format == "raw") d.format = DomainFormat::raw;
    else if (format != "jsonl") s.fail("format", "expected \"jsonl\" or \"raw\"");

    const std::string grouping = s.text("grouping", "window");
    if (grouping == "session") d.grouping = Grouping::session;
    else if (grouping != "window") s.fail("grouping", "expected \"window\" or \"session\"");
    if (s.has("window_size")) {
        d.window_size = s.count("window_size", 0);
        require(*d.window_size >= 1, v, prefix + ".window_size", "must be >= 1");
    }
    d.drop_partial = s.flag("drop_partial", false);
    d.key_pattern = s.text("key_pattern", "");

    const std::string labels = s.text("label_mode", "alert_prefix");
    if (labels == "none") d.label_mode = corpus::LabelMode::none;
    else if (labels != "alert_prefix") s.fail("label_mode", "expected \"alert_prefix\" or \"none\"");
    if (s.has("labels_csv")) {
        d.labels_csv = resolve(base, s.text("labels_csv", ""));
        require_file(*d.labels_csv, v, prefix + ".labels_csv");
    }
    if (s.has("train_count")) d.train_count = s.count("train_count", 0);
    d.test_count = s.count("test_count", 0);

    if (d.format == DomainFormat::raw) {
        if (d.grouping == Grouping::session) {
            if (d.key_pattern.empty()) s.fail("key_pattern", "required for session grouping");
            else {
                try {
                    std::regex probe(d.key_pattern);
                    if (probe.mark_count() < 1) s.fail("key_pattern", "needs one capture group for the session key");
                } catch (const std::regex_error&) {
                    s.fail("key_pattern", "invalid regular expression");
                }
            }
        } else if (!d.window_size) {
            try {
                corpus::default_window_size(d.name);
            } catch (const ConfigError&) {
                s.fail("window_size", "required: no default window size for dataset \"" + d.name + "\"");
            }
        }
    }
    return d;
}

embed::BackboneSpec parse_backbone(const json& j, std::vector<Violation>& v) {
    Section s(j, "encoder.backbone", v);
    const std::string type = s.text("type", "hash_ngram");
    embed::BackboneSpec spec;
    if (type == "hash_ngram") {
        embed::HashNgramSpec h;
        h.ngram_min = s.count("ngram_min", h.ngram_min);
        h.ngram_max = s.count("ngram_max", h.ngram_max);
        h.dim = s.count("dim", h.dim);
        h.seed = s.count("seed", h.seed);
        spec = h;
    } else if (type == "remote") {
        embed::RemoteEmbeddingSpec r;
        r.endpoint = s.text("endpoint", "");
        r.model = s.text("model", "");
        r.dim = s.count("dim", r.dim);
        r.timeout_seconds = s.number("timeout", r.timeout_seconds);
        r.max_retries = static_cast<int>(s.count("max_retries", static_cast<std::size_t>(r.max_retries)));
        r.batch_size = s.count("batch_size", r.batch_size);
        r.max_in_flight = s.count("max_in_flight", r.max_in_flight);
        spec = r;
    } else {
        s.fail("type", "expected \"hash_ngram\" or \"remote\"");
        return spec;
    }
    try {
        embed::validate(spec);
    } catch (const ConfigError& e) {
        v.push_back({"encoder.backbone", e.what()});
    }
    return spec;
}

OracleConfig parse_oracle(const json& j, const fs::path& base, std::vector<Violation>& v) {
    Section s(j, "oracle", v);
    OracleConfig o;
    const std::string type = s.text("type", "mock");
    if (s.has("instruction_file")) {
        o.instruction_file = resolve(base, s.text("instruction_file", ""));
        require_file(*o.instruction_file, v, "oracle.instruction_file");
    }
    // Fields of the other oracle kind are accepted so one file can switch with a flag.
    const std::string fixture = s.text("fixture", "");
    oracle::RemoteOracleSpec r;
    r.endpoint = s.text("endpoint", "");
    r.model = s.text("model", "");
    r.temperature = s.number("temperature", r.temperature);
    r.max_retries = static_cast<int>(s.count("max_retries", static_cast<std::size_t>(r.max_retries)));
    r.timeout_seconds = s.number("timeout", r.timeout_seconds);
    r.max_in_flight = s.count("max_in_flight", r.max_in_flight);

    if (type == "mock") {
        if (fixture.empty()) {
            s.fail("fixture", "required for the mock oracle");
            o.spec = oracle::MockSpec{};
            return o;
        }
        o.mock_fixture = resolve(base, fixture);
        require_file(*o.mock_fixture, v, "oracle.fixture");
        try {
            o.spec = oracle::load_mock_spec(*o.mock_fixture);
        } catch (const Error& e) {
            if (fs::exists(*o.mock_fixture)) s.fail("fixture", e.what());
            o.spec = oracle::MockSpec{};
        }
    } else if (type == "remote") {
        if (r.endpoint.empty()) s.fail("endpoint", "required for the remote oracle");
        if (r.model.empty()) s.fail("model", "required for the remote oracle");
        require(r.temperature >= 0.0, v, "oracle.temperature", "must be >= 0");
        require(r.timeout_seconds > 0.0, v, "oracle.timeout", "must be positive");
        require(r.max_in_flight >= 1, v, "oracle.max_in_flight", "must be >= 1");
        if (!r.endpoint.empty()) {
            try {
                http::parse_endpoint(r.endpoint);
            } catch (const ConfigError& e) {
                s.fail("endpoint", e.what());
            }
        }
        o.spec = r;
    } else {
        s.fail("type", "expected \"mock\" or \"remote\"");
        o.spec = oracle::MockSpec{};
    }
    return o;
}

}  // namespace

PipelineConfig parse_config(const json& doc, const fs::path& base_dir, std::vector<Violation>& v) {
    PipelineConfig c;
    Section root(doc, "", v);
    c.seed = root.count("seed", c.seed);

    {
        Section ds(root.raw("dataset"), "dataset", v);
        const json& domains = ds.raw("domains");
        if (!domains.is_array() || domains.empty()) {
            ds.fail("domains", "expected a non-empty array");
        } else {
            std::set<std::string> names;
            for (std::size_t i = 0; i < domains.size(); ++i) {
                const std::string prefix = "dataset.domains[" + std::to_string(i) + "]";
                c.dataset.domains.push_back(parse_domain(domains[i], prefix, base_dir, v));
                if (!c.dataset.domains.back().name.empty() && !names.insert(c.dataset.domains.back().name).second)
                    v.push_back({prefix + ".name", "duplicate domain name"});
            }
        }
        const json& rules = ds.raw("rules");
        if (!rules.is_null()) {
            if (!rules.is_array()) ds.fail("rules", "expected an array of [pattern, replacement] pairs");
            else
                for (std::size_t i = 0; i < rules.size(); ++i) {
                    const auto& r = rules[i];
                    const std::string field = "dataset.rules[" + std::to_string(i) + "]";
                    if (!r.is_array() || r.size() != 2 || !r[0].is_string() || !r[1].is_string()) {
                        v.push_back({field, "expected [pattern, replacement]"});
                        continue;
                    }
                    try {
                        std::regex probe(r[0].get<std::string>());
                    } catch (const std::regex_error&) {
                        v.push_back({field, "invalid regular expression"});
                        continue;
                    }
                    c.dataset.rules.emplace_back(r[0].get<std::string>(), r[1].get<std::string>());
                }
        }
    }

    {
        Section enc(root.raw("encoder"), "encoder", v);
        c.backbone = parse_backbone(enc.raw("backbone"), v);
        c.head_init_noise = enc.number("init_noise", c.head_init_noise);
        require(c.head_init_noise >= 0.0, v, "encoder.init_noise", "must be >= 0");
    }

    c.oracle = parse_oracle(root.raw("oracle"), base_dir, v);

    {
        Section r(root.raw("retrieve"), "retrieve", v);
        c.mmr_lambda = r.number("mmr_lambda", c.mmr_lambda);
        require(c.mmr_lambda >= 0.0 && c.mmr_lambda <= 1.0, v, "retrieve.mmr_lambda", "must lie in [0, 1]");
    }
    {
        Section d(root.raw("delta"), "delta", v);
        c.k_candidates = d.count("k_candidates", c.k_candidates);
        c.checkpoint_every = d.count("checkpoint_every", c.checkpoint_every);
        require(c.k_candidates >= 1, v, "delta.k_candidates", "must be >= 1");
        require(c.checkpoint_every >= 1, v, "delta.checkpoint_every", "must be >= 1");
    }
    {
        Section t(root.raw("train"), "train", v);
        auto& tc = c.train;
        tc.tau = t.number("tau", tc.tau);
        tc.theta = t.number("theta", tc.theta);
        tc.epsilon = t.number("epsilon", tc.epsilon);
        tc.sim_floor = t.number("sim_floor", tc.sim_floor);
        tc.learning_rate = t.number("learning_rate", tc.learning_rate);
        tc.epochs = t.count("epochs", tc.epochs);
        tc.batch_source = t.count("batch_source", tc.batch_source);
        tc.batch_target = t.count("batch_target", tc.batch_target);
        const std::string bw = t.text("bandwidth", "median");
        if (bw == "fixed") tc.bandwidth = train::Bandwidth::fixed;
        else if (bw != "median") t.fail("bandwidth", "expected \"median\" or \"fixed\"");
        tc.fixed_sigma = t.number("fixed_sigma", tc.fixed_sigma);
        tc.mmd_squared = t.flag("mmd_squared", tc.mmd_squared);
        tc.full_pair_pass = t.flag("full_pair_pass", tc.full_pair_pass);
        tc.full_eval_limit = t.count("full_eval_limit", tc.full_eval_limit);
        const json& sd = t.raw("source_domains");
        if (!sd.is_null()) {
            if (!sd.is_array()) t.fail("source_domains", "expected an array of domain names");
            else
                for (const auto& name : sd) {
                    if (!name.is_string()) {
                        t.fail("source_domains", "expected an array of domain names");
                        break;
                    }
                    tc.source_domains.insert(name.get<std::string>());
                }
        }

        require(tc.tau > 0.0, v, "train.tau", "must be positive");
        require(tc.theta >= 0.0, v, "train.theta", "must be >= 0");
        require(tc.epsilon >= 0.0, v, "train.epsilon", "must be >= 0");
        require(tc.sim_floor > 0.0 && tc.sim_floor < 1.0, v, "train.sim_floor", "must lie in (0, 1)");
        require(tc.learning_rate >= 0.0 && std::isfinite(tc.learning_rate), v, "train.learning_rate",
                "must be finite and >= 0");
        require(tc.epochs >= 1, v, "train.epochs", "must be >= 1");
        require(tc.batch_source >= 1, v, "train.batch_source", "must be >= 1");
        require(tc.batch_target >= 1, v, "train.batch_target", "must be >= 1");
        require(tc.fixed_sigma > 0.0, v, "train.fixed_sigma", "must be positive");

        Section w(t.raw("loss_weights"), "train.loss_weights", v);
        auto& lw = c.loss_weights;
        lw.mmd = w.number("mmd", lw.mmd);
        lw.supcon = w.number("supcon", lw.supcon);
        lw.delta = w.number("delta", lw.delta);
        lw.delta_neg = w.number("delta_neg", lw.delta_neg);
        for (auto [name, val] : {std::pair{"mmd", lw.mmd}, {"supcon", lw.supcon}, {"delta", lw.delta},
                                 {"delta_neg", lw.delta_neg}})
            require(val >= 0.0 && std::isfinite(val), v, std::string("train.loss_weights.") + name,
                    "must be finite and >= 0");
    }
    {
        Section in(root.raw("infer"), "infer", v);
        auto& ic = c.infer;
        ic.top_i = in.count("top_i", ic.top_i);
        ic.top_j = in.count("top_j", ic.top_j);
        ic.threshold = in.number("threshold", ic.threshold);
        ic.cot_enabled = in.flag("cot", ic.cot_enabled);
        ic.max_failure_ratio = in.number("max_failure_ratio", ic.max_failure_ratio);
        c.failed_as_normal = in.flag("failed_as_normal", c.failed_as_normal);
        c.max_in_flight = in.count("max_in_flight", c.max_in_flight);
        require(ic.top_i >= 1, v, "infer.top_i", "must be >= 1");
        require(ic.threshold > 0.0 && ic.threshold < 1.0, v, "infer.threshold", "must lie in (0, 1)");
        require(ic.max_failure_ratio >= 0.0 && ic.max_failure_ratio <= 1.0, v, "infer.max_failure_ratio",
                "must lie in [0, 1]");
    }
    {
        Section out(root.raw("output"), "output", v);
        c.state_dir = resolve(base_dir, out.text("state_dir", "state"));
        c.alignment_export = out.flag("alignment_export", c.alignment_export);
        c.alignment_limit = out.count("alignment_limit", c.alignment_limit);
    }

    if (c.oracle.instruction_file) {
        std::ifstream in(*c.oracle.instruction_file, std::ios::binary);
        c.infer.instruction_template.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    for (const auto& name : c.train.source_domains) {
        bool found = false;
        for (const auto& d : c.dataset.domains) found = found || d.name == name;
        require(found, v, "train.source_domains", "unknown domain \"" + name + "\"");
    }
    return c;
}

std::vector<Violation> validate_config(const fs::path& path) {
    std::vector<Violation> v;
    parse_config(read_config_document(path), path.parent_path(), v);
    return v;
}

PipelineConfig load_config(const fs::path& path, const std::vector<Override>& flag_overrides, bool use_env) {
    json doc = read_config_document(path);
    if (use_env) apply_overrides(doc, env_overrides());
    apply_overrides(doc, flag_overrides);
    std::vector<Violation> v;
    PipelineConfig cfg = parse_config(doc, path.parent_path(), v);
    if (!v.empty()) {
        std::string msg = "invalid config " + path.string() + ":";
        for (const auto& x : v) msg += "\n  " + x.field + ": " + x.message;
        throw ConfigError(msg);
    }
    const std::string token = bearer_token_from_env();
    if (auto* r = std::get_if<oracle::RemoteOracleSpec>(&cfg.oracle.spec)) r->bearer_token = token;
    if (auto* r = std::get_if<embed::RemoteEmbeddingSpec>(&cfg.backbone)) r->bearer_token = token;
    return cfg;
}

json snapshot(const PipelineConfig& c) {
    json domains = json::array();
    for (const auto& d : c.dataset.domains) {
        json j = {{"name", d.name},
                  {"path", d.path.filename().string()},
                  {"format", d.format == DomainFormat::raw ? "raw" : "jsonl"},
                  {"test_count", d.test_count}};
        if (d.train_count) j["train_count"] = *d.train_count;
        if (d.format == DomainFormat::raw) {
            j["grouping"] = d.grouping == Grouping::session ? "session" : "window";
            if (d.grouping == Grouping::window) j["window_size"] = d.effective_window_size();
            else j["key_pattern"] = d.key_pattern;
            j["drop_partial"] = d.drop_partial;
        }
        domains.push_back(j);
    }
    json rules = json::array();
    for (const auto& [p, r] : c.dataset.rules) rules.push_back({p, r});

    json backbone = std::visit(
        [](const auto& s) -> json {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, embed::HashNgramSpec>)
                return {{"type", "hash_ngram"}, {"ngram_min", s.ngram_min}, {"ngram_max", s.ngram_max},
                        {"dim", s.dim}, {"seed", s.seed}};
            else
                return {{"type", "remote"}, {"endpoint", s.endpoint}, {"model", s.model}, {"dim", s.dim}};
        },
        c.backbone);
    json oracle_j = std::visit(
        [&](const auto& s) -> json {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, oracle::MockSpec>)
                return {{"type", "mock"}, {"fixture", c.oracle.mock_fixture ? c.oracle.mock_fixture->filename().string() : ""}};
            else
                return {{"type", "remote"}, {"endpoint", s.endpoint}, {"model", s.model},
                        {"temperature", s.temperature}, {"max_retries", s.max_retries},
                        {"timeout", s.timeout_seconds}, {"max_in_flight", s.max_in_flight}};
        },
        c.oracle.spec);
    oracle_j["fingerprint"] = oracle::fingerprint(c.oracle.spec);

    const auto& t = c.train;
    return {
        {"seed", c.seed},
        {"dataset", {{"domains", domains}, {"rules", rules}}},
        {"encoder", {{"backbone", backbone}, {"init_noise", c.head_init_noise}}},
        {"oracle", oracle_j},
        {"retrieve", {{"mmr_lambda", c.mmr_lambda}}},
        {"delta", {{"k_candidates", c.k_candidates}, {"checkpoint_every", c.checkpoint_every}}},
        {"train",
         {{"tau", t.tau},
          {"theta", t.theta},
          {"epsilon", t.epsilon},
          {"sim_floor", t.sim_floor},
          {"learning_rate", t.learning_rate},
          {"epochs", t.epochs},
          {"batch_source", t.batch_source},
          {"batch_target", t.batch_target},
          {"bandwidth", t.bandwidth == train::Bandwidth::median ? "median" : "fixed"},
          {"fixed_sigma", t.fixed_sigma},
          {"mmd_squared", t.mmd_squared},
          {"full_pair_pass", t.full_pair_pass},
          {"full_eval_limit", t.full_eval_limit},
          {"source_domains", t.source_domains},
          {"loss_weights",
           {{"mmd", c.loss_weights.mmd},
            {"supcon", c.loss_weights.supcon},
            {"delta", c.loss_weights.delta},
            {"delta_neg", c.loss_weights.delta_neg}}}}},
        {"infer",
         {{"top_i", c.infer.top_i},
          {"top_j", c.infer.top_j},
          {"k_total", c.infer.k_total()},
          {"threshold", c.infer.threshold},
          {"cot", c.infer.cot_enabled},
          {"max_failure_ratio", c.infer.max_failure_ratio},
          {"failed_as_normal", c.failed_as_normal}}},
        {"output", {{"alignment_export", c.alignment_export}, {"alignment_limit", c.alignment_limit}}},
    };
}

}  // namespace logicl::config
