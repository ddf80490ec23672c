#include "logicl/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <thread>

#include "logicl/embed.hpp"
#include "logicl/error.hpp"
#include "logicl/hash.hpp"
#include "logicl/http.hpp"

namespace logicl::oracle {

using json = nlohmann::json;

namespace {

constexpr const char* kTemplate =
    "You are an expert site reliability engineer analysing system logs. "
    "Each log sequence below is a group of consecutive messages from one system, with messages "
    "separated by \" ;-; \". Labelled examples are given first; decide whether the final query "
    "sequence is normal or anomalous. {FORMAT}";

constexpr const char* kFormatPlain =
    "Reply with a single JSON object of the form {\"probability\": <number between 0 and 1>} "
    "giving the probability that the query sequence is anomalous, and nothing else.";

constexpr const char* kFormatCot =
    "Think step by step about which events indicate a failure, then reply with a single JSON "
    "object of the form {\"probability\": <number between 0 and 1>, \"reasoning\": \"<your "
    "step-by-step diagnosis>\"} giving the probability that the query sequence is anomalous.";

std::size_t count_occurrences(const std::string& text, const std::string& token) {
    if (token.empty()) return 0;
    std::size_t n = 0;
    for (auto pos = text.find(token); pos != std::string::npos; pos = text.find(token, pos + token.size())) ++n;
    return n;
}

bool contains_any(const std::string& text, const std::vector<std::string>& terms) {
    for (const auto& t : terms)
        if (!t.empty() && text.find(t) != std::string::npos) return true;
    return false;
}

// Extent of the first balanced {...} in `text`, respecting JSON strings.
std::optional<std::string> first_json_object(const std::string& text) {
    const auto start = text.find('{');
    if (start == std::string::npos) return std::nullopt;
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{') ++depth;
        else if (c == '}' && --depth == 0) return text.substr(start, i - start + 1);
    }
    return std::nullopt;
}

}  // namespace

double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::string default_instruction(bool cot) { return render_instruction(kTemplate, cot); }

std::string render_instruction(const std::string& instruction_template, bool cot) {
    std::string out = instruction_template;
    const std::string marker = "{FORMAT}";
    const std::string format = cot ? kFormatCot : kFormatPlain;
    if (auto pos = out.find(marker); pos != std::string::npos)
        out.replace(pos, marker.size(), format);
    else
        out += " " + format;
    return out;
}

Prompt build_prompt(std::vector<LogSequence> demos, LogSequence query, bool cot) {
    return build_prompt(std::move(demos), std::move(query), cot, kTemplate);
}

Prompt build_prompt(std::vector<LogSequence> demos, LogSequence query, bool cot,
                    const std::string& instruction_template) {
    return Prompt{render_instruction(instruction_template, cot), std::move(demos), std::move(query), cot};
}

std::string render_user_message(const Prompt& prompt) {
    std::string out;
    for (std::size_t i = 0; i < prompt.demonstrations.size(); ++i) {
        const auto& d = prompt.demonstrations[i];
        out += "### Example " + std::to_string(i + 1) + "\n";
        out += "Log: " + embed::join_messages(d) + "\n";
        out += std::string("Label: ") + (d.label ? "anomalous" : "normal") + "\n\n";
    }
    out += "### Query\n";
    out += "Log: " + embed::join_messages(prompt.query) + "\n";
    out += "Label: ?\n";
    return out;
}

std::string format_response(const OracleResponse& response) {
    json j = {{"probability", response.probability}};
    if (response.reasoning) j["reasoning"] = *response.reasoning;
    return j.dump();
}

OracleResponse parse_response(const std::string& text) {
    auto out_of_range = [&](double p) {
        return ResponseParseError("probability " + std::to_string(p) + " outside [0, 1]", text);
    };
    if (auto obj_text = first_json_object(text)) {
        json obj = json::parse(*obj_text, nullptr, false);
        if (obj.is_object() && obj.contains("probability") && obj["probability"].is_number()) {
            const double p = obj["probability"].get<double>();
            if (!(p >= 0.0 && p <= 1.0)) throw out_of_range(p);
            OracleResponse r{p, std::nullopt, text};
            if (obj.contains("reasoning") && obj["reasoning"].is_string())
                r.reasoning = obj["reasoning"].get<std::string>();
            return r;
        }
    }
    static const std::regex fallback(R"(probability\D*?(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?))",
                                     std::regex::ECMAScript | std::regex::icase);
    std::smatch m;
    if (std::regex_search(text, m, fallback)) {
        const double p = std::stod(m[1].str());
        if (!(p >= 0.0 && p <= 1.0)) throw out_of_range(p);
        return OracleResponse{p, std::nullopt, text};
    }
    throw ResponseParseError("no probability found in LLM reply", text);
}

void validate(const OracleSpec& spec) {
    std::visit(
        [](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, MockSpec>) {
                if (!std::isfinite(s.bias) || !std::isfinite(s.demo_weight))
                    throw ConfigError("mock oracle weights must be finite");
                for (const auto& k : s.keywords)
                    if (k.token.empty() || !std::isfinite(k.weight))
                        throw ConfigError("mock keyword needs a token and a finite weight");
            } else {
                http::parse_endpoint(s.endpoint);
                if (s.model.empty()) throw ConfigError("oracle.model must be set");
                if (!(s.temperature >= 0.0)) throw ConfigError("oracle.temperature must be >= 0");
                if (s.max_retries < 0) throw ConfigError("oracle.max_retries must be >= 0");
                if (!(s.timeout_seconds > 0.0)) throw ConfigError("oracle.timeout must be positive");
                if (s.max_in_flight < 1) throw ConfigError("oracle.max_in_flight must be >= 1");
            }
        },
        spec);
}

std::string fingerprint(const OracleSpec& spec) {
    return std::visit(
        [](const auto& s) -> std::string {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, MockSpec>)
                return "mock:" + hex64(fnv1a(to_json(s).dump()));
            else
                return "remote:" + s.endpoint + ":" + s.model + ":t" + json(s.temperature).dump();
        },
        spec);
}

MockSpec mock_spec_from_json(const json& j) {
    MockSpec spec;
    try {
        spec.bias = j.value("bias", 0.0);
        spec.demo_weight = j.value("demo_weight", 0.0);
        if (j.contains("keywords")) {
            const auto& kw = j["keywords"];
            if (kw.is_object()) {
                for (const auto& [token, weight] : kw.items()) spec.keywords.push_back({token, weight.get<double>()});
            } else {
                for (const auto& item : kw)
                    spec.keywords.push_back({item.at("token").get<std::string>(), item.at("weight").get<double>()});
            }
        }
        if (j.contains("concepts")) {
            for (const auto& c : j["concepts"]) {
                MockConcept entry;
                entry.name = c.value("name", "");
                entry.query_terms = c.at("query_terms").get<std::vector<std::string>>();
                entry.demo_terms = c.value("demo_terms", std::vector<std::string>{});
                spec.concepts.push_back(std::move(entry));
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid mock oracle fixture: ") + e.what());
    }
    validate(OracleSpec{spec});
    return spec;
}

json to_json(const MockSpec& spec) {
    json kw = json::array();
    for (const auto& k : spec.keywords) kw.push_back({{"token", k.token}, {"weight", k.weight}});
    json concepts = json::array();
    for (const auto& c : spec.concepts)
        concepts.push_back({{"name", c.name}, {"query_terms", c.query_terms}, {"demo_terms", c.demo_terms}});
    return {{"bias", spec.bias}, {"demo_weight", spec.demo_weight}, {"keywords", kw}, {"concepts", concepts}};
}

MockSpec load_mock_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open mock oracle fixture " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("mock oracle fixture " + path.string() + " is not valid JSON");
    return mock_spec_from_json(j);
}

MockOracle::MockOracle(MockSpec spec) : spec_(std::move(spec)) { validate(OracleSpec{spec_}); }

std::size_t MockOracle::max_in_flight() const {
    return std::max(1u, std::thread::hardware_concurrency());
}

std::string MockOracle::fingerprint() const { return oracle::fingerprint(OracleSpec{spec_}); }

OracleResponse MockOracle::query(const Prompt& prompt) const {
    count();
    const std::string query_text = embed::join_messages(prompt.query);
    double logit = spec_.bias;
    std::string evidence;
    for (const auto& k : spec_.keywords) {
        const auto n = count_occurrences(query_text, k.token);
        if (n == 0) continue;
        logit += k.weight * static_cast<double>(n);
        evidence += (evidence.empty() ? "" : ", ") + k.token + " x" + std::to_string(n);
    }

    int vote = 0;
    std::size_t matched = 0;
    for (const auto& demo : prompt.demonstrations) {
        const std::string demo_text = embed::join_messages(demo);
        for (const auto& c : spec_.concepts) {
            const auto& demo_terms = c.demo_terms.empty() ? c.query_terms : c.demo_terms;
            if (contains_any(query_text, c.query_terms) && contains_any(demo_text, demo_terms)) {
                vote += demo.label ? 1 : -1;
                ++matched;
                break;
            }
        }
    }
    if (vote != 0) logit += spec_.demo_weight * (vote > 0 ? 1.0 : -1.0);

    OracleResponse r;
    r.probability = std::clamp(sigmoid(logit), 0.0, 1.0);
    if (prompt.cot_enabled) {
        r.reasoning = "keyword evidence: " + (evidence.empty() ? std::string("none") : evidence) +
                      "; matched demonstrations: " + std::to_string(matched) + " (vote " + std::to_string(vote) + ")";
    }
    r.raw = format_response(r);
    return r;
}

RemoteOracle::RemoteOracle(RemoteOracleSpec spec) : spec_(std::move(spec)) { validate(OracleSpec{spec_}); }

std::string RemoteOracle::fingerprint() const { return oracle::fingerprint(OracleSpec{spec_}); }

OracleResponse RemoteOracle::query(const Prompt& prompt) const {
    count();
    const json body = {
        {"model", spec_.model},
        {"messages",
         json::array({{{"role", "system"}, {"content", prompt.instruction}},
                      {{"role", "user"}, {"content", render_user_message(prompt)}}})},
        {"temperature", spec_.temperature},
    };
    const json reply = http::post_json(http::parse_endpoint(spec_.endpoint), "/v1/chat/completions", body,
                                       std::chrono::duration<double>(spec_.timeout_seconds), spec_.bearer_token,
                                       {spec_.max_retries, std::chrono::milliseconds(250)});
    std::string content;
    try {
        content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
        throw ResponseParseError("chat completion reply lacks choices[0].message.content", reply.dump());
    }
    return parse_response(content);
}

std::unique_ptr<Oracle> make_oracle(const OracleSpec& spec) {
    return std::visit(
        [](const auto& s) -> std::unique_ptr<Oracle> {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, MockSpec>)
                return std::make_unique<MockOracle>(s);
            else
                return std::make_unique<RemoteOracle>(s);
        },
        spec);
}

OracleResponse query_oracle(const Prompt& prompt, const Oracle& oracle) {
    OracleResponse r = oracle.query(prompt);
    if (!(r.probability >= 0.0 && r.probability <= 1.0))
        throw ResponseParseError("oracle returned probability outside [0, 1]", r.raw);
    return r;
}

OracleResponse query_oracle(const Prompt& prompt, const OracleSpec& spec) {
    return query_oracle(prompt, *make_oracle(spec));
}

}  // namespace logicl::oracle
