#include "logicl/infer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <set>

#include "json.hpp"

#include "logicl/error.hpp"

namespace logicl::infer {

using json = nlohmann::json;

void validate(const InferenceConfig& cfg) {
    if (cfg.top_i < 1) throw ConfigError("infer.top_i must be >= 1");
    if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) throw ConfigError("infer.threshold must lie in (0, 1)");
    if (!(cfg.max_failure_ratio >= 0.0 && cfg.max_failure_ratio <= 1.0))
        throw ConfigError("infer.max_failure_ratio must lie in [0, 1]");
}

Selection select_demonstrations(std::span<const double> test_vec, const retrieve::RetrievalIndex& train_index,
                                const delta::DeltaMatrix& matrix, const InferenceConfig& cfg) {
    validate(cfg);
    if (train_index.empty()) throw EmptyCorpusError("training index is empty");

    // Enough neighbours to backfill past every expansion that also ranks high.
    const std::size_t depth = std::min(train_index.size(), cfg.top_i + 2 * cfg.top_j);
    const auto ranked = retrieve::top_k_similar(test_vec, train_index, depth);

    Selection sel;
    const std::size_t n_anchor = std::min(cfg.top_i, ranked.size());
    for (std::size_t r = 0; r < n_anchor; ++r) sel.anchors.push_back(train_index.id(ranked[r].position));

    std::set<std::string> taken(sel.anchors.begin(), sel.anchors.end());
    for (const auto& d : delta::row_top_j(matrix, sel.anchors, cfg.top_j)) {
        if (!(d.score > 0.0)) break;
        sel.expansions.push_back(d.demo_id);
        taken.insert(d.demo_id);
    }
    for (std::size_t r = n_anchor; r < ranked.size() && sel.expansions.size() < cfg.top_j; ++r) {
        const std::string& id = train_index.id(ranked[r].position);
        if (!taken.insert(id).second) continue;
        sel.expansions.push_back(id);
        ++sel.backfilled;
    }
    return sel;
}

Prediction detect(const corpus::LogSequence& test_seq, std::span<const double> test_vec, const InferenceState& state,
                  const InferenceConfig& cfg) {
    Selection sel = select_demonstrations(test_vec, state.index, state.matrix, cfg);

    Prediction pred;
    pred.sequence_id = test_seq.id;
    std::vector<corpus::LogSequence> demos;
    demos.reserve(sel.anchors.size() + sel.expansions.size());
    for (const auto& id : sel.anchors) demos.push_back(state.train.at(id));
    for (const auto& id : sel.expansions) demos.push_back(state.train.at(id));
    pred.anchors = std::move(sel.anchors);
    pred.expansions = std::move(sel.expansions);
    pred.backfilled = sel.backfilled;

    const oracle::Prompt prompt =
        cfg.instruction_template.empty()
            ? oracle::build_prompt(std::move(demos), test_seq, cfg.cot_enabled)
            : oracle::build_prompt(std::move(demos), test_seq, cfg.cot_enabled, cfg.instruction_template);
    try {
        const oracle::OracleResponse r = oracle::query_oracle(prompt, state.oracle);
        pred.probability = r.probability;
        pred.decision = decide(r.probability, cfg.threshold);
        pred.reasoning = r.reasoning;
    } catch (const TransportError& e) {
        pred.failed = true;
        pred.error = e.what();
    } catch (const ResponseParseError& e) {
        pred.failed = true;
        pred.error = e.what();
    }
    return pred;
}

Prediction detect(const corpus::LogSequence& test_seq, const embed::Encoder& encoder, const InferenceState& state,
                  const InferenceConfig& cfg) {
    const Vector v = encoder.encode(test_seq);
    return detect(test_seq, v, state, cfg);
}

std::vector<Prediction> detect_batch(const corpus::Corpus& test, const embed::EmbeddingStore& test_vectors,
                                     const InferenceState& state, const InferenceConfig& cfg,
                                     std::size_t max_in_flight) {
    validate(cfg);
    const std::size_t n = test.size();
    std::vector<Prediction> out(n);
    if (n == 0) return out;
    for (const auto& s : test.sequences())
        if (!test_vectors.contains(s.id)) throw MissingArtifactError("no test vector for " + s.id);

    const std::size_t bound = std::max<std::size_t>(1, max_in_flight ? max_in_flight : state.oracle.max_in_flight());
    const int threads = static_cast<int>(std::min(bound, n));
    std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
    for (std::size_t i = 0; i < n; ++i) {
        try {
            out[i] = detect(test[i], test_vectors.at(test[i].id), state, cfg);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    const auto failed = static_cast<std::size_t>(std::count_if(out.begin(), out.end(), [](const Prediction& p) { return p.failed; }));
    if (static_cast<double>(failed) > cfg.max_failure_ratio * static_cast<double>(n)) {
        const auto first = std::find_if(out.begin(), out.end(), [](const Prediction& p) { return p.failed; });
        throw TransportError(std::to_string(failed) + " of " + std::to_string(n) +
                             " oracle queries failed; first error: " + first->error);
    }
    return out;
}

namespace {

json to_json(const Prediction& p) {
    json j = {{"sequence_id", p.sequence_id}, {"probability", p.probability}, {"decision", p.decision},
              {"anchors", p.anchors},         {"expansions", p.expansions},   {"backfilled", p.backfilled},
              {"failed", p.failed}};
    j["reasoning"] = p.reasoning ? json(*p.reasoning) : json(nullptr);
    if (p.failed) j["error"] = p.error;
    return j;
}

Prediction prediction_from_json(const json& j) {
    Prediction p;
    p.sequence_id = j.at("sequence_id").get<std::string>();
    p.probability = j.at("probability").get<double>();
    p.decision = j.at("decision").get<int>();
    p.anchors = j.at("anchors").get<std::vector<std::string>>();
    p.expansions = j.at("expansions").get<std::vector<std::string>>();
    p.backfilled = j.value("backfilled", std::size_t{0});
    p.failed = j.value("failed", false);
    if (j.contains("reasoning") && !j["reasoning"].is_null()) p.reasoning = j["reasoning"].get<std::string>();
    p.error = j.value("error", std::string{});
    return p;
}

}  // namespace

void save_predictions(const std::vector<Prediction>& predictions, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write predictions to " + path.string());
    for (const auto& p : predictions) out << to_json(p).dump() << '\n';
    if (!out) throw FormatError("write failed for " + path.string());
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot open predictions " + path.string());
    std::vector<Prediction> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(prediction_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw FormatError("bad prediction at line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace logicl::infer
