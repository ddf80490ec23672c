#include "logicl/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>

#include "logicl/corpus.hpp"
#include "logicl/delta.hpp"
#include "logicl/embed.hpp"
#include "logicl/error.hpp"
#include "logicl/eval.hpp"
#include "logicl/hash.hpp"
#include "logicl/infer.hpp"
#include "logicl/oracle.hpp"
#include "logicl/retrieve.hpp"
#include "logicl/train.hpp"

namespace logicl::pipeline {

using json = nlohmann::json;
namespace fs = std::filesystem;

Stage parse_stage(const std::string& name) {
    static const std::map<std::string, Stage> names = {
        {"prepare", Stage::prepare}, {"embed", Stage::embed},   {"build-delta", Stage::build_delta},
        {"train", Stage::train},     {"detect", Stage::detect}, {"eval", Stage::eval},
        {"all", Stage::all}};
    auto it = names.find(name);
    if (it == names.end()) throw ConfigError("unknown stage \"" + name + "\"");
    return it->second;
}

std::string stage_name(Stage stage) {
    switch (stage) {
        case Stage::prepare: return "prepare";
        case Stage::embed: return "embed";
        case Stage::build_delta: return "build-delta";
        case Stage::train: return "train";
        case Stage::detect: return "detect";
        case Stage::eval: return "eval";
        case Stage::all: return "all";
    }
    return "?";
}

int exit_code(const std::exception& e) {
    if (dynamic_cast<const MissingArtifactError*>(&e)) return 2;
    if (dynamic_cast<const TransportError*>(&e) || dynamic_cast<const ResponseParseError*>(&e)) return 3;
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
        dynamic_cast<const EmptyCorpusError*>(&e) || dynamic_cast<const DegenerateInputError*>(&e) ||
        dynamic_cast<const CacheInvalidError*>(&e))
        return 1;
    return 4;
}

namespace {

struct Context {
    const RunOptions& opt;
    StatePaths paths;
    std::ostream& log;

    const config::PipelineConfig& cfg() const { return opt.config; }
};

void need(const fs::path& p, Stage producer) {
    if (!fs::exists(p))
        throw MissingArtifactError(p.filename().string() + " is missing: run " + stage_name(producer) + " first");
}

std::string hash_text(const std::string& text) { return hex64(fnv1a(text)); }

bool manifest_matches(const Context& ctx, Stage s, const std::string& inputs, std::initializer_list<fs::path> outputs) {
    const fs::path p = ctx.paths.manifest(s);
    if (!fs::exists(p)) return false;
    for (const auto& o : outputs)
        if (!fs::exists(o)) return false;
    std::ifstream in(p);
    const json j = json::parse(in, nullptr, false);
    return !j.is_discarded() && j.value("inputs", std::string{}) == inputs;
}

void write_json(const fs::path& p, const json& j) {
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write " + tmp.string());
        out << j.dump(2) << '\n';
        if (!out) throw FormatError("write failed for " + tmp.string());
    }
    fs::rename(tmp, p);
}

void write_manifest(const Context& ctx, Stage s, const std::string& inputs) {
    write_json(ctx.paths.manifest(s), {{"stage", stage_name(s)}, {"inputs", inputs}});
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw MissingArtifactError("cannot read " + p.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw FormatError(p.string() + " is not valid JSON");
    return j;
}

std::set<std::string> resolve_source_domains(const config::PipelineConfig& cfg, const corpus::Corpus& train) {
    if (!cfg.train.source_domains.empty()) return cfg.train.source_domains;
    std::map<std::string, std::size_t> counts;
    for (const auto& s : train.sequences()) ++counts[s.domain];
    std::string best;
    std::size_t most = 0;
    for (const auto& [name, n] : counts)
        if (n > most) best = name, most = n;
    return {best};
}

corpus::Corpus load_domain(const config::DomainSource& d, const corpus::PreprocessRules& rules) {
    corpus::Corpus c;
    if (d.format == config::DomainFormat::jsonl) {
        c = corpus::load_corpus_jsonl(d.path);
        for (const auto& s : c.sequences())
            if (s.domain != d.name)
                throw FormatError(d.path.string() + ": sequence " + s.id + " has domain \"" + s.domain +
                                  "\", expected \"" + d.name + "\"");
        return c;
    }
    const auto lines = corpus::read_raw_log(d.path, d.label_mode, rules);
    std::vector<corpus::LogSequence> seqs;
    if (d.grouping == config::Grouping::session) {
        corpus::GroupStats stats;
        seqs = corpus::group_by_session(lines, d.key_pattern, d.name, &stats);
        if (d.labels_csv) corpus::apply_session_labels(seqs, d.name, *d.labels_csv);
    } else {
        seqs = corpus::group_by_window(lines, d.effective_window_size(), d.name, d.drop_partial);
    }
    for (auto& s : seqs) c.add(std::move(s));
    return c;
}

StageOutcome do_prepare(const Context& ctx) {
    const auto& cfg = ctx.cfg();
    std::string inputs = config::snapshot(cfg)["dataset"].dump();
    for (const auto& d : cfg.dataset.domains) {
        inputs += "|" + eval::file_hash(d.path);
        if (d.labels_csv) inputs += "|" + eval::file_hash(*d.labels_csv);
    }
    inputs = hash_text(inputs);
    if (manifest_matches(ctx, Stage::prepare, inputs, {ctx.paths.train_corpus(), ctx.paths.test_corpus()}))
        return {Stage::prepare, true};

    const corpus::PreprocessRules rules(cfg.dataset.rules);
    std::vector<corpus::Corpus> trains, tests;
    for (const auto& d : cfg.dataset.domains) {
        const corpus::Corpus all = load_domain(d, rules);
        if (d.test_count > all.size())
            throw ConfigError("dataset " + d.name + ": test_count " + std::to_string(d.test_count) +
                              " exceeds its " + std::to_string(all.size()) + " sequences");
        const std::size_t train_count = d.train_count.value_or(all.size() - d.test_count);
        auto [tr, te] = corpus::chronological_split(all, train_count, d.test_count);
        ctx.log << "[prepare] " << d.name << ": " << tr.size() << " train, " << te.size() << " test\n";
        trains.push_back(std::move(tr));
        tests.push_back(std::move(te));
    }
    std::vector<const corpus::Corpus*> tr_parts, te_parts;
    for (const auto& c : trains) tr_parts.push_back(&c);
    for (const auto& c : tests) te_parts.push_back(&c);
    const corpus::Corpus train = corpus::concat(tr_parts);
    const corpus::Corpus test = corpus::concat(te_parts);
    if (train.size() < 2) throw EmptyCorpusError("training split needs at least two sequences");

    corpus::save_corpus_jsonl(train, ctx.paths.train_corpus());
    corpus::save_corpus_jsonl(test, ctx.paths.test_corpus());
    write_manifest(ctx, Stage::prepare, inputs);
    return {Stage::prepare, false};
}

StageOutcome do_embed(const Context& ctx) {
    const auto& cfg = ctx.cfg();
    need(ctx.paths.train_corpus(), Stage::prepare);
    need(ctx.paths.test_corpus(), Stage::prepare);
    const corpus::Corpus train = corpus::load_corpus_jsonl(ctx.paths.train_corpus());
    const corpus::Corpus test = corpus::load_corpus_jsonl(ctx.paths.test_corpus());

    const std::string inputs = hash_text(embed::fingerprint(cfg.backbone) + "|" + embed::corpus_fingerprint(train) +
                                         "|" + embed::corpus_fingerprint(test) + "|" + std::to_string(cfg.seed) +
                                         "|" + json(cfg.head_init_noise).dump());
    if (manifest_matches(ctx, Stage::embed, inputs,
                         {ctx.paths.backbone_train(), ctx.paths.head_init(), ctx.paths.encoded_train_init()}))
        return {Stage::embed, true};

    const auto backbone = embed::make_backbone(cfg.backbone);
    const auto train_store = embed::embed_backbone_corpus(train, *backbone, ctx.paths.backbone_train());
    if (!test.empty()) embed::embed_backbone_corpus(test, *backbone, ctx.paths.backbone_test());
    const auto head = embed::ProjectionHead::perturbed_identity(backbone->dim(), cfg.seed, cfg.head_init_noise);
    embed::save_head(head, ctx.paths.head_init());
    embed::apply_head(train_store, head).save(ctx.paths.encoded_train_init());
    write_manifest(ctx, Stage::embed, inputs);

    StageOutcome out{Stage::embed, false};
    out.backbone_calls = backbone->calls();
    return out;
}

StageOutcome do_build_delta(const Context& ctx) {
    const auto& cfg = ctx.cfg();
    need(ctx.paths.train_corpus(), Stage::prepare);
    need(ctx.paths.encoded_train_init(), Stage::embed);
    const corpus::Corpus train = corpus::load_corpus_jsonl(ctx.paths.train_corpus());
    const auto encoded = embed::EmbeddingStore::load(ctx.paths.encoded_train_init());
    const auto oracle = oracle::make_oracle(cfg.oracle.spec);

    const std::string inputs = hash_text(encoded.fingerprint() + "|" + oracle->fingerprint() + "|" +
                                         std::to_string(cfg.k_candidates) + "|" + json(cfg.mmr_lambda).dump() + "|" +
                                         embed::corpus_fingerprint(train));
    if (manifest_matches(ctx, Stage::build_delta, inputs, {ctx.paths.delta()})) return {Stage::build_delta, true};

    delta::BuildOptions options;
    options.k_candidates = cfg.k_candidates;
    options.mmr_lambda = cfg.mmr_lambda;
    options.checkpoint_every = cfg.checkpoint_every;
    options.checkpoint_path = ctx.paths.delta_checkpoint();
    options.resume = ctx.opt.resume;
    const auto matrix = delta::build_delta_matrix(train, encoded, *oracle, options, encoded.fingerprint());
    delta::save_matrix(matrix, ctx.paths.delta());
    fs::remove(ctx.paths.delta_checkpoint());
    write_manifest(ctx, Stage::build_delta, inputs);
    ctx.log << "[build-delta] " << matrix.rows().size() << " queries, " << matrix.entry_count() << " entries\n";

    StageOutcome out{Stage::build_delta, false};
    out.oracle_calls = oracle->calls();
    return out;
}

json train_snapshot(const config::PipelineConfig& cfg, const std::set<std::string>& sources) {
    json t = config::snapshot(cfg)["train"];
    t["source_domains"] = sources;
    t["seed"] = cfg.seed;
    return t;
}

StageOutcome do_train(const Context& ctx) {
    const auto& cfg = ctx.cfg();
    need(ctx.paths.train_corpus(), Stage::prepare);
    need(ctx.paths.backbone_train(), Stage::embed);
    need(ctx.paths.head_init(), Stage::embed);
    need(ctx.paths.delta(), Stage::build_delta);
    const corpus::Corpus train = corpus::load_corpus_jsonl(ctx.paths.train_corpus());
    const auto backbone = embed::EmbeddingStore::load(ctx.paths.backbone_train());
    const auto head0 = embed::load_head(ctx.paths.head_init());
    const auto sources = resolve_source_domains(cfg, train);

    const std::string inputs = hash_text(eval::file_hash(ctx.paths.delta()) + "|" + backbone.fingerprint() + "|" +
                                         head0.fingerprint() + "|" + train_snapshot(cfg, sources).dump());
    if (manifest_matches(ctx, Stage::train, inputs, {ctx.paths.head(), ctx.paths.loss_trace(), ctx.paths.train_summary()}))
        return {Stage::train, true};

    auto loaded = delta::load_matrix(ctx.paths.delta(), oracle::fingerprint(cfg.oracle.spec));
    for (const auto& w : loaded.warnings) ctx.log << "[train] warning: " << w << '\n';

    train::TrainConfig tc = cfg.train;
    tc.source_domains = sources;
    tc.seed = cfg.seed;
    const auto result = train::train_encoder(train, backbone, loaded.matrix, head0, cfg.loss_weights, tc);
    embed::save_head(result.head, ctx.paths.head());
    train::write_loss_trace(result.trace, ctx.paths.loss_trace());

    const auto pairs = train::partition_pairs(loaded.matrix);
    const auto& first = result.trace.front();
    const auto& last = result.trace.back();
    write_json(ctx.paths.train_summary(),
               {{"epochs", tc.epochs},
                {"source_domains", sources},
                {"positive_pairs", pairs.positives.size()},
                {"negative_pairs", pairs.negatives.size()},
                {"mean_positive_cosine_initial", first.mean_positive_cosine},
                {"mean_positive_cosine_final", last.mean_positive_cosine},
                {"loss_initial", first.loss.total},
                {"loss_final", last.loss.total}});
    write_manifest(ctx, Stage::train, inputs);
    ctx.log << "[train] mean positive-pair cosine " << first.mean_positive_cosine << " -> "
            << last.mean_positive_cosine << '\n';
    return {Stage::train, false};
}

json infer_snapshot(const config::PipelineConfig& cfg) { return config::snapshot(cfg)["infer"]; }

StageOutcome do_detect(const Context& ctx) {
    const auto& cfg = ctx.cfg();
    need(ctx.paths.train_corpus(), Stage::prepare);
    need(ctx.paths.backbone_train(), Stage::embed);
    need(ctx.paths.delta(), Stage::build_delta);
    need(ctx.paths.head(), Stage::train);

    corpus::Corpus test;
    if (ctx.opt.test_override) {
        test = corpus::load_corpus_jsonl(*ctx.opt.test_override);
    } else {
        need(ctx.paths.test_corpus(), Stage::prepare);
        test = corpus::load_corpus_jsonl(ctx.paths.test_corpus());
    }
    if (test.empty()) throw EmptyCorpusError("no test sequences to detect on");

    const corpus::Corpus train = corpus::load_corpus_jsonl(ctx.paths.train_corpus());
    const auto head = embed::load_head(ctx.paths.head());
    const auto oracle = oracle::make_oracle(cfg.oracle.spec);
    const std::string inputs =
        hash_text(head.fingerprint() + "|" + embed::corpus_fingerprint(train) + "|" + embed::corpus_fingerprint(test) +
                  "|" + eval::file_hash(ctx.paths.delta()) + "|" + oracle->fingerprint() + "|" +
                  infer_snapshot(cfg).dump() + "|" + hash_text(cfg.infer.instruction_template));
    if (manifest_matches(ctx, Stage::detect, inputs, {ctx.paths.predictions(), ctx.paths.detect_corpus()}))
        return {Stage::detect, true};

    const auto backbone_train = embed::EmbeddingStore::load(ctx.paths.backbone_train());
    std::size_t backbone_calls = 0;
    embed::EmbeddingStore backbone_test;
    if (ctx.opt.test_override) {
        const auto backbone = embed::make_backbone(cfg.backbone);
        backbone_test = embed::embed_backbone_corpus(test, *backbone);
        backbone_calls = backbone->calls();
    } else {
        need(ctx.paths.backbone_test(), Stage::embed);
        backbone_test = embed::EmbeddingStore::load(ctx.paths.backbone_test());
    }
    auto loaded = delta::load_matrix(ctx.paths.delta(), oracle->fingerprint());
    for (const auto& w : loaded.warnings) ctx.log << "[detect] warning: " << w << '\n';

    const auto train_store = embed::apply_head(backbone_train, head);
    const auto test_store = embed::apply_head(backbone_test, head);
    const auto index = retrieve::RetrievalIndex::from_store(train_store);
    const infer::InferenceState state{train, index, loaded.matrix, *oracle};
    const auto predictions = infer::detect_batch(test, test_store, state, cfg.infer, cfg.max_in_flight);

    infer::save_predictions(predictions, ctx.paths.predictions());
    corpus::save_corpus_jsonl(test, ctx.paths.detect_corpus());
    write_manifest(ctx, Stage::detect, inputs);

    StageOutcome out{Stage::detect, false};
    out.oracle_calls = oracle->calls();
    out.backbone_calls = backbone_calls;
    return out;
}

StageOutcome do_eval(const Context& ctx) {
    const auto& cfg = ctx.cfg();
    need(ctx.paths.predictions(), Stage::detect);
    need(ctx.paths.detect_corpus(), Stage::detect);
    need(ctx.paths.train_summary(), Stage::train);

    const corpus::Corpus test = corpus::load_corpus_jsonl(ctx.paths.detect_corpus());
    const corpus::Corpus train = corpus::load_corpus_jsonl(ctx.paths.train_corpus());
    const auto predictions = infer::load_predictions(ctx.paths.predictions());
    const eval::Metrics metrics = eval::compute_metrics(predictions, test, cfg.failed_as_normal);
    const auto head0 = embed::load_head(ctx.paths.head_init());
    const auto head = embed::load_head(ctx.paths.head());
    const auto loaded = delta::load_matrix(ctx.paths.delta());
    const auto& matrix = loaded.matrix;

    const auto sources = resolve_source_domains(cfg, train);
    if (cfg.alignment_export) {
        std::vector<std::string> source_ids, target_ids;
        for (const auto& s : train.sequences()) {
            auto& dst = sources.contains(s.domain) ? source_ids : target_ids;
            if (dst.size() < cfg.alignment_limit) dst.push_back(s.id);
        }
        if (!source_ids.empty() && !target_ids.empty()) {
            const auto store = embed::apply_head(embed::EmbeddingStore::load(ctx.paths.backbone_train()), head);
            eval::export_alignment_matrices(source_ids, target_ids, store, matrix, ctx.paths.alignment_similarity(),
                                            ctx.paths.alignment_delta());
        }
    }

    std::size_t pos = 0, neg = 0, zero = 0;
    for (const auto& row : matrix.rows())
        for (const auto& e : row.entries) (e.delta > 0.0 ? pos : e.delta < 0.0 ? neg : zero)++;
    std::size_t backfilled = 0, test_anomalies = 0;
    for (const auto& p : predictions) backfilled += p.backfilled;
    for (const auto& s : test.sequences()) test_anomalies += s.label;
    std::map<std::string, std::size_t> per_domain;
    for (const auto& s : train.sequences()) ++per_domain[s.domain];

    eval::ReportInput input;
    input.metrics = metrics;
    input.config = config::snapshot(cfg);
    input.config["train"]["source_domains"] = sources;
    input.config_hash = ctx.opt.config_hash;
    input.fingerprints = {{"train_corpus", embed::corpus_fingerprint(train)},
                          {"test_corpus", embed::corpus_fingerprint(test)},
                          {"backbone", embed::fingerprint(cfg.backbone)},
                          {"oracle", oracle::fingerprint(cfg.oracle.spec)},
                          {"head_init", head0.fingerprint()},
                          {"head", head.fingerprint()},
                          {"delta_matrix", eval::file_hash(ctx.paths.delta())},
                          {"predictions", eval::file_hash(ctx.paths.predictions())}};
    input.counters = {{"train_sequences", train.size()},
                      {"train_sequences_per_domain", per_domain},
                      {"test_sequences", test.size()},
                      {"test_anomalies", test_anomalies},
                      {"delta_queries", matrix.rows().size()},
                      {"delta_entries", matrix.entry_count()},
                      {"delta_positive", pos},
                      {"delta_negative", neg},
                      {"delta_zero", zero},
                      {"demonstrations_backfilled", backfilled},
                      {"failed_predictions", metrics.failed},
                      {"training", read_json(ctx.paths.train_summary())}};
    input.overrides = ctx.opt.overrides;
    eval::write_report(input, ctx.paths.report());
    ctx.log << "[eval] precision " << metrics.precision << " recall " << metrics.recall << " f1 " << metrics.f1
            << " (failed " << metrics.failed << ")\n";
    return {Stage::eval, false};
}

void record_timing(const Context& ctx, const StageOutcome& o) {
    json t = json::object();
    if (fs::exists(ctx.paths.timing())) {
        std::ifstream in(ctx.paths.timing());
        t = json::parse(in, nullptr, false);
        if (t.is_discarded() || !t.is_object()) t = json::object();
    }
    t[stage_name(o.stage)] = {{"seconds", o.seconds},
                              {"cache_hit", o.cache_hit},
                              {"oracle_calls", o.oracle_calls},
                              {"backbone_calls", o.backbone_calls}};
    write_json(ctx.paths.timing(), t);
}

}  // namespace

std::vector<StageOutcome> run_stage(Stage stage, const RunOptions& options) {
    std::ostream& log = options.log ? *options.log : std::cerr;
    const Context ctx{options, StatePaths{options.config.state_dir}, log};
    fs::create_directories(ctx.paths.dir);

    std::vector<Stage> order;
    if (stage == Stage::all)
        order = {Stage::prepare, Stage::embed, Stage::build_delta, Stage::train, Stage::detect, Stage::eval};
    else
        order = {stage};

    std::vector<StageOutcome> outcomes;
    for (Stage s : order) {
        const auto start = std::chrono::steady_clock::now();
        StageOutcome o;
        switch (s) {
            case Stage::prepare: o = do_prepare(ctx); break;
            case Stage::embed: o = do_embed(ctx); break;
            case Stage::build_delta: o = do_build_delta(ctx); break;
            case Stage::train: o = do_train(ctx); break;
            case Stage::detect: o = do_detect(ctx); break;
            case Stage::eval: o = do_eval(ctx); break;
            case Stage::all: break;
        }
        o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (o.cache_hit) log << "[" << stage_name(s) << "] inputs unchanged, reusing artifacts\n";
        record_timing(ctx, o);
        outcomes.push_back(o);
    }
    return outcomes;
}

}  // namespace logicl::pipeline
