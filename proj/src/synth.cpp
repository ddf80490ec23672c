#include "logicl/synth.hpp"

#include <fstream>
#include <random>
#include <set>

#include "json.hpp"

#include "logicl/error.hpp"

namespace logicl::synth {

using json = nlohmann::json;

namespace {

// Portable draws: std distributions differ between standard libraries.
struct Draw {
    std::mt19937_64 rng;
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(rng() % n); }
    double unit() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
};

std::string word(Draw& d, char first, char last, std::size_t len) {
    std::string w;
    const std::size_t span = static_cast<std::size_t>(last - first) + 1;
    for (std::size_t i = 0; i < len; ++i) w += static_cast<char>(first + d.below(span));
    return w;
}

std::vector<std::string> unique_words(Draw& d, char first, char last, std::size_t count, std::size_t len,
                                      std::set<std::string>& used) {
    std::vector<std::string> out;
    while (out.size() < count) {
        std::string w = word(d, first, last, len);
        if (used.insert(w).second) out.push_back(std::move(w));
    }
    return out;
}

corpus::LogSequence make_sequence(Draw& d, const SynthParams& p, const std::string& id, const std::string& domain,
                                  const std::string& event_token, const std::vector<std::string>& background,
                                  int label) {
    corpus::LogSequence s{id, domain, {}, label};
    const std::size_t n = p.messages_min + d.below(p.messages_max - p.messages_min + 1);
    const std::size_t event_at = d.below(n);
    for (std::size_t m = 0; m < n; ++m) {
        std::string msg = background[d.below(background.size())] + " " + background[d.below(background.size())];
        if (m == event_at) msg += " " + event_token + " " + event_token;
        msg += " " + background[d.below(background.size())];
        s.messages.push_back(std::move(msg));
    }
    return s;
}

std::string padded(std::size_t i) {
    std::string n = std::to_string(i);
    return std::string(n.size() < 4 ? 4 - n.size() : 0, '0') + n;
}

}  // namespace

SynthData generate(const SynthParams& p) {
    if (p.anomalous_events + p.normal_events == 0) throw ConfigError("synthetic corpus needs at least one event");
    if (p.messages_min < 1 || p.messages_max < p.messages_min) throw ConfigError("bad synthetic message range");
    if (p.source_domain == p.target_domain) throw ConfigError("synthetic domains must differ");

    Draw d{std::mt19937_64(p.seed)};
    std::set<std::string> used;
    const auto src_bg = unique_words(d, 'a', 'm', p.background_words, 5, used);
    const auto tgt_bg = unique_words(d, 'n', 'z', p.background_words, 5, used);
    const std::size_t n_events = p.anomalous_events + p.normal_events;
    const auto src_ev = unique_words(d, 'a', 'm', n_events, 9, used);
    const auto tgt_ev = unique_words(d, 'n', 'z', n_events, 9, used);

    SynthData out;
    for (std::size_t e = 0; e < n_events; ++e) {
        const int label = e < p.anomalous_events ? 1 : 0;
        out.events.push_back({src_ev[e], tgt_ev[e], label});
        out.oracle.keywords.push_back({src_ev[e], label ? p.source_keyword_weight : -p.source_keyword_weight});
        out.oracle.concepts.push_back({"event" + std::to_string(e), {src_ev[e], tgt_ev[e]}, {src_ev[e]}});
    }
    out.oracle.bias = 0.0;
    out.oracle.demo_weight = p.demo_weight;

    for (std::size_t i = 0; i < p.source_count; ++i) {
        const Event& ev = out.events[d.below(n_events)];
        int label = ev.label;
        if (d.unit() < p.source_label_noise) label = 1 - label;
        out.source.add(make_sequence(d, p, p.source_domain + "-" + padded(i), p.source_domain, ev.source_token,
                                     src_bg, label));
    }
    for (std::size_t i = 0; i < p.target_train + p.target_test; ++i) {
        const Event& ev = out.events[d.below(n_events)];
        out.target.add(make_sequence(d, p, p.target_domain + "-" + padded(i), p.target_domain, ev.target_token,
                                     tgt_bg, ev.label));
    }
    return out;
}

void write_fixture(const SynthData& data, const SynthParams& p, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    corpus::save_corpus_jsonl(data.source, dir / "source.jsonl");
    corpus::save_corpus_jsonl(data.target, dir / "target.jsonl");
    {
        std::ofstream out(dir / "mock_oracle.json", std::ios::binary | std::ios::trunc);
        out << oracle::to_json(data.oracle).dump(2) << '\n';
        if (!out) throw FormatError("cannot write mock oracle fixture in " + dir.string());
    }
    const json cfg = {
        {"seed", 42},
        {"dataset",
         {{"domains",
           {{{"name", p.source_domain}, {"path", "source.jsonl"}, {"train_count", p.source_count}, {"test_count", 0}},
            {{"name", p.target_domain},
             {"path", "target.jsonl"},
             {"train_count", p.target_train},
             {"test_count", p.target_test}}}}}},
        {"encoder", {{"backbone", {{"type", "hash_ngram"}, {"ngram_min", 3}, {"ngram_max", 5}, {"dim", 384}}}}},
        {"oracle", {{"type", "mock"}, {"fixture", "mock_oracle.json"}}},
        {"retrieve", {{"mmr_lambda", 0.7}}},
        {"delta", {{"k_candidates", 128}, {"checkpoint_every", 100}}},
        {"train", {{"epochs", 20}, {"learning_rate", 0.01}, {"source_domains", {p.source_domain}}}},
        {"infer", {{"top_i", 4}, {"top_j", 4}, {"threshold", 0.5}}},
        {"output", {{"state_dir", "state"}}},
    };
    std::ofstream out(dir / "config.json", std::ios::binary | std::ios::trunc);
    out << cfg.dump(2) << '\n';
    if (!out) throw FormatError("cannot write config in " + dir.string());
}

}  // namespace logicl::synth
