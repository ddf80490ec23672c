#include "logicl/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "logicl/error.hpp"

namespace logicl::corpus {

using json = nlohmann::json;

void Corpus::add(LogSequence seq) {
    if (seq.id.empty()) throw FormatError("sequence id must be non-empty");
    if (seq.messages.empty()) throw FormatError("sequence " + seq.id + " has no messages");
    for (const auto& m : seq.messages)
        if (m.empty()) throw FormatError("sequence " + seq.id + " contains an empty message");
    if (seq.label != 0 && seq.label != 1)
        throw FormatError("sequence " + seq.id + " has non-binary label");
    if (index_.contains(seq.id)) throw FormatError("duplicate sequence id " + seq.id);
    index_.emplace(seq.id, sequences_.size());
    domains_.insert(seq.domain);
    sequences_.push_back(std::move(seq));
}

PreprocessRules::PreprocessRules(const std::vector<std::pair<std::string, std::string>>& rules) {
    rules_.reserve(rules.size());
    for (const auto& [pattern, replacement] : rules) {
        try {
            rules_.emplace_back(std::regex(pattern, std::regex::ECMAScript), replacement);
        } catch (const std::regex_error& e) {
            throw ConfigError("invalid preprocessing pattern '" + pattern + "': " + e.what());
        }
    }
}

std::string PreprocessRules::apply(std::string_view raw) const {
    std::string text(raw);
    for (const auto& [re, replacement] : rules_) text = std::regex_replace(text, re, replacement);
    return normalize_whitespace(text);
}

std::string normalize_whitespace(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

std::string preprocess_line(std::string_view raw, const PreprocessRules& rules) {
    return rules.apply(raw);
}

std::vector<LogSequence> group_by_session(const std::vector<RawLogLine>& lines,
                                          const std::string& key_pattern,
                                          const std::string& domain, GroupStats* stats) {
    std::regex re;
    try {
        re = std::regex(key_pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
        throw ConfigError("invalid session key pattern '" + key_pattern + "': " + e.what());
    }
    if (re.mark_count() < 1) throw ConfigError("session key pattern needs one capture group");

    std::vector<LogSequence> out;
    std::unordered_map<std::string, std::size_t> by_key;
    std::size_t dropped = 0;
    for (const auto& line : lines) {
        std::string key;
        if (line.session_key) {
            key = *line.session_key;
        } else {
            std::smatch m;
            if (!std::regex_search(line.text, m, re)) {
                ++dropped;
                continue;
            }
            key = m[1].str();
        }
        auto [it, inserted] = by_key.try_emplace(key, out.size());
        if (inserted) out.push_back(LogSequence{domain + "-" + key, domain, {}, 0});
        auto& seq = out[it->second];
        seq.messages.push_back(line.text);
        seq.label = std::max(seq.label, line.label.value_or(0));
    }
    if (stats) stats->dropped_lines = dropped;
    if (out.empty()) throw EmptyCorpusError("no line matched session key pattern " + key_pattern);
    return out;
}

std::vector<LogSequence> group_by_window(const std::vector<RawLogLine>& lines,
                                         std::size_t window_size, const std::string& domain,
                                         bool drop_partial) {
    if (window_size == 0) throw ConfigError("window_size must be positive");
    if (lines.empty()) throw EmptyCorpusError("no lines to window");
    std::vector<LogSequence> out;
    for (std::size_t start = 0; start < lines.size(); start += window_size) {
        const std::size_t end = std::min(lines.size(), start + window_size);
        if (drop_partial && end - start < window_size) break;
        LogSequence seq{domain + "-w" + std::to_string(out.size()), domain, {}, 0};
        seq.messages.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) {
            seq.messages.push_back(lines[i].text);
            seq.label = std::max(seq.label, lines[i].label.value_or(0));
        }
        out.push_back(std::move(seq));
    }
    if (out.empty()) throw EmptyCorpusError("no complete window");
    return out;
}

std::pair<Corpus, Corpus> chronological_split(const Corpus& corpus, std::size_t train_count,
                                              std::size_t test_count) {
    if (train_count + test_count > corpus.size())
        throw ConfigError("split " + std::to_string(train_count) + "+" + std::to_string(test_count) +
                          " exceeds corpus size " + std::to_string(corpus.size()));
    Corpus train, test;
    for (std::size_t i = 0; i < train_count; ++i) train.add(corpus[i]);
    for (std::size_t i = train_count; i < train_count + test_count; ++i) test.add(corpus[i]);
    return {std::move(train), std::move(test)};
}

Corpus concat(const std::vector<const Corpus*>& parts) {
    Corpus out;
    for (const Corpus* part : parts)
        for (const auto& seq : part->sequences()) out.add(seq);
    return out;
}

namespace {

template <typename T>
T required(const json& obj, const char* field, std::size_t line_no) {
    auto it = obj.find(field);
    if (it == obj.end())
        throw FormatError(std::string("missing field ") + field + " at line " + std::to_string(line_no));
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw FormatError(std::string("wrong type for field ") + field + " at line " +
                          std::to_string(line_no));
    }
}

}  // namespace

Corpus load_corpus_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open corpus file " + path.string());
    Corpus corpus;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (normalize_whitespace(line).empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError("malformed JSON at line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!obj.is_object()) throw FormatError("expected object at line " + std::to_string(line_no));
        LogSequence seq;
        seq.id = required<std::string>(obj, "id", line_no);
        seq.domain = required<std::string>(obj, "domain", line_no);
        seq.label = required<int>(obj, "label", line_no);
        seq.messages = required<std::vector<std::string>>(obj, "messages", line_no);
        try {
            corpus.add(std::move(seq));
        } catch (const FormatError& e) {
            throw FormatError(std::string(e.what()) + " at line " + std::to_string(line_no));
        }
    }
    return corpus;
}

void save_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write corpus file " + path.string());
    for (const auto& seq : corpus.sequences()) {
        json obj = {{"id", seq.id}, {"domain", seq.domain}, {"label", seq.label}, {"messages", seq.messages}};
        out << obj.dump() << '\n';
    }
    if (!out) throw FormatError("write failed for " + path.string());
}

std::vector<RawLogLine> read_raw_log(const std::filesystem::path& path, LabelMode mode,
                                     const PreprocessRules& rules) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open log file " + path.string());
    std::vector<RawLogLine> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view body = line;
        std::optional<int> label;
        if (mode == LabelMode::alert_prefix) {
            const auto space = body.find(' ');
            const std::string_view tag = body.substr(0, space);
            if (tag.empty()) continue;
            label = tag == "-" ? 0 : 1;
            body = space == std::string_view::npos ? std::string_view{} : body.substr(space + 1);
        }
        std::string text = rules.apply(body);
        if (text.empty()) continue;
        out.push_back(RawLogLine{line_no, std::move(text), label, std::nullopt});
    }
    return out;
}

void apply_session_labels(std::vector<LogSequence>& seqs, const std::string& domain,
                          const std::filesystem::path& csv) {
    std::ifstream in(csv);
    if (!in) throw FormatError("cannot open label file " + csv.string());
    std::unordered_map<std::string, int> labels;
    std::string line;
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        std::string key = normalize_whitespace(line.substr(0, comma));
        std::string value = normalize_whitespace(line.substr(comma + 1));
        std::transform(value.begin(), value.end(), value.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (value == "1" || value == "anomaly" || value == "anomalous")
            labels[key] = 1;
        else if (value == "0" || value == "normal")
            labels[key] = 0;
    }
    const std::string prefix = domain + "-";
    for (auto& seq : seqs) {
        auto it = labels.find(seq.id.substr(prefix.size()));
        if (it != labels.end()) seq.label = it->second;
    }
}

std::size_t default_window_size(std::string_view dataset) {
    std::string name(dataset);
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (name == "bgl" || name == "thunderbird" || name == "tb") return 40;
    if (name == "liberty") return 30;
    throw ConfigError("no default window size for dataset '" + std::string(dataset) + "'");
}

}  // namespace logicl::corpus
