#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace logicl::corpus {

struct RawLogLine {
    std::size_t line_no = 0;
    std::string text;
    std::optional<int> label;
    std::optional<std::string> session_key;
};

struct LogSequence {
    std::string id;
    std::string domain;
    std::vector<std::string> messages;
    int label = 0;

    friend bool operator==(const LogSequence&, const LogSequence&) = default;
};

/// Ordered collection of sequences. Order is source chronology and is never
/// rearranged by the library.
class Corpus {
public:
    Corpus() = default;

    /// Validates the sequence (non-empty messages, binary label, unique id) and appends it.
    void add(LogSequence seq);

    const std::vector<LogSequence>& sequences() const noexcept { return sequences_; }
    const std::set<std::string>& domains() const noexcept { return domains_; }
    std::size_t size() const noexcept { return sequences_.size(); }
    bool empty() const noexcept { return sequences_.empty(); }
    const LogSequence& operator[](std::size_t i) const { return sequences_[i]; }

    bool contains(const std::string& id) const { return index_.contains(id); }
    /// Position of `id` in the corpus; throws std::out_of_range for unknown ids.
    std::size_t position(const std::string& id) const { return index_.at(id); }
    const LogSequence& at(const std::string& id) const { return sequences_[position(id)]; }

    friend bool operator==(const Corpus& a, const Corpus& b) { return a.sequences_ == b.sequences_; }

private:
    std::vector<LogSequence> sequences_;
    std::set<std::string> domains_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Ordered (pattern, replacement) rewrite rules. Patterns compile on construction,
/// so a bad pattern fails at configuration time rather than per line.
class PreprocessRules {
public:
    PreprocessRules() = default;
    explicit PreprocessRules(const std::vector<std::pair<std::string, std::string>>& rules);

    std::string apply(std::string_view raw) const;
    std::size_t size() const noexcept { return rules_.size(); }

private:
    std::vector<std::pair<std::regex, std::string>> rules_;
};

std::string preprocess_line(std::string_view raw, const PreprocessRules& rules);

/// Collapses runs of whitespace to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

struct GroupStats {
    std::size_t dropped_lines = 0;  ///< lines without a session key
};

/// Partition lines by the first capture group of `key_pattern`. Sequences are
/// emitted in order of first appearance; ids are "<domain>-<key>".
std::vector<LogSequence> group_by_session(const std::vector<RawLogLine>& lines,
                                          const std::string& key_pattern,
                                          const std::string& domain,
                                          GroupStats* stats = nullptr);

/// Non-overlapping windows of `window_size` lines; ids are "<domain>-w<index>".
std::vector<LogSequence> group_by_window(const std::vector<RawLogLine>& lines,
                                         std::size_t window_size, const std::string& domain,
                                         bool drop_partial = false);

std::pair<Corpus, Corpus> chronological_split(const Corpus& corpus, std::size_t train_count,
                                              std::size_t test_count);

Corpus concat(const std::vector<const Corpus*>& parts);

Corpus load_corpus_jsonl(const std::filesystem::path& path);
void save_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path);

/// How per-line labels are read from a raw log file.
enum class LabelMode {
    none,          ///< every line normal
    alert_prefix,  ///< first token "-" means normal, anything else is an alert tag (BGL family)
};

/// Reads a raw log file; labels per `mode`. Empty lines are skipped but keep
/// their line numbers.
std::vector<RawLogLine> read_raw_log(const std::filesystem::path& path, LabelMode mode,
                                     const PreprocessRules& rules);

/// Applies labels from a "key,label" CSV to session sequences (HDFS style
/// anomaly_label.csv). Header line is skipped when it does not parse.
void apply_session_labels(std::vector<LogSequence>& seqs, const std::string& domain,
                          const std::filesystem::path& csv);

/// Default window sizes per supercomputer dataset family.
std::size_t default_window_size(std::string_view dataset);

}  // namespace logicl::corpus
