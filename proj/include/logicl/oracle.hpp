#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "logicl/corpus.hpp"

namespace logicl::oracle {

using corpus::LogSequence;

/// A demonstration's label travels with the sequence (LogSequence::label).
struct Prompt {
    std::string instruction;
    std::vector<LogSequence> demonstrations;
    LogSequence query;
    bool cot_enabled = false;
};

/// Task framing plus the JSON output contract. `{FORMAT}` in a custom
/// template is replaced by the output contract for the chosen mode.
std::string default_instruction(bool cot);
std::string render_instruction(const std::string& instruction_template, bool cot);

Prompt build_prompt(std::vector<LogSequence> demos, LogSequence query, bool cot);
Prompt build_prompt(std::vector<LogSequence> demos, LogSequence query, bool cot,
                    const std::string& instruction_template);

/// The user-turn text: demonstration blocks in order, then the query block.
std::string render_user_message(const Prompt& prompt);

struct OracleResponse {
    double probability = 0.0;
    std::optional<std::string> reasoning;
    std::string raw;
};

/// Canonical JSON form of a response, the shape the instruction asks for.
std::string format_response(const OracleResponse& response);

/// Reads "probability" from the first JSON object in `text`, falling back to
/// the first number after the word "probability". Throws ResponseParseError
/// when nothing parses or the value is outside [0, 1].
OracleResponse parse_response(const std::string& text);

struct MockKeyword {
    std::string token;
    double weight = 0.0;
};

/// A group of terms the mock treats as the same event. A demonstration is
/// matched to a query when the query contains one of `query_terms` and the
/// demonstration contains one of `demo_terms` (or of `query_terms` when
/// `demo_terms` is empty).
struct MockConcept {
    std::string name;
    std::vector<std::string> query_terms;
    std::vector<std::string> demo_terms;
};

/// Deterministic stand-in for an LLM:
///   p = sigmoid(bias + sum_k weight_k * count_k(query) + demo_weight * sign(vote))
/// where vote = (#matched anomalous demos) - (#matched normal demos).
struct MockSpec {
    double bias = 0.0;
    std::vector<MockKeyword> keywords;
    std::vector<MockConcept> concepts;
    double demo_weight = 0.0;
};

struct RemoteOracleSpec {
    std::string endpoint;
    std::string model;
    double temperature = 0.0;
    int max_retries = 3;
    double timeout_seconds = 120.0;
    std::size_t max_in_flight = 8;
    std::string bearer_token;  ///< not part of the fingerprint
};

using OracleSpec = std::variant<MockSpec, RemoteOracleSpec>;

void validate(const OracleSpec& spec);
std::string fingerprint(const OracleSpec& spec);

MockSpec mock_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MockSpec& spec);
MockSpec load_mock_spec(const std::filesystem::path& path);

class Oracle {
public:
    virtual ~Oracle() = default;
    /// Must be safe to call concurrently.
    virtual OracleResponse query(const Prompt& prompt) const = 0;
    virtual std::string fingerprint() const = 0;
    /// Upper bound on concurrent queries worth issuing.
    virtual std::size_t max_in_flight() const { return 1; }

    std::size_t calls() const noexcept { return calls_.load(); }

protected:
    void count() const noexcept { calls_.fetch_add(1); }

private:
    mutable std::atomic<std::size_t> calls_{0};
};

class MockOracle final : public Oracle {
public:
    explicit MockOracle(MockSpec spec);
    OracleResponse query(const Prompt& prompt) const override;
    std::string fingerprint() const override;
    std::size_t max_in_flight() const override;

private:
    MockSpec spec_;
};

class RemoteOracle final : public Oracle {
public:
    explicit RemoteOracle(RemoteOracleSpec spec);
    OracleResponse query(const Prompt& prompt) const override;
    std::string fingerprint() const override;
    std::size_t max_in_flight() const override { return spec_.max_in_flight; }

private:
    RemoteOracleSpec spec_;
};

std::unique_ptr<Oracle> make_oracle(const OracleSpec& spec);

OracleResponse query_oracle(const Prompt& prompt, const Oracle& oracle);
OracleResponse query_oracle(const Prompt& prompt, const OracleSpec& spec);

double sigmoid(double x);

}  // namespace logicl::oracle
