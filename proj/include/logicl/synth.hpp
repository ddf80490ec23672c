#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "logicl/corpus.hpp"
#include "logicl/oracle.hpp"

namespace logicl::synth {

/// Two log systems that describe the same events with disjoint vocabularies.
///
/// Every sequence carries one event. The source system spells events with
/// letters a-m, the target with n-z, so the two share almost no character
/// n-grams. The mock oracle knows the source spelling of each event: a
/// source demonstration of the query's event moves the prediction toward
/// the demonstration's label. Target spellings carry no weight, so a target
/// query is a coin flip (p = 0.5) unless a matching source demonstration is
/// in the prompt.
struct SynthParams {
    std::uint64_t seed = 7;
    std::size_t source_count = 150;
    std::size_t target_train = 50;
    std::size_t target_test = 50;
    std::size_t anomalous_events = 3;
    std::size_t normal_events = 3;
    std::size_t messages_min = 3;
    std::size_t messages_max = 6;
    std::size_t background_words = 40;  ///< per domain
    double source_label_noise = 0.05;    ///< fraction of source labels flipped
    double source_keyword_weight = 0.25;
    double demo_weight = 2.1972245773362196;  ///< ln 9: one vote moves 0.5 to 0.9
    std::string source_domain = "alpha";
    std::string target_domain = "beta";
};

struct Event {
    std::string source_token;
    std::string target_token;
    int label = 0;
};

struct SynthData {
    corpus::Corpus source;  ///< source_count sequences
    corpus::Corpus target;  ///< target_train then target_test sequences
    std::vector<Event> events;
    oracle::MockSpec oracle;
};

SynthData generate(const SynthParams& params);

/// Writes source.jsonl, target.jsonl, mock_oracle.json and config.json into `dir`.
void write_fixture(const SynthData& data, const SynthParams& params, const std::filesystem::path& dir);

}  // namespace logicl::synth
