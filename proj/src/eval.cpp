#include "logicl/eval.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "logicl/error.hpp"
#include "logicl/hash.hpp"

namespace logicl::eval {

using json = nlohmann::json;

Metrics from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn, std::size_t failed) {
    Metrics m{tp, fp, fn, tn, failed};
    if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    else m.precision_undefined = true;
    if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    else m.recall_undefined = true;
    if (m.precision + m.recall > 0.0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    else m.f1_undefined = true;
    return m;
}

Metrics compute_metrics(const std::vector<infer::Prediction>& predictions, const corpus::Corpus& test,
                        bool failed_as_normal) {
    if (predictions.size() != test.size())
        throw FormatError(std::to_string(predictions.size()) + " predictions for " + std::to_string(test.size()) +
                          " test sequences");
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0, failed = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto& p = predictions[i];
        if (p.sequence_id != test[i].id)
            throw FormatError("prediction " + std::to_string(i) + " is for " + p.sequence_id + ", expected " +
                              test[i].id);
        int decision = p.decision;
        if (p.failed) {
            if (!failed_as_normal) {
                ++failed;
                continue;
            }
            decision = 0;
        }
        const int label = test[i].label;
        if (decision == 1) (label == 1 ? tp : fp)++;
        else (label == 1 ? fn : tn)++;
    }
    return from_counts(tp, fp, fn, tn, failed);
}

json to_json(const Metrics& m) {
    return {{"tp", m.tp},
            {"fp", m.fp},
            {"fn", m.fn},
            {"tn", m.tn},
            {"failed", m.failed},
            {"precision", m.precision},
            {"recall", m.recall},
            {"f1", m.f1},
            {"precision_undefined", m.precision_undefined},
            {"recall_undefined", m.recall_undefined},
            {"f1_undefined", m.f1_undefined}};
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_csv(const std::filesystem::path& path, const std::string& header, std::span<const std::string> row_ids,
               const std::vector<std::vector<double>>& values) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out << header;
    for (std::size_t r = 0; r < row_ids.size(); ++r) {
        out << csv_field(row_ids[r]);
        for (double v : values[r]) out << ',' << format_value(v);
        out << '\n';
    }
    if (!out) throw FormatError("write failed for " + path.string());
}

}  // namespace

void export_alignment_matrices(std::span<const std::string> source_ids, std::span<const std::string> target_ids,
                               const embed::EmbeddingStore& store, const delta::DeltaMatrix& matrix,
                               const std::filesystem::path& similarity_csv, const std::filesystem::path& delta_csv) {
    for (auto ids : {source_ids, target_ids})
        for (const auto& id : ids)
            if (!store.contains(id)) throw FormatError("no embedding for id " + id);

    std::string header = "target_id";
    for (const auto& s : source_ids) header += "," + csv_field(s);
    header += '\n';

    std::vector<std::vector<double>> sims(target_ids.size()), deltas(target_ids.size());
    for (std::size_t r = 0; r < target_ids.size(); ++r) {
        const auto t = store.at(target_ids[r]);
        for (const auto& s : source_ids) {
            sims[r].push_back(embed::cosine_similarity(t, store.at(s)));
            deltas[r].push_back(matrix.value(target_ids[r], s));
        }
    }
    write_csv(similarity_csv, header, target_ids, sims);
    write_csv(delta_csv, header, target_ids, deltas);
}

json build_report(const ReportInput& input) {
    return {{"schema_version", kReportSchemaVersion},
            {"metrics", to_json(input.metrics)},
            {"config", input.config},
            {"config_hash", input.config_hash},
            {"fingerprints", input.fingerprints},
            {"counters", input.counters},
            {"overrides", input.overrides}};
}

void write_report(const ReportInput& input, const std::filesystem::path& path) {
    const std::string text = build_report(input).dump(2) + "\n";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write report " + path.string());
    out << text;
    if (!out) throw FormatError("write failed for " + path.string());
}

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot read " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return hex64(fnv1a(bytes));
}

}  // namespace logicl::eval
