#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "logicl/corpus.hpp"
#include "logicl/linalg.hpp"

namespace testing {

// Scratch directory removed on scope exit.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = std::filesystem::temp_directory_path() /
                ("logicl-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline logicl::corpus::LogSequence seq(std::string id, std::string domain, int label,
                                       std::vector<std::string> messages) {
    return {std::move(id), std::move(domain), std::move(messages), label};
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

inline logicl::Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                                    double hi = 1.0) {
    logicl::Matrix m(rows, cols);
    for (double& x : m.data()) x = uniform(rng, lo, hi);
    return m;
}

inline logicl::Matrix random_unit_rows(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
    logicl::Matrix m = random_matrix(rng, rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const double n = logicl::norm2(m.row(i));
        for (double& x : m.row(i)) x /= n;
    }
    return m;
}

}  // namespace testing
