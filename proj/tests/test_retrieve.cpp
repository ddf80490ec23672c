#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "logicl/error.hpp"
#include "logicl/retrieve.hpp"
#include "support.hpp"

using namespace logicl;
using namespace logicl::retrieve;

namespace {

double cos_direct(std::span<const double> a, std::span<const double> b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

// Literal greedy MMR: every step rescans every candidate against every selected item.
std::vector<std::size_t> mmr_brute(std::span<const double> q, const Matrix& docs, double lambda, std::size_t k) {
    std::vector<std::size_t> s;
    std::vector<char> used(docs.rows(), 0);
    while (s.size() < std::min(k, docs.rows())) {
        std::size_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < docs.rows(); ++j) {
            if (used[j]) continue;
            double red = 0.0;
            if (!s.empty()) {
                red = -std::numeric_limits<double>::infinity();
                for (auto t : s) red = std::max(red, cos_direct(docs.row(j), docs.row(t)));
            }
            const double score = lambda * cos_direct(q, docs.row(j)) - (1 - lambda) * red;
            if (score > best_score) {
                best_score = score;
                best = j;
            }
        }
        used[best] = 1;
        s.push_back(best);
    }
    return s;
}

RetrievalIndex index_of(const Matrix& m) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < m.rows(); ++i) ids.push_back("d" + std::to_string(i));
    return RetrievalIndex(ids, m);
}

// Unit vectors whose pairwise inner products equal the given Gram matrix.
Matrix realize_gram(const std::vector<std::vector<double>>& g) {
    const std::size_t n = g.size();
    Matrix l(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            double s = g[i][j];
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = i == j ? std::sqrt(s) : s / l(j, j);
        }
    return l;
}

}  // namespace

TEST_CASE("top_k matches a full sort") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix docs = testing::random_unit_rows(rng, 30, 6);
        const Matrix q = testing::random_matrix(rng, 1, 6);
        const auto idx = index_of(docs);
        const auto got = top_k_similar(q.row(0), idx, 10);
        std::vector<std::size_t> order(30);
        for (std::size_t i = 0; i < 30; ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
            return cos_direct(q.row(0), docs.row(a)) > cos_direct(q.row(0), docs.row(b));
        });
        REQUIRE(got.size() == 10);
        for (std::size_t r = 0; r < 10; ++r) {
            CHECK(got[r].position == order[r]);
            CHECK(got[r].similarity == doctest::Approx(cos_direct(q.row(0), docs.row(order[r]))).epsilon(1e-12));
        }
    }
}

TEST_CASE("top_k ties and bounds") {
    Matrix docs(3, 2);
    docs(0, 0) = 1;
    docs(1, 0) = 1;
    docs(2, 1) = 1;
    const auto idx = index_of(docs);
    const Vector q{1, 0};
    const auto got = top_k_similar(q, idx, 5);
    REQUIRE(got.size() == 3);
    CHECK(got[0].position == 0);
    CHECK(got[1].position == 1);
    CHECK_THROWS_AS(top_k_similar(q, idx, 0), ConfigError);
    CHECK_THROWS_AS(top_k_similar(q, RetrievalIndex{}, 1), EmptyCorpusError);
    CHECK_THROWS_AS(top_k_similar(Vector{1, 0, 0}, idx, 1), ConfigError);
}

TEST_CASE("mmr with lambda one is exhaustive knn") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 5 + rng() % 40;
        const Matrix docs = testing::random_unit_rows(rng, n, 2 + rng() % 7);
        const Matrix q = testing::random_matrix(rng, 1, docs.cols());
        const auto idx = index_of(docs);
        const std::size_t k = 1 + rng() % n;
        const auto mmr = mmr_select(q.row(0), idx, {1.0, k});
        const auto knn = top_k_similar(q.row(0), idx, k);
        REQUIRE(mmr.size() == knn.size());
        for (std::size_t r = 0; r < k; ++r) CHECK(mmr[r] == knn[r].position);
    }
}

TEST_CASE("mmr three candidate case") {
    // rows: q, d1, d2, d3
    const Matrix v = realize_gram({{1, .9, .85, .2}, {.9, 1, .95, .1}, {.85, .95, 1, .1}, {.2, .1, .1, 1}});
    Matrix docs(0, 0);
    for (std::size_t r = 1; r < 4; ++r) docs.append_row(v.row(r));
    const auto idx = index_of(docs);
    const auto picks = mmr_select(v.row(0), idx, {0.5, 2});
    REQUIRE(picks.size() == 2);
    CHECK(picks[0] == 0);  // d1
    CHECK(picks[1] == 2);  // d3
    CHECK(picks == mmr_brute(v.row(0), docs, 0.5, 2));
}

TEST_CASE("mmr matches the literal evaluator and has the prefix property") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        const Matrix docs = testing::random_unit_rows(rng, 20, 5);
        const Matrix q = testing::random_matrix(rng, 1, 5);
        const auto idx = index_of(docs);
        const double lambda = testing::uniform(rng, 0.0, 1.0);
        const auto full = mmr_select(q.row(0), idx, {lambda, 8});
        CHECK(full == mmr_brute(q.row(0), docs, lambda, 8));
        for (std::size_t m = 1; m <= 8; ++m) {
            const auto part = mmr_select(q.row(0), idx, {lambda, m});
            CHECK(std::equal(part.begin(), part.end(), full.begin()));
        }
        std::set<std::size_t> unique(full.begin(), full.end());
        CHECK(unique.size() == full.size());
    }
}

TEST_CASE("mmr first pick is the most relevant and exclusions hold") {
    std::mt19937_64 rng(9);
    const Matrix docs = testing::random_unit_rows(rng, 12, 4);
    const auto idx = index_of(docs);
    const auto q = docs.row(3);
    for (double lambda : {0.1, 0.5, 0.7}) {
        const auto picks = mmr_select(q, idx, {lambda, 4});
        CHECK(picks[0] == 3);
        const std::size_t self = 3;
        const auto others = mmr_select(q, idx, {lambda, 20}, std::span(&self, 1));
        CHECK(others.size() == 11);
        CHECK(std::find(others.begin(), others.end(), 3u) == others.end());
    }
    CHECK_THROWS_AS(mmr_select(q, idx, {1.5, 4}), ConfigError);
    CHECK_THROWS_AS(mmr_select(q, idx, {0.5, 0}), ConfigError);
}

TEST_CASE("retrieval is identical under both execution modes") {
    std::mt19937_64 rng(10);
    const Matrix docs = testing::random_unit_rows(rng, 200, 16);
    const auto idx = index_of(docs);
    const Matrix q = testing::random_matrix(rng, 1, 16);
    CHECK(similarities(q.row(0), idx, kernels::Exec::serial) == similarities(q.row(0), idx, kernels::Exec::parallel));
    CHECK(mmr_select(q.row(0), idx, {0.7, 32}, {}, kernels::Exec::serial) ==
          mmr_select(q.row(0), idx, {0.7, 32}, {}, kernels::Exec::parallel));
}

TEST_CASE("index rejects non-unit vectors") {
    Matrix m(1, 2);
    m(0, 0) = 2;
    CHECK_THROWS_AS(RetrievalIndex({"a"}, m), DegenerateInputError);
    CHECK_THROWS_AS(RetrievalIndex({"a", "b"}, Matrix(1, 2)), FormatError);
}
