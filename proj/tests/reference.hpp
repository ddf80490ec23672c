#pragma once

// Brute-force evaluators of the training losses, written straight from the
// formulas with no shared code from the library. Used as test oracles.

#include <cmath>
#include <random>
#include <vector>

#include "logicl/train.hpp"
#include "support.hpp"

namespace reference {

using Rows = std::vector<std::vector<double>>;

inline Rows rows_of(const logicl::Matrix& m) {
    Rows out;
    for (std::size_t i = 0; i < m.rows(); ++i) out.emplace_back(m.row(i).begin(), m.row(i).end());
    return out;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    return ab / std::sqrt(aa * bb);
}

inline double gauss(const std::vector<double>& x, const std::vector<double>& y, double sigma) {
    double d2 = 0;
    for (std::size_t k = 0; k < x.size(); ++k) d2 += (x[k] - y[k]) * (x[k] - y[k]);
    return std::exp(-d2 / (2 * sigma * sigma));
}

// sqrt of the biased kernel estimate of the squared mean-embedding distance.
inline double mmd(const Rows& h, const Rows& b, double sigma) {
    double hh = 0, bb = 0, hb = 0;
    for (const auto& x : h)
        for (const auto& y : h) hh += gauss(x, y, sigma);
    for (const auto& x : b)
        for (const auto& y : b) bb += gauss(x, y, sigma);
    for (const auto& x : h)
        for (const auto& y : b) hb += gauss(x, y, sigma);
    const double m2 = hh / double(h.size() * h.size()) + bb / double(b.size() * b.size()) -
                      2 * hb / double(h.size() * b.size());
    return std::sqrt(std::max(0.0, m2));
}

// (1/|I|) sum_i (-1/|P(i)|) sum_p log((e^{s_ip/t} + eps) / (sum_{a != i} e^{s_ia/t} + eps))
inline double supcon(const Rows& v, const std::vector<int>& labels, double tau, double eps) {
    double total = 0;
    int anchors = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::vector<std::size_t> pos;
        for (std::size_t p = 0; p < v.size(); ++p)
            if (p != i && labels[p] == labels[i]) pos.push_back(p);
        if (pos.empty()) continue;
        ++anchors;
        double den = 0;
        for (std::size_t a = 0; a < v.size(); ++a)
            if (a != i) den += std::exp(cosine(v[i], v[a]) / tau);
        double inner = 0;
        for (auto p : pos) inner += std::log((std::exp(cosine(v[i], v[p]) / tau) + eps) / (den + eps));
        total += -inner / double(pos.size());
    }
    return total / anchors;
}

struct Pair {
    std::size_t i, j;
    double delta;
};

inline double delta_pos(const Rows& v, const std::vector<Pair>& pairs, double tau, double floor) {
    double l = 0;
    for (const auto& p : pairs) l -= p.delta * std::log(std::max(cosine(v[p.i], v[p.j]), floor) / tau);
    return l;
}

inline double delta_neg(const Rows& v, const std::vector<Pair>& pairs, double theta) {
    double l = 0;
    for (const auto& p : pairs) l += std::max(0.0, std::abs(p.delta) - theta) * (1 - cosine(v[p.i], v[p.j]));
    return l;
}

// Random batch of backbone vectors with mixed domains, labels and delta pairs.
inline logicl::train::Batch random_batch(std::mt19937_64& rng, std::size_t d, std::size_t n) {
    logicl::train::Batch b;
    b.inputs = testing::random_matrix(rng, n, d);
    for (std::size_t i = 0; i < n; ++i) {
        b.labels.push_back(static_cast<int>(rng() % 2));
        b.is_source.push_back(static_cast<char>(i % 2 == 0));
    }
    b.labels[0] = b.labels[1];  // at least one positive
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j || rng() % 4 != 0) continue;
            const double delta = std::round(testing::uniform(rng, -0.9, 0.9) * 100) / 100;
            if (delta > 0) b.positives.push_back({i, j, delta});
            else if (delta < 0) b.negatives.push_back({i, j, delta});
        }
    return b;
}

}  // namespace reference
