#include "logicl/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "logicl/error.hpp"
#include "logicl/kernels.hpp"

namespace logicl::train {

void validate(const LossWeights& w) {
    for (double v : {w.mmd, w.supcon, w.delta, w.delta_neg})
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
}

void validate(const TrainConfig& c) {
    if (!(c.tau > 0.0)) throw ConfigError("train.tau must be positive");
    if (!(c.theta >= 0.0)) throw ConfigError("train.theta must be >= 0");
    if (!(c.epsilon >= 0.0)) throw ConfigError("train.epsilon must be >= 0");
    if (!(c.sim_floor > 0.0)) throw ConfigError("train.sim_floor must be positive");
    if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate))
        throw ConfigError("train.learning_rate must be finite and >= 0");
    if (c.epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (c.batch_source < 1 || c.batch_target < 1) throw ConfigError("train batch sizes must be >= 1");
    if (c.bandwidth == Bandwidth::fixed && !(c.fixed_sigma > 0.0))
        throw ConfigError("train.fixed_sigma must be positive");
}

PairSets partition_pairs(const delta::DeltaMatrix& m) {
    PairSets out;
    for (const auto& row : m.rows())
        for (const auto& e : row.entries) {
            if (e.delta > 0.0) out.positives.push_back({row.query_id, e.demo_id, e.delta});
            else if (e.delta < 0.0) out.negatives.push_back({row.query_id, e.demo_id, e.delta});
        }
    return out;
}

namespace {

// Summed in sorted order with compensation, so equal multisets of kernel
// values give bitwise equal means and MMD of identical sets is exactly 0.
double mean_of(const Matrix& k) {
    std::vector<double> v(k.data().begin(), k.data().end());
    std::sort(v.begin(), v.end());
    double s = 0.0, c = 0.0;
    for (double x : v) {
        const double t = s + x;
        c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
        s = t;
    }
    return (s + c) / static_cast<double>(v.size());
}

Matrix gather_rows(const Matrix& vecs, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), vecs.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) std::copy_n(vecs.row(rows[r]).begin(), vecs.cols(), out.row(r).begin());
    return out;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

}  // namespace

double mmd_loss(const Matrix& source, const Matrix& target, double sigma, bool squared) {
    if (source.rows() == 0 || target.rows() == 0) throw ConfigError("mmd needs non-empty source and target");
    if (source.cols() != target.cols()) throw ConfigError("mmd inputs differ in dimension");
    if (!(sigma > 0.0)) throw ConfigError("mmd bandwidth must be positive");
    const double m2 = mean_of(kernels::gaussian_kernel(source, source, sigma)) +
                      mean_of(kernels::gaussian_kernel(target, target, sigma)) -
                      2.0 * mean_of(kernels::gaussian_kernel(source, target, sigma));
    return squared ? m2 : std::sqrt(std::max(0.0, m2));
}

LossValue mmd_loss_grad(const Matrix& vecs, std::span<const char> is_source, double sigma, bool squared) {
    if (!(sigma > 0.0)) throw ConfigError("mmd bandwidth must be positive");
    std::vector<std::size_t> hs, bs;
    for (std::size_t i = 0; i < is_source.size(); ++i) (is_source[i] ? hs : bs).push_back(i);
    LossValue out{0.0, Matrix(vecs.rows(), vecs.cols())};
    if (hs.empty() || bs.empty()) return out;

    const Matrix h = gather_rows(vecs, hs), b = gather_rows(vecs, bs);
    const Matrix khh = kernels::gaussian_kernel(h, h, sigma);
    const Matrix kbb = kernels::gaussian_kernel(b, b, sigma);
    const Matrix khb = kernels::gaussian_kernel(h, b, sigma);
    const double nh = static_cast<double>(hs.size()), nb = static_cast<double>(bs.size());
    const double m2 = mean_of(khh) + mean_of(kbb) - 2.0 * mean_of(khb);

    double outer = 1.0;  // dL/d(MMD^2)
    if (squared) {
        out.value = m2;
    } else {
        out.value = std::sqrt(std::max(0.0, m2));
        outer = out.value > 0.0 ? 0.5 / out.value : 0.0;
    }
    if (outer == 0.0) return out;

    // d k(x, y) / dx = -k(x, y) (x - y) / sigma^2
    const double inv_s2 = 1.0 / (sigma * sigma);
    std::vector<double> diff(vecs.cols());
    auto add_pull = [&](std::size_t dst_row, std::span<const double> x, std::span<const double> y, double coeff) {
        for (std::size_t c = 0; c < diff.size(); ++c) diff[c] = x[c] - y[c];
        axpy(coeff, diff, out.grad.row(dst_row));
    };
    for (std::size_t i = 0; i < hs.size(); ++i) {
        for (std::size_t j = 0; j < hs.size(); ++j)
            add_pull(hs[i], h.row(i), h.row(j), -outer * 2.0 / (nh * nh) * khh(i, j) * inv_s2);
        for (std::size_t j = 0; j < bs.size(); ++j)
            add_pull(hs[i], h.row(i), b.row(j), outer * 2.0 / (nh * nb) * khb(i, j) * inv_s2);
    }
    for (std::size_t j = 0; j < bs.size(); ++j) {
        for (std::size_t k = 0; k < bs.size(); ++k)
            add_pull(bs[j], b.row(j), b.row(k), -outer * 2.0 / (nb * nb) * kbb(j, k) * inv_s2);
        for (std::size_t i = 0; i < hs.size(); ++i)
            add_pull(bs[j], b.row(j), h.row(i), outer * 2.0 / (nh * nb) * khb(i, j) * inv_s2);
    }
    return out;
}

namespace {

LossValue supcon_impl(const Matrix& vecs, std::span<const int> labels, double tau, double epsilon, bool want_grad) {
    const std::size_t n = vecs.rows();
    if (labels.size() != n) throw ConfigError("supcon needs one label per vector");
    if (n < 2) throw ConfigError("supcon needs at least two vectors");
    if (!(tau > 0.0)) throw ConfigError("supcon temperature must be positive");

    const Matrix sims = kernels::cross_gram(vecs, vecs);
    std::vector<std::size_t> anchors;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < n; ++p)
            if (p != i && labels[p] == labels[i]) {
                anchors.push_back(i);
                break;
            }
    if (anchors.empty()) throw ConfigError("supcon batch has no anchor with a positive");

    LossValue out;
    Matrix g_sims;
    if (want_grad) g_sims = Matrix(n, n);
    const double inv_anchors = 1.0 / static_cast<double>(anchors.size());
    std::vector<double> e(n);
    double total = 0.0;
    for (std::size_t i : anchors) {
        double denom = 0.0;
        std::size_t positives = 0;
        for (std::size_t a = 0; a < n; ++a) {
            if (a == i) continue;
            e[a] = std::exp(sims(i, a) / tau);
            denom += e[a];
            if (labels[a] == labels[i]) ++positives;
        }
        const double inv_p = 1.0 / static_cast<double>(positives);
        const double log_den = std::log(denom + epsilon);
        double term = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            if (p == i || labels[p] != labels[i]) continue;
            term += std::log(e[p] + epsilon) - log_den;
            if (want_grad) g_sims(i, p) -= inv_anchors * inv_p * e[p] / (tau * (e[p] + epsilon));
        }
        total += -inv_p * term;
        if (want_grad)
            for (std::size_t a = 0; a < n; ++a)
                if (a != i) g_sims(i, a) += inv_anchors * e[a] / (tau * (denom + epsilon));
    }
    out.value = total * inv_anchors;
    if (want_grad) {
        // s_ia = <v_i, v_a>: dL/dv_i += g_ia v_a, dL/dv_a += g_ia v_i
        out.grad = Matrix(n, vecs.cols());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t a = 0; a < n; ++a) {
                const double g = g_sims(i, a);
                if (g == 0.0) continue;
                axpy(g, vecs.row(a), out.grad.row(i));
                axpy(g, vecs.row(i), out.grad.row(a));
            }
    }
    return out;
}

}  // namespace

double supcon_loss(const Matrix& vecs, std::span<const int> labels, double tau, double epsilon) {
    return supcon_impl(vecs, labels, tau, epsilon, false).value;
}

LossValue supcon_loss_grad(const Matrix& vecs, std::span<const int> labels, double tau, double epsilon) {
    return supcon_impl(vecs, labels, tau, epsilon, true);
}

LossValue delta_loss_grad(std::span<const IndexPair> positives, std::span<const IndexPair> negatives,
                          const Matrix& vecs, double tau, double theta, double lambda_neg, double sim_floor,
                          DeltaLossParts* parts) {
    if (!(tau > 0.0) || !(sim_floor > 0.0)) throw ConfigError("delta loss needs positive tau and sim_floor");
    LossValue out{0.0, Matrix(vecs.rows(), vecs.cols())};
    DeltaLossParts p;
    auto check = [&](const IndexPair& pr) {
        if (pr.i >= vecs.rows() || pr.j >= vecs.rows()) throw FormatError("delta pair refers to a missing row");
    };
    for (const auto& pr : positives) {
        check(pr);
        const double s = dot(vecs.row(pr.i), vecs.row(pr.j));
        const double clamped = std::max(s, sim_floor);
        p.positive += -pr.delta * std::log(clamped / tau);
        if (s > sim_floor) {
            const double g = -pr.delta / s;
            axpy(g, vecs.row(pr.j), out.grad.row(pr.i));
            axpy(g, vecs.row(pr.i), out.grad.row(pr.j));
        }
    }
    for (const auto& pr : negatives) {
        check(pr);
        const double margin = std::max(0.0, std::abs(pr.delta) - theta);
        if (margin == 0.0) continue;
        const double s = dot(vecs.row(pr.i), vecs.row(pr.j));
        p.negative += margin * (1.0 - s);
        const double g = -lambda_neg * margin;
        axpy(g, vecs.row(pr.j), out.grad.row(pr.i));
        axpy(g, vecs.row(pr.i), out.grad.row(pr.j));
    }
    p.total = p.positive + lambda_neg * p.negative;
    out.value = p.total;
    if (parts) *parts = p;
    return out;
}

DeltaLossParts delta_loss(std::span<const IndexPair> positives, std::span<const IndexPair> negatives,
                          const Matrix& vecs, double tau, double theta, double lambda_neg, double sim_floor) {
    DeltaLossParts parts;
    delta_loss_grad(positives, negatives, vecs, tau, theta, lambda_neg, sim_floor, &parts);
    return parts;
}

DeltaLossParts delta_loss(const PairSets& pairs, const embed::EmbeddingStore& embeddings, double tau, double theta,
                          double lambda_neg, double sim_floor) {
    auto resolve = [&](const std::vector<DeltaPair>& in) {
        std::vector<IndexPair> out;
        out.reserve(in.size());
        for (const auto& p : in) out.push_back({embeddings.position(p.query_id), embeddings.position(p.demo_id), p.delta});
        return out;
    };
    const auto pos = resolve(pairs.positives);
    const auto neg = resolve(pairs.negatives);
    return delta_loss(pos, neg, embeddings.vectors(), tau, theta, lambda_neg, sim_floor);
}

double median_bandwidth(const Matrix& vecs) {
    std::vector<double> d;
    d.reserve(vecs.rows() * (vecs.rows() - 1) / 2 + 1);
    for (std::size_t i = 0; i < vecs.rows(); ++i)
        for (std::size_t j = i + 1; j < vecs.rows(); ++j) d.push_back(std::sqrt(squared_distance(vecs.row(i), vecs.row(j))));
    if (d.empty()) return 1.0;
    const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    double median = *mid;
    if (d.size() % 2 == 0) median = 0.5 * (median + *std::max_element(d.begin(), mid));
    return median > 0.0 ? median : 1.0;
}

double resolve_bandwidth(const Matrix& head, const Batch& batch, const TrainConfig& config) {
    if (config.bandwidth == Bandwidth::fixed) return config.fixed_sigma;
    return median_bandwidth(embed::project_all(embed::ProjectionHead{head}, batch.inputs));
}

namespace {

struct Forward {
    Matrix z;  // W x per member
    std::vector<double> norms;
    Matrix v;  // z / |z|
};

Forward forward(const Matrix& head, const Matrix& inputs) {
    Forward f;
    f.z = kernels::project_rows(head, inputs);
    f.norms.resize(f.z.rows());
    f.v = f.z;
    for (std::size_t i = 0; i < f.z.rows(); ++i) {
        f.norms[i] = norm2(f.z.row(i));
        if (!(f.norms[i] > 0.0) || !std::isfinite(f.norms[i]))
            throw DegenerateInputError("batch member " + std::to_string(i) + " projects to a zero vector");
        for (double& x : f.v.row(i)) x /= f.norms[i];
    }
    return f;
}

Gradient evaluate(const Matrix& head, const Batch& batch, const LossWeights& weights, const TrainConfig& config,
                  double sigma, bool want_grad) {
    if (batch.inputs.cols() != head.cols()) throw ConfigError("batch inputs do not match head input dim");
    if (batch.labels.size() != batch.inputs.rows() || batch.is_source.size() != batch.inputs.rows())
        throw ConfigError("batch labels/domains do not match member count");
    const Forward f = forward(head, batch.inputs);

    Gradient g;
    Matrix g_v(f.v.rows(), f.v.cols());
    auto accumulate = [&](double w, const Matrix& term) {
        if (!want_grad || w == 0.0 || term.empty()) return;
        axpy(w, term.data(), g_v.data());
    };

    if (weights.mmd > 0.0) {
        if (want_grad) {
            LossValue m = mmd_loss_grad(f.v, batch.is_source, sigma, config.mmd_squared);
            g.loss.mmd = m.value;
            accumulate(weights.mmd, m.grad);
        } else {
            std::vector<std::size_t> hs, bs;
            for (std::size_t i = 0; i < batch.is_source.size(); ++i) (batch.is_source[i] ? hs : bs).push_back(i);
            if (!hs.empty() && !bs.empty())
                g.loss.mmd = mmd_loss(gather_rows(f.v, hs), gather_rows(f.v, bs), sigma, config.mmd_squared);
        }
    }
    if (weights.supcon > 0.0) {
        LossValue s = want_grad ? supcon_loss_grad(f.v, batch.labels, config.tau, config.epsilon)
                                : LossValue{supcon_loss(f.v, batch.labels, config.tau, config.epsilon), {}};
        g.loss.supcon = s.value;
        accumulate(weights.supcon, s.grad);
    }
    if (weights.delta > 0.0) {
        DeltaLossParts parts;
        LossValue d = delta_loss_grad(batch.positives, batch.negatives, f.v, config.tau, config.theta,
                                      weights.delta_neg, config.sim_floor, &parts);
        g.loss.delta_pos = parts.positive;
        g.loss.delta_neg = parts.negative;
        accumulate(weights.delta, d.grad);
    }
    g.loss.total = weights.mmd * g.loss.mmd + weights.supcon * g.loss.supcon +
                   weights.delta * (g.loss.delta_pos + weights.delta_neg * g.loss.delta_neg);
    if (!want_grad) return g;

    // v = z / |z|  =>  dL/dz = (g - (g.v) v) / |z|
    Matrix g_z(f.v.rows(), f.v.cols());
    for (std::size_t i = 0; i < f.v.rows(); ++i) {
        const double proj = dot(g_v.row(i), f.v.row(i));
        auto dst = g_z.row(i);
        auto gv = g_v.row(i);
        auto v = f.v.row(i);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] = (gv[c] - proj * v[c]) / f.norms[i];
    }
    g.d_head = kernels::accumulate_outer(g_z, batch.inputs);
    return g;
}

}  // namespace

LossBreakdown total_loss(const Matrix& head, const Batch& batch, const LossWeights& weights, const TrainConfig& config,
                         double sigma) {
    return evaluate(head, batch, weights, config, sigma, false).loss;
}

Gradient grad_total_loss(const Matrix& head, const Batch& batch, const LossWeights& weights, const TrainConfig& config,
                         double sigma) {
    return evaluate(head, batch, weights, config, sigma, true);
}

double finite_diff_check(const std::function<double(const Matrix&)>& loss, const Matrix& grad, const Matrix& at,
                         double h) {
    if (!(h > 0.0)) throw ConfigError("finite difference step must be positive");
    double worst = 0.0;
    Matrix probe = at;
    for (std::size_t k = 0; k < probe.data().size(); ++k) {
        const double orig = probe.data()[k];
        probe.data()[k] = orig + h;
        const double up = loss(probe);
        probe.data()[k] = orig - h;
        const double down = loss(probe);
        probe.data()[k] = orig;
        const double fd = (up - down) / (2.0 * h);
        const double a = grad.data()[k];
        worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8}));
    }
    return worst;
}

FiniteDiffReport finite_diff_check(const Matrix& head, const Batch& batch, const LossWeights& weights,
                                   const TrainConfig& config, double sigma, double h) {
    const Gradient g = grad_total_loss(head, batch, weights, config, sigma);
    FiniteDiffReport report;
    report.max_rel_error = finite_diff_check(
        [&](const Matrix& w) { return total_loss(w, batch, weights, config, sigma).total; }, g.d_head, head, h);

    const Forward f = forward(head, batch.inputs);
    const double margin = 100.0 * h;
    if (weights.delta > 0.0)
        for (const auto& p : batch.positives)
            if (std::abs(dot(f.v.row(p.i), f.v.row(p.j)) - config.sim_floor) < margin) report.near_kink = true;
    if (weights.mmd > 0.0 && !config.mmd_squared) {
        std::vector<std::size_t> hs, bs;
        for (std::size_t i = 0; i < batch.is_source.size(); ++i) (batch.is_source[i] ? hs : bs).push_back(i);
        if (!hs.empty() && !bs.empty() &&
            mmd_loss(gather_rows(f.v, hs), gather_rows(f.v, bs), sigma, true) < margin)
            report.near_kink = true;
    }
    return report;
}

double mean_positive_cosine(const embed::EmbeddingStore& backbone, const PairSets& pairs,
                            const embed::ProjectionHead& head) {
    if (pairs.positives.empty()) return 0.0;
    const Matrix v = embed::project_all(head, backbone.vectors());
    double sum = 0.0;
    for (const auto& p : pairs.positives)
        sum += dot(v.row(backbone.position(p.query_id)), v.row(backbone.position(p.demo_id)));
    return sum / static_cast<double>(pairs.positives.size());
}

namespace {

// Delta pairs keyed by the query's corpus position.
struct PairIndex {
    std::vector<std::vector<IndexPair>> positives;  // IndexPair.i/j hold corpus positions
    std::vector<std::vector<IndexPair>> negatives;
};

PairIndex index_pairs(const corpus::Corpus& corpus, const PairSets& pairs) {
    PairIndex idx{std::vector<std::vector<IndexPair>>(corpus.size()), std::vector<std::vector<IndexPair>>(corpus.size())};
    auto add = [&](const DeltaPair& p, std::vector<std::vector<IndexPair>>& dst) {
        if (!corpus.contains(p.query_id) || !corpus.contains(p.demo_id))
            throw ConfigError("delta pair (" + p.query_id + ", " + p.demo_id + ") is not in the training corpus");
        const std::size_t q = corpus.position(p.query_id);
        dst[q].push_back({q, corpus.position(p.demo_id), p.delta});
    };
    for (const auto& p : pairs.positives) add(p, idx.positives);
    for (const auto& p : pairs.negatives) add(p, idx.negatives);
    return idx;
}

Batch make_batch(const std::vector<std::size_t>& members, const corpus::Corpus& corpus, const Matrix& inputs,
                 const std::vector<char>& source_flag, const PairIndex& pairs) {
    Batch b;
    b.inputs = Matrix(members.size(), inputs.cols());
    std::map<std::size_t, std::size_t> local;
    for (std::size_t k = 0; k < members.size(); ++k) {
        const std::size_t g = members[k];
        std::copy_n(inputs.row(g).begin(), inputs.cols(), b.inputs.row(k).begin());
        b.labels.push_back(corpus[g].label);
        b.is_source.push_back(source_flag[g]);
        local.emplace(g, k);
    }
    for (std::size_t k = 0; k < members.size(); ++k) {
        const std::size_t g = members[k];
        for (const auto& p : pairs.positives[g])
            if (auto it = local.find(p.j); it != local.end()) b.positives.push_back({k, it->second, p.delta});
        for (const auto& p : pairs.negatives[g])
            if (auto it = local.find(p.j); it != local.end()) b.negatives.push_back({k, it->second, p.delta});
    }
    return b;
}

std::string describe(const LossBreakdown& l) {
    std::ostringstream os;
    os << "l_mmd=" << l.mmd << " l_supcon=" << l.supcon << " l_delta_pos=" << l.delta_pos
       << " l_delta_neg=" << l.delta_neg << " l_total=" << l.total;
    return os.str();
}

bool finite(const LossBreakdown& l) {
    return std::isfinite(l.mmd) && std::isfinite(l.supcon) && std::isfinite(l.delta_pos) &&
           std::isfinite(l.delta_neg) && std::isfinite(l.total);
}

bool has_positive_pair(const std::vector<int>& labels) {
    std::size_t ones = 0;
    for (int l : labels) ones += l == 1;
    return ones >= 2 || labels.size() - ones >= 2;
}

}  // namespace

TrainResult train_encoder(const corpus::Corpus& train_corpus, const embed::EmbeddingStore& backbone,
                          const delta::DeltaMatrix& delta_matrix, const embed::ProjectionHead& initial,
                          const LossWeights& weights, const TrainConfig& config) {
    validate(weights);
    validate(config);
    if (train_corpus.size() < 2) throw EmptyCorpusError("training needs at least two sequences");
    if (initial.in_dim() != backbone.dim()) throw ConfigError("projection head does not match backbone dim");

    const std::size_t n = train_corpus.size();
    Matrix inputs(n, backbone.dim());
    for (std::size_t i = 0; i < n; ++i) {
        auto v = backbone.at(train_corpus[i].id);
        std::copy(v.begin(), v.end(), inputs.row(i).begin());
    }

    std::set<std::string> source_domains = config.source_domains;
    if (source_domains.empty()) {
        std::map<std::string, std::size_t> counts;
        for (const auto& s : train_corpus.sequences()) ++counts[s.domain];
        const auto largest = std::max_element(counts.begin(), counts.end(),
                                              [](const auto& a, const auto& b) { return a.second < b.second; });
        source_domains.insert(largest->first);
    }
    std::vector<char> source_flag(n);
    std::vector<std::size_t> source_pool, target_pool;
    for (std::size_t i = 0; i < n; ++i) {
        source_flag[i] = source_domains.contains(train_corpus[i].domain) ? 1 : 0;
        (source_flag[i] ? source_pool : target_pool).push_back(i);
    }

    const PairSets pair_sets = partition_pairs(delta_matrix);
    const PairIndex pairs = index_pairs(train_corpus, pair_sets);

    std::vector<std::size_t> everyone(n);
    std::iota(everyone.begin(), everyone.end(), std::size_t{0});
    const bool full_eval = n <= config.full_eval_limit;
    const Batch full_batch = make_batch(everyone, train_corpus, inputs, source_flag, pairs);

    TrainResult result{initial, {}};
    Matrix& w = result.head.weights;

    auto safe_loss = [&](const Batch& b, const LossWeights& lw) {
        LossWeights effective = lw;
        if (!has_positive_pair(b.labels)) effective.supcon = 0.0;
        return effective;
    };
    auto evaluate_full = [&]() {
        const LossWeights lw = safe_loss(full_batch, weights);
        return total_loss(w, full_batch, lw, config, resolve_bandwidth(w, full_batch, config));
    };

    const embed::ProjectionHead* head_view = &result.head;
    auto record = [&](std::size_t epoch, const LossBreakdown& l) {
        result.trace.push_back({epoch, l, mean_positive_cosine(backbone, pair_sets, *head_view)});
    };

    if (full_eval) record(0, evaluate_full());
    else record(0, LossBreakdown{});

    std::mt19937_64 rng(config.seed);
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<std::size_t> src = source_pool, tgt = target_pool;
        std::shuffle(src.begin(), src.end(), rng);
        std::shuffle(tgt.begin(), tgt.end(), rng);

        std::size_t batches;
        if (!src.empty()) batches = (src.size() + config.batch_source - 1) / config.batch_source;
        else batches = (tgt.size() + config.batch_target - 1) / config.batch_target;
        const std::size_t per_target = std::min(config.batch_target, tgt.size());

        LossBreakdown epoch_sum;
        for (std::size_t b = 0; b < batches; ++b) {
            std::vector<std::size_t> members;
            for (std::size_t k = b * config.batch_source; k < std::min(src.size(), (b + 1) * config.batch_source); ++k)
                members.push_back(src[k]);
            if (!src.empty()) {
                for (std::size_t k = 0; k < per_target; ++k) members.push_back(tgt[(b * per_target + k) % tgt.size()]);
            } else {
                for (std::size_t k = b * config.batch_target; k < std::min(tgt.size(), (b + 1) * config.batch_target); ++k)
                    members.push_back(tgt[k]);
            }
            if (members.size() < 2) continue;

            const Batch batch = make_batch(members, train_corpus, inputs, source_flag, pairs);
            const LossWeights lw = safe_loss(batch, weights);
            const double sigma = resolve_bandwidth(w, batch, config);
            const Gradient g = grad_total_loss(w, batch, lw, config, sigma);
            if (!finite(g.loss) || !all_finite(g.d_head.data()))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                    std::to_string(b) + ": " + describe(g.loss));
            epoch_sum.mmd += g.loss.mmd;
            epoch_sum.supcon += g.loss.supcon;
            epoch_sum.delta_pos += g.loss.delta_pos;
            epoch_sum.delta_neg += g.loss.delta_neg;
            epoch_sum.total += g.loss.total;
            axpy(-config.learning_rate, g.d_head.data(), w.data());
        }

        if (config.full_pair_pass && weights.delta > 0.0) {
            LossWeights only_delta{0.0, 0.0, weights.delta, weights.delta_neg};
            const Gradient g = grad_total_loss(w, full_batch, only_delta, config, 1.0);
            if (!all_finite(g.d_head.data()))
                throw TrainingError("non-finite gradient in full-pair pass at epoch " + std::to_string(epoch) + ": " +
                                    describe(g.loss));
            axpy(-config.learning_rate, g.d_head.data(), w.data());
        }

        if (full_eval) {
            const LossBreakdown l = evaluate_full();
            if (!finite(l))
                throw TrainingError("non-finite loss after epoch " + std::to_string(epoch) + ": " + describe(l));
            record(epoch, l);
        } else {
            const double inv = batches ? 1.0 / static_cast<double>(batches) : 0.0;
            record(epoch, {epoch_sum.mmd * inv, epoch_sum.supcon * inv, epoch_sum.delta_pos * inv,
                           epoch_sum.delta_neg * inv, epoch_sum.total * inv});
        }
    }
    return result;
}

void write_loss_trace(const std::vector<EpochLoss>& trace, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write loss trace " + path.string());
    out.precision(17);
    out << "epoch,l_mmd,l_supcon,l_delta_pos,l_delta_neg,l_total\n";
    for (const auto& e : trace)
        out << e.epoch << ',' << e.loss.mmd << ',' << e.loss.supcon << ',' << e.loss.delta_pos << ','
            << e.loss.delta_neg << ',' << e.loss.total << '\n';
    if (!out) throw FormatError("write failed for " + path.string());
}

}  // namespace logicl::train
