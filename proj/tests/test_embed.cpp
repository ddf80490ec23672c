#include "doctest.h"

#include <cmath>
#include <fstream>
#include <random>

#include "logicl/embed.hpp"
#include "logicl/error.hpp"
#include "logicl/kernels.hpp"
#include "support.hpp"

using namespace logicl;
using namespace logicl::embed;

namespace {

Corpus small_corpus() {
    Corpus c;
    c.add(testing::seq("a", "d", 0, {"receiving block blk_1 from node", "packet ok"}));
    c.add(testing::seq("b", "d", 1, {"exception in thread main", "java.io.IOException"}));
    c.add(testing::seq("c", "d", 0, {"x"}));
    return c;
}

}  // namespace

TEST_CASE("hash backbone is deterministic and unit norm") {
    const HashNgramSpec spec{};
    const auto s = testing::seq("q", "d", 0, {"Data node READY", "heartbeat 17"});
    const Vector a = embed_backbone(s, spec);
    const Vector b = embed_backbone(s, spec);
    CHECK(a == b);
    CHECK(a.size() == 384);
    CHECK(norm2(a) == doctest::Approx(1.0).epsilon(1e-12));

    // lowercasing makes case irrelevant
    const auto upper = testing::seq("q", "d", 0, {"DATA NODE READY", "HEARTBEAT 17"});
    CHECK(embed_backbone(upper, spec) == a);

    HashNgramSpec other = spec;
    other.seed = 99;
    CHECK(embed_backbone(s, other) != a);
    CHECK(fingerprint(BackboneSpec{other}) != fingerprint(BackboneSpec{spec}));
}

TEST_CASE("hash features count every gram of each length") {
    const HashNgramSpec spec{3, 5, 64, 1};
    const std::string text = "abcdefg";
    const Vector v = hash_ngram_features(text, spec);
    Vector expect(64, 0.0);
    for (std::size_t n = 3; n <= 5; ++n)
        for (std::size_t i = 0; i + n <= text.size(); ++i) {
            const auto g = hash_gram(text.substr(i, n), spec);
            expect[g.bucket] += g.sign;
        }
    CHECK(v == expect);

    // shorter than the smallest gram: hashed whole instead of vanishing
    const Vector shorty = hash_ngram_features("ab", spec);
    double mass = 0.0;
    for (double x : shorty) mass += std::abs(x);
    CHECK(mass == 1.0);
    CHECK(norm2(embed_backbone(testing::seq("c", "d", 0, {"x"}), HashNgramSpec{})) ==
          doctest::Approx(1.0));
}

TEST_CASE("backbone spec validation") {
    CHECK_THROWS_AS(validate(BackboneSpec{HashNgramSpec{4, 3, 64, 0}}), ConfigError);
    CHECK_THROWS_AS(validate(BackboneSpec{HashNgramSpec{3, 5, 0, 0}}), ConfigError);
    CHECK_THROWS_AS(validate(BackboneSpec{RemoteEmbeddingSpec{}}), ConfigError);
    CHECK_NOTHROW(validate(BackboneSpec{HashNgramSpec{}}));
}

TEST_CASE("cosine similarity") {
    const Vector u{1, 0, 0}, v{0, 2, 0}, w{3, 0, 0};
    CHECK(cosine_similarity(u, v) == 0.0);
    CHECK(cosine_similarity(u, w) == doctest::Approx(1.0));
    CHECK(cosine_similarity(u, Vector{-2, 0, 0}) == doctest::Approx(-1.0));
    CHECK_THROWS(cosine_similarity(u, Vector{1, 0}));
    CHECK_THROWS_AS(cosine_similarity(u, Vector{0, 0, 0}), DegenerateInputError);
}

TEST_CASE("projection head") {
    const auto id = ProjectionHead::identity(4);
    const Vector x{3, 0, 4, 0};
    const Vector z = project(id, x);
    CHECK(z == Vector{0.6, 0.0, 0.8, 0.0});

    const auto p1 = ProjectionHead::perturbed_identity(8, 5, 1e-3);
    const auto p2 = ProjectionHead::perturbed_identity(8, 5, 1e-3);
    CHECK(p1 == p2);
    CHECK(p1 != ProjectionHead::perturbed_identity(8, 6, 1e-3));
    double max_off = 0.0;
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c)
            max_off = std::max(max_off, std::abs(p1.weights(r, c) - (r == c ? 1.0 : 0.0)));
    CHECK(max_off > 0.0);
    CHECK(max_off < 1e-2);

    ProjectionHead zero{Matrix(2, 2)};
    CHECK_THROWS_AS(project(zero, Vector{1, 1}), DegenerateInputError);
    CHECK_THROWS_AS(project(id, Vector{1, 1}), ConfigError);

    testing::TempDir dir;
    save_head(p1, dir / "h.bin");
    CHECK(load_head(dir / "h.bin") == p1);
    testing::write_text(dir / "bad.bin", "garbage!");
    CHECK_THROWS_AS(load_head(dir / "bad.bin"), FormatError);
}

TEST_CASE("project_all matches per-row projection") {
    std::mt19937_64 rng(3);
    ProjectionHead head{testing::random_matrix(rng, 5, 7)};
    const Matrix x = testing::random_matrix(rng, 9, 7);
    const Matrix all = project_all(head, x);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const Vector one = project(head, x.row(i));
        for (std::size_t c = 0; c < 5; ++c) CHECK(all(i, c) == one[c]);
    }
}

TEST_CASE("encoder is backbone then head") {
    auto backbone = std::make_shared<HashNgramBackbone>(HashNgramSpec{3, 5, 32, 0});
    const auto head = ProjectionHead::perturbed_identity(32, 1);
    const Encoder enc(backbone, head);
    const auto s = testing::seq("a", "d", 0, {"hello world"});
    const Vector expect = project(head, embed_backbone(s, HashNgramSpec{3, 5, 32, 0}));
    CHECK(encode(s, enc) == expect);
    CHECK(enc.fingerprint() != Encoder(backbone, ProjectionHead::identity(32)).fingerprint());
}

TEST_CASE("embedding cache reuse and invalidation") {
    testing::TempDir dir;
    const Corpus c = small_corpus();
    HashNgramBackbone bb(HashNgramSpec{});
    const auto first = embed_backbone_corpus(c, bb, dir / "cache.emb");
    const std::size_t calls = bb.calls();
    CHECK(calls == c.size());
    const auto second = embed_backbone_corpus(c, bb, dir / "cache.emb");
    CHECK(bb.calls() == calls);
    CHECK(second == first);

    // a different backbone must not reuse the file
    HashNgramBackbone other(HashNgramSpec{3, 5, 384, 1});
    const auto third = embed_backbone_corpus(c, other, dir / "cache.emb");
    CHECK(other.calls() == c.size());
    CHECK(third.fingerprint() != first.fingerprint());
    CHECK_THROWS_AS(EmbeddingStore::load(dir / "cache.emb", first.fingerprint()), CacheInvalidError);

    // a changed corpus must not reuse it either
    Corpus changed = c;
    changed.add(testing::seq("d", "d", 1, {"new"}));
    HashNgramBackbone bb2(HashNgramSpec{});
    embed_backbone_corpus(changed, bb2, dir / "cache.emb");
    CHECK(bb2.calls() == changed.size());
}

TEST_CASE("embedding store round trip and corruption") {
    testing::TempDir dir;
    HashNgramBackbone bb(HashNgramSpec{});
    const auto store = embed_backbone_corpus(small_corpus(), bb);
    store.save(dir / "s.emb");
    CHECK(EmbeddingStore::load(dir / "s.emb") == store);
    CHECK(store.position("b") == 1);
    CHECK_THROWS_AS(store.position("zzz"), FormatError);

    std::string bytes = testing::read_text(dir / "s.emb");
    testing::write_text(dir / "trunc.emb", bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(EmbeddingStore::load(dir / "trunc.emb"), FormatError);
    testing::write_text(dir / "extra.emb", bytes + "x");
    CHECK_THROWS_AS(EmbeddingStore::load(dir / "extra.emb"), FormatError);

    const auto head = ProjectionHead::perturbed_identity(384, 2);
    const auto projected = apply_head(store, head);
    CHECK(projected.ids() == store.ids());
    for (const auto& id : store.ids()) {
        const Vector expect = project(head, store.at(id));
        const auto got = projected.at(id);
        CHECK(std::equal(got.begin(), got.end(), expect.begin()));
    }
}

TEST_CASE("serial and parallel kernels agree bitwise") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix a = testing::random_matrix(rng, 37, 19);
        const Matrix b = testing::random_matrix(rng, 23, 19);
        const Matrix w = testing::random_matrix(rng, 13, 19);
        const Matrix g = testing::random_matrix(rng, 37, 13);
        CHECK(kernels::serial::cross_gram(a, b) == kernels::parallel::cross_gram(a, b));
        CHECK(kernels::serial::gaussian_kernel(a, b, 0.7) == kernels::parallel::gaussian_kernel(a, b, 0.7));
        CHECK(kernels::serial::project_rows(w, a) == kernels::parallel::project_rows(w, a));
        CHECK(kernels::serial::accumulate_outer(g, a) == kernels::parallel::accumulate_outer(g, a));
        Vector s(a.rows()), p(a.rows());
        kernels::serial::dot_scan(b.row(0), a, s);
        kernels::parallel::dot_scan(b.row(0), a, p);
        CHECK(s == p);
    }
}

TEST_CASE("serial kernels match direct formulas") {
    std::mt19937_64 rng(12);
    const Matrix a = testing::random_matrix(rng, 4, 3);
    const Matrix b = testing::random_matrix(rng, 5, 3);
    const Matrix k = kernels::serial::gaussian_kernel(a, b, 0.9);
    const Matrix gram = kernels::serial::cross_gram(a, b);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            double d2 = 0.0, ip = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                d2 += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
                ip += a(i, c) * b(j, c);
            }
            CHECK(k(i, j) == doctest::Approx(std::exp(-d2 / (2 * 0.81))).epsilon(1e-14));
            CHECK(gram(i, j) == doctest::Approx(ip).epsilon(1e-14));
        }
    const Matrix g = testing::random_matrix(rng, 4, 2);
    const Matrix acc = kernels::serial::accumulate_outer(g, a);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 3; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < 4; ++i) s += g(i, r) * a(i, c);
            CHECK(acc(r, c) == doctest::Approx(s).epsilon(1e-14));
        }
}
