#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "protorect/episodes.hpp"
#include "protorect/error.hpp"
#include "protorect/random.hpp"
#include "protorect/rectify.hpp"
#include "support.hpp"

using namespace protorect;
using testing::rows;

namespace {

Matrix random_unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Matrix m(n, d);
    for (auto& v : m.data()) v = g(rng);
    normalize_rows(m);
    return m;
}

ScoreMatrix manual_scores(const Matrix& cosines, double tau = 10.0) {
    ScoreMatrix sm;
    sm.cosines = cosines;
    sm.probabilities = Matrix(cosines.rows(), cosines.cols());
    sm.tau = tau;
    for (std::size_t i = 0; i < cosines.rows(); ++i) {
        const auto p = softmax(cosines.row(i), tau);
        std::copy(p.begin(), p.end(), sm.probabilities.row(i).begin());
    }
    return sm;
}

}  // namespace

TEST_SUITE("rectify") {

TEST_CASE("shift term examples") {
    const auto same = shift_term(rows({{1, 0}, {0, 1}}), rows({{0, 1}, {1, 0}}));
    CHECK(same.xi == std::vector<double>{0, 0});
    const auto xi = shift_term(rows({{1, 0}}), rows({{0, 1}}));
    CHECK(xi.xi == std::vector<double>{1, -1});
    const auto moved = apply_shift(rows({{0, 1}}), xi);
    CHECK(moved == rows({{1, 0}}));
    CHECK(apply_shift(rows({{0.3, 0.4}}), ShiftTerm{{0, 0}}) == rows({{0.3, 0.4}}));
    CHECK_THROWS_AS(shift_term(Matrix(0, 2), rows({{1, 0}})), Error);
    CHECK_THROWS_AS(apply_shift(rows({{1, 0}}), ShiftTerm{{1, 0, 0}}), Error);
}

TEST_CASE("shift aligns the pooled means and is antisymmetric") {
    const auto s = random_unit_rows(5, 16, 1);
    const auto q = random_unit_rows(75, 16, 2);
    const auto xi = shift_term(s, q);
    const auto back = shift_term(q, s);
    for (std::size_t d = 0; d < 16; ++d) CHECK(std::abs(xi.xi[d] + back.xi[d]) < 1e-15);
    const auto shifted = apply_shift(q, xi);
    CHECK(measure_cross_bias(s, shifted).norm <= 1e-9);
    const auto cross = measure_cross_bias(s, q);
    CHECK(cross.vector == xi.xi);
}

TEST_CASE("pooled shift equals the class-wise residual mean on balanced episodes") {
    const auto fs = testing::bench_set();
    const auto view = normalize(fs);
    const EpisodeSpec spec{5, 3, 15, 0, 2};
    for (std::uint64_t e = 0; e < 10; ++e) {
        const auto f = gather_episode(view, sample_episode(fs, spec, e));
        const auto basic = basic_prototypes(f.support, f.class_ids);
        std::vector<double> residual(f.support.cols(), 0.0);
        for (std::size_t n = 0; n < 5; ++n) {
            for (std::size_t j = 0; j < 15; ++j) {
                const auto x = f.query.row(n * 15 + j);
                for (std::size_t d = 0; d < residual.size(); ++d) residual[d] += basic.vectors(n, d) - x[d];
            }
        }
        const auto xi = shift_term(f.support, f.query);
        for (std::size_t d = 0; d < residual.size(); ++d) CHECK(std::abs(residual[d] / 75.0 - xi.xi[d]) < 1e-12);
    }
}

TEST_CASE("select_pseudo: empty, ordered truncation, no duplicates") {
    const auto sm = manual_scores(rows({{0.9, 0.1}, {0.8, 0.1}, {0.7, 0.1}}));
    CHECK(select_pseudo(sm, 0).total() == 0);
    const auto two = select_pseudo(sm, 2);
    REQUIRE(two.per_class[0].size() == 2);
    CHECK(two.per_class[0][0].query == 0u);
    CHECK(two.per_class[0][1].query == 1u);
    CHECK(two.per_class[1].empty());

    const auto all = select_pseudo(sm, 50);
    CHECK(all.total() == 3);
    CHECK_THROWS_AS(select_pseudo(sm, -1), Error);
}

TEST_CASE("select_pseudo ties go to the lower query index") {
    const auto sm = manual_scores(rows({{0.2, 0.5}, {0.9, 0.1}, {0.9, 0.1}, {0.9, 0.1}}));
    const auto sel = select_pseudo(sm, 2);
    REQUIRE(sel.per_class[0].size() == 2);
    CHECK(sel.per_class[0][0].query == 1u);
    CHECK(sel.per_class[0][1].query == 2u);
    REQUIRE(sel.per_class[1].size() == 1);
    CHECK(sel.per_class[1][0].query == 0u);
}

TEST_CASE("select_pseudo invariants on random scores") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix cos(40, 5);
        for (auto& v : cos.data()) v = u(rng);
        const auto sm = manual_scores(cos);
        const auto preds = predict(sm);
        const int z = trial % 9;
        const auto sel = select_pseudo(sm, z);
        std::set<std::size_t> seen;
        for (std::size_t n = 0; n < 5; ++n) {
            CHECK(sel.per_class[n].size() <= static_cast<std::size_t>(z));
            for (std::size_t j = 0; j < sel.per_class[n].size(); ++j) {
                const auto& pl = sel.per_class[n][j];
                CHECK(seen.insert(pl.query).second);
                CHECK(preds[pl.query].label == n);
                if (j > 0) CHECK(sel.per_class[n][j - 1].confidence >= pl.confidence);
            }
        }
    }
}

TEST_CASE("rectification weights examples") {
    const std::vector<double> proto{1, 0};
    const auto two = rectification_weights(rows({{1, 0}, {0.5, std::sqrt(0.75)}}), proto, 10.0);
    CHECK(std::abs(two[0] - 0.99330715) < 1e-6);
    CHECK(std::abs(two[1] - 0.00669285) < 1e-6);
    CHECK(rectification_weights(rows({{0.3, 0.4}}), proto, 10.0) == std::vector<double>{1.0});
    const auto even = rectification_weights(rows({{0, 1}, {0, -1}, {0, 2}}), proto, 10.0);
    for (const double w : even) CHECK(w == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(rectification_weights(rows({{0, 0}}), proto, 10.0), Error);
    CHECK_THROWS_AS(rectification_weights(rows({{1, 0}}), proto, 0.0), Error);
}

TEST_CASE("rectification weight properties") {
    const auto aug = random_unit_rows(9, 12, 7);
    const auto proto = random_unit_rows(1, 12, 8);
    const auto w = rectification_weights(aug, proto.row(0), 10.0);
    CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) < 1e-6);
    for (const double v : w) CHECK(v >= 0.0);

    Matrix scaled = aug;
    for (std::size_t i = 0; i < scaled.rows(); ++i) {
        for (auto& v : scaled.row(i)) v *= static_cast<double>(i + 1) * 3.5;
    }
    const auto ws = rectification_weights(scaled, proto.row(0), 10.0);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(ws[i] - w[i]) < 1e-12);

    const auto tiny = rectification_weights(aug, proto.row(0), 1e-9);
    for (const double v : tiny) CHECK(std::abs(v - 1.0 / 9.0) < 1e-8);
}

TEST_CASE("rectified prototypes: singleton and fixed point") {
    const auto support = rows({{0.6, 0.8}, {1, 0}});
    const auto basic = basic_prototypes(support, std::vector<std::uint32_t>{0, 1});
    const auto empty = select_pseudo(manual_scores(rows({{0.1, 0.9}})), 0);
    const auto p = rectified_prototypes(support, empty, rows({{0, 1}}), basic, 10.0);
    CHECK(p.kind == PrototypeKind::rectified);
    CHECK(p.vectors == support);

    // all augmented rows equal v: pseudo rows are renormalized copies of v.
    const auto v = rows({{0.6, 0.8}, {1, 0}});
    const auto sm = manual_scores(rows({{0.9, 0.1}, {0.8, 0.2}, {0.1, 0.9}}));
    const auto pseudo = select_pseudo(sm, 2);
    const auto query = rows({{1.2, 1.6}, {3.0, 4.0}, {5, 0}});
    for (const double eps : {0.5, 10.0, 80.0}) {
        const auto r = rectified_prototypes(v, pseudo, query, basic, eps);
        for (std::size_t d = 0; d < 2; ++d) {
            CHECK(r.vectors(0, d) == doctest::Approx(v(0, d)).epsilon(1e-12));
            CHECK(r.vectors(1, d) == doctest::Approx(v(1, d)).epsilon(1e-12));
        }
    }
}

TEST_CASE("rectified prototype lies in the convex hull of its rows") {
    const auto support = random_unit_rows(10, 6, 11);  // 5 classes x 2 shots
    const auto query = random_unit_rows(30, 6, 12);
    const auto basic = basic_prototypes(support, std::vector<std::uint32_t>{0, 1, 2, 3, 4});
    const auto sm = score(query, basic, 10.0);
    const auto pseudo = select_pseudo(sm, 4);
    std::vector<std::vector<double>> weights;
    const auto r = rectified_prototypes(support, pseudo, query, basic, 10.0, &weights);
    for (std::size_t n = 0; n < 5; ++n) {
        REQUIRE(weights[n].size() == 2 + pseudo.per_class[n].size());
        double sum = 0.0;
        std::vector<double> rebuilt(6, 0.0);
        for (std::size_t i = 0; i < weights[n].size(); ++i) {
            CHECK(weights[n][i] >= 0.0);
            sum += weights[n][i];
            const auto row = i < 2 ? support.row(n * 2 + i) : query.row(pseudo.per_class[n][i - 2].query);
            for (std::size_t d = 0; d < 6; ++d) rebuilt[d] += weights[n][i] * row[d];
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
        for (std::size_t d = 0; d < 6; ++d) CHECK(std::abs(rebuilt[d] - r.vectors(n, d)) < 1e-12);
    }
}

TEST_CASE("intra bias examples") {
    const auto pop = rows({{1, 0}, {0, 1}});
    CHECK(measure_intra_bias(pop, pop).norm == 0.0);
    const auto b = measure_intra_bias(pop, rows({{1, 0}}));
    CHECK(b.vector == std::vector<double>{-0.5, 0.5});
    CHECK(b.norm == doctest::Approx(std::sqrt(0.5)));
    CHECK_THROWS_AS(measure_intra_bias(pop, Matrix(0, 2)), Error);
}

TEST_CASE("intra bias shrinks as the subset grows") {
    const auto fs = testing::bench_set();
    const auto view = normalize(fs);
    const auto pop = view.class_rows(fs, 3);
    std::vector<std::size_t> all(pop.rows());
    std::iota(all.begin(), all.end(), std::size_t{0});
    double previous = 1e9;
    for (const std::size_t t : {1u, 2u, 4u, 8u, 16u}) {
        double total = 0.0;
        for (std::uint64_t trial = 0; trial < 400; ++trial) {
            auto rng = make_rng(7, t, trial);
            const auto pick = sample_without_replacement(all, t, rng);
            total += measure_intra_bias(pop, gather_rows(pop, pick)).norm;
        }
        const double avg = total / 400.0;
        CHECK(avg < previous);
        previous = avg;
    }
}

TEST_CASE("mode names") {
    for (const Mode m : {Mode::cspn, Mode::bdc, Mode::bdi, Mode::bd}) CHECK(parse_mode(to_string(m)) == m);
    CHECK_THROWS_AS(parse_mode("bdx"), Error);
    CHECK(uses_shift(Mode::bd));
    CHECK(uses_shift(Mode::bdc));
    CHECK_FALSE(uses_shift(Mode::bdi));
    CHECK(uses_rectification(Mode::bdi));
    CHECK_FALSE(uses_rectification(Mode::cspn));
}

TEST_CASE("cspn pipeline equals plain prototype prediction") {
    const auto fs = testing::bench_set();
    const auto view = normalize(fs);
    const auto f = gather_episode(view, sample_episode(fs, {5, 1, 15, 0, 1}, 4));
    PipelineOptions o;
    o.mode = Mode::cspn;
    const auto r = run_pipeline(f, o);
    const auto direct = predict(score(f.query, basic_prototypes(f.support, f.class_ids), 10.0));
    CHECK(r.predictions == direct);
    CHECK(r.diagnostics.xi_norm == 0.0);
    CHECK(r.diagnostics.pseudo_counts.empty());
}

TEST_CASE("bd with no shift and no pseudo-labels matches cspn") {
    // Queries are a permutation of the support rows, so the pooled means agree.
    const auto support = random_unit_rows(6, 8, 21);
    Matrix query(6, 8);
    for (std::size_t i = 0; i < 6; ++i) {
        const auto src = support.row(5 - i);
        std::copy(src.begin(), src.end(), query.row(i).begin());
    }
    EpisodeFeatures f{support, query, {0, 1, 2}, 6};
    PipelineOptions o;
    o.mode = Mode::bd;
    o.z = 0;
    const auto bd = run_pipeline(f, o);
    o.mode = Mode::cspn;
    const auto cspn = run_pipeline(f, o);
    CHECK(bd.diagnostics.xi_norm < 1e-15);
    for (std::size_t i = 0; i < 6; ++i) CHECK(bd.predictions[i].label == cspn.predictions[i].label);
}

TEST_CASE("pipeline modes use their stages") {
    const auto fs = testing::bench_set();
    const auto view = normalize(fs);
    const auto f = gather_episode(view, sample_episode(fs, {5, 1, 15, 0, 1}, 9));
    PipelineOptions o;
    o.z = 8;
    o.mode = Mode::bdc;
    const auto bdc = run_pipeline(f, o);
    CHECK(bdc.diagnostics.xi_norm > 0.0);
    CHECK(bdc.prototypes.kind == PrototypeKind::basic);

    o.mode = Mode::bdi;
    const auto bdi = run_pipeline(f, o);
    CHECK(bdi.diagnostics.xi_norm == 0.0);
    CHECK(bdi.prototypes.kind == PrototypeKind::rectified);
    REQUIRE(bdi.diagnostics.pseudo_counts.size() == 5);
    std::size_t total = 0;
    for (const auto c : bdi.diagnostics.pseudo_counts) {
        CHECK(c <= 8u);
        total += c;
    }
    CHECK(total > 0u);

    o.mode = Mode::bd;
    const auto bd = run_pipeline(f, o);
    CHECK(bd.diagnostics.xi_norm == doctest::Approx(bdc.diagnostics.xi_norm));
    CHECK(bd.prototypes.kind == PrototypeKind::rectified);
    o.intra_first = true;
    const auto bd_intra = run_pipeline(f, o);
    // intra-first rectifies exactly as bdi does, then scores shifted queries.
    CHECK(bd_intra.prototypes.vectors == bdi.prototypes.vectors);
    CHECK(bd_intra.diagnostics.xi_norm == bd.diagnostics.xi_norm);
}

TEST_CASE("pipeline is deterministic") {
    const auto fs = testing::bench_set();
    const auto view = normalize(fs);
    const auto f = gather_episode(view, sample_episode(fs, {5, 1, 15, 3, 1}, 2));
    PipelineOptions o;
    const auto a = run_pipeline(f, o);
    const auto b = run_pipeline(f, o);
    CHECK(a.predictions == b.predictions);
    CHECK(a.prototypes.vectors == b.prototypes.vectors);
    CHECK(a.predictions.size() == 75u);  // labeled queries only, no distractors gathered without injection
}

}
