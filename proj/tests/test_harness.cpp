#include <cmath>
#include <cstdlib>
#include <random>
#include <sstream>

#include "doctest.h"
#include "protorect/error.hpp"
#include "protorect/harness.hpp"
#include "protorect/random.hpp"
#include "support.hpp"

using namespace protorect;
using testing::rows;

namespace {

ScoreMatrix probs(Matrix p) {
    ScoreMatrix sm;
    sm.cosines = p;
    sm.probabilities = std::move(p);
    return sm;
}

RunConfig small_config() {
    RunConfig cfg;
    cfg.features = "synthetic";
    cfg.spec = {5, 1, 15, 0, 11};
    cfg.modes = {Mode::cspn, Mode::bdc, Mode::bdi, Mode::bd};
    cfg.z_values = {0, 4};
    cfg.episodes = 40;
    return cfg;
}

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (const char c : s) n += c == '\n' ? 1 : 0;
    return n;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("accuracy counts matches") {
    const std::vector<std::uint32_t> truth(75, 2);
    CHECK(accuracy(truth, truth) == 1.0);
    std::vector<std::uint32_t> pred = truth;
    for (std::size_t i = 0; i < 15; ++i) pred[i] = 0;
    CHECK(accuracy(pred, truth) == doctest::Approx(0.8));
    const std::vector<std::uint32_t> shorter(74, 2);
    try {
        (void)accuracy(shorter, truth);
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::shape);
    }
}

TEST_CASE("random predictions sit at chance") {
    const auto fs = testing::bench_set();
    double total = 0.0;
    const int episodes = 400;
    for (int e = 0; e < episodes; ++e) {
        const auto ep = sample_episode(fs, {5, 1, 15, 0, 3}, static_cast<std::uint64_t>(e));
        auto rng = make_rng(99, 1, static_cast<std::uint64_t>(e));
        std::uniform_int_distribution<std::uint32_t> guess(0, 4);
        std::vector<std::uint32_t> pred(ep.query_truth.size());
        for (auto& p : pred) p = guess(rng);
        total += accuracy(pred, ep.query_truth);
    }
    // sd of the mean is about 0.4 / sqrt(75 * 400)
    CHECK(std::abs(total / episodes - 0.2) < 0.01);
}

TEST_CASE("confidence interval half width") {
    std::vector<double> samples(600);
    const double a = 0.12 * std::sqrt(599.0 / 600.0);
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = 0.7 + (i % 2 == 0 ? a : -a);
    CHECK(std::abs(ci95_half_width(samples) - 0.0096) < 1e-4);
    CHECK(ci95_half_width(samples) == doctest::Approx(1.96 * 0.12 / std::sqrt(600.0)).epsilon(1e-12));
    CHECK(ci95_half_width(std::vector<double>{0.5}) == 0.0);
    CHECK(mean(samples) == doctest::Approx(0.7));
}

TEST_CASE("sign test") {
    CHECK(sign_test_p(0, 0) == 1.0);
    CHECK(sign_test_p(5, 5) == 1.0);
    CHECK(sign_test_p(10, 0) == doctest::Approx(2.0 / 1024.0).epsilon(1e-12));
    CHECK(sign_test_p(3, 7) == doctest::Approx(0.34375).epsilon(1e-12));
    CHECK(sign_test_p(7, 3) == sign_test_p(3, 7));
    CHECK(sign_test_p(400, 200) < 1e-10);
}

TEST_CASE("mAP toy case") {
    // one class; ranked relevances (1, 0, 1) in the top 3, then a relevant row ranked fourth.
    const auto sm = probs(rows({{0.9}, {0.8}, {0.7}, {0.1}}));
    const QueryTruth truth{0u, std::nullopt, 0u, 0u};
    CHECK(mean_average_precision(sm, truth, 3) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("mAP: pure lists, empty lists, distractors") {
    const auto sm = probs(rows({{0.9, 0.1}, {0.8, 0.2}, {0.2, 0.8}, {0.1, 0.9}}));
    CHECK(mean_average_precision(sm, QueryTruth{0u, 0u, 1u, 1u}, 2) == 1.0);
    // class 1's top 2 holds no relevant row, class 0's is pure
    CHECK(mean_average_precision(sm, QueryTruth{0u, 0u, std::nullopt, std::nullopt}, 2) == doctest::Approx(0.5));
    CHECK_THROWS_AS(mean_average_precision(sm, QueryTruth{0u}, 2), Error);
    CHECK_THROWS_AS(mean_average_precision(sm, QueryTruth{0u, 0u, 1u, 1u}, 0), Error);
}

TEST_CASE("report format names") {
    CHECK(parse_report_format("tsv") == ReportFormat::tsv);
    CHECK(parse_report_format("json") == ReportFormat::json);
    CHECK(to_string(ReportFormat::json) == "json");
    CHECK_THROWS_AS(parse_report_format("xml"), Error);
}

TEST_CASE("config survives a JSON round trip") {
    auto cfg = small_config();
    cfg.intra_first = true;
    cfg.compute_map = true;
    cfg.spec.distractors = 2;
    cfg.format = ReportFormat::json;
    CHECK(run_config_from_json(to_json(cfg)) == cfg);
}

TEST_CASE("eval report structure") {
    const auto fs = testing::bench_set();
    const auto cfg = small_config();
    const auto report = run_eval(cfg, fs, 2);
    CHECK(report.config == cfg);
    REQUIRE(report.cells.size() == 8u);
    REQUIRE(report.paired.size() == 7u);
    for (const auto& c : report.cells) {
        CHECK(c.episode_accuracy.size() == 40u);
        CHECK(c.accuracy >= 0.0);
        CHECK(c.accuracy <= 1.0);
        CHECK_FALSE(c.map.has_value());
    }
    for (const auto& p : report.paired) {
        CHECK(p.baseline == 0u);
        CHECK(p.wins + p.losses + p.ties == 40);
        for (std::size_t e = 0; e < 40; ++e) {
            CHECK(p.deltas[e] == doctest::Approx(report.cells[p.cell].episode_accuracy[e] -
                                                 report.cells[0].episode_accuracy[e]));
        }
    }
    // cspn ignores Z, so both cspn cells agree episode by episode
    CHECK(report.cells[0].episode_accuracy == report.cells[1].episode_accuracy);

    const auto tsv = emit_report(report, ReportFormat::tsv);
    CHECK(count_lines(tsv) == 1 + 8);
    CHECK(tsv.rfind("mode\tways\tshots\tZ\tacc\tci95\tmap\n", 0) == 0);
    CHECK(tsv.find("\tNA\n") != std::string::npos);
}

TEST_CASE("JSON report re-emits byte-identically") {
    const auto fs = testing::bench_set();
    auto cfg = small_config();
    cfg.spec.distractors = 1;
    const auto text = emit_report(run_eval(cfg, fs, 3), ReportFormat::json);
    const auto parsed = nlohmann::json::parse(text);
    CHECK(parsed.dump(2) + "\n" == text);
    CHECK(parsed.at("cells").size() == 8u);
    CHECK(parsed.at("cells")[0].at("map").is_number());
    CHECK(run_config_from_json(parsed.at("config")) == cfg);
}

TEST_CASE("reports are identical across thread counts") {
    const auto fs = testing::bench_set();
    auto cfg = small_config();
    cfg.spec.distractors = 2;
    const auto one = emit_report(run_eval(cfg, fs, 1), ReportFormat::json);
    for (const unsigned t : {2u, 3u, 8u}) CHECK(emit_report(run_eval(cfg, fs, t), ReportFormat::json) == one);
}

TEST_CASE("distractors leave the accuracy denominator alone") {
    const auto fs = testing::bench_set();
    auto cfg = small_config();
    cfg.modes = {Mode::cspn};
    cfg.z_values = {0};
    const auto clean = run_eval(cfg, fs, 2);
    cfg.spec.distractors = 5;
    const auto noisy = run_eval(cfg, fs, 2);
    // cspn does not look at the queries, so distractors change nothing it predicts
    CHECK(clean.cells[0].episode_accuracy == noisy.cells[0].episode_accuracy);
    REQUIRE(noisy.cells[0].map.has_value());
    CHECK(*noisy.cells[0].map > 0.0);
}

TEST_CASE("a failing episode aborts with the lowest failing index") {
    // class 0 holds an antipodal pair; an episode using both as support has a zero prototype
    std::vector<float> v = {1, 0, -1, 0, 0, 1, 0.6f, 0.8f, 0.8f, 0.6f, 0.7f, 0.7f, 0.1f, 1, 0.2f, 1, 0.3f, 1};
    const FeatureSet fs(2, v, {0, 0, 0, 1, 1, 1, 2, 2, 2});
    RunConfig cfg;
    cfg.spec = {2, 2, 1, 0, 4};
    cfg.modes = {Mode::cspn};
    cfg.z_values = {0};
    cfg.episodes = 60;
    const auto view = normalize(fs);
    std::optional<std::uint64_t> first;
    for (std::uint64_t e = 0; e < 60 && !first; ++e) {
        const auto f = gather_episode(view, sample_episode(fs, cfg.spec, e));
        try {
            (void)basic_prototypes(f.support, f.class_ids);
        } catch (const Error&) {
            first = e;
        }
    }
    REQUIRE(first.has_value());
    for (const unsigned threads : {1u, 4u}) {
        try {
            (void)run_eval(cfg, fs, threads);
            FAIL("no error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::degenerate_vector);
            CHECK(std::string(e.what()).rfind("episode " + std::to_string(*first) + ":", 0) == 0);
        }
    }
}

TEST_CASE("run_eval rejects bad settings") {
    const auto fs = testing::bench_set();
    auto cfg = small_config();
    cfg.episodes = 0;
    CHECK_THROWS_AS(run_eval(cfg, fs, 1), Error);
    cfg = small_config();
    cfg.z_values = {-1};
    CHECK_THROWS_AS(run_eval(cfg, fs, 1), Error);
    cfg = small_config();
    cfg.spec.ways = 30;
    try {
        (void)run_eval(cfg, fs, 1);
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::capacity);
    }
}

TEST_CASE("Z sweep emits one row per Z") {
    const auto fs = testing::bench_set();
    auto cfg = small_config();
    cfg.modes = {Mode::bd};
    cfg.z_values = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    cfg.episodes = 10;
    const auto tsv = emit_report(run_eval(cfg, fs, 2), ReportFormat::tsv);
    CHECK(count_lines(tsv) == 11);
}

TEST_CASE("diagnostics aggregates") {
    const auto fs = testing::bench_set();
    auto cfg = small_config();
    cfg.z_values = {8};
    const auto r = run_eval(cfg, fs, 2);
    const auto& cspn = r.cells[0].diagnostics;
    const auto& bd = r.cells[3].diagnostics;
    CHECK(cspn.xi_norm == 0.0);
    CHECK(cspn.basic_bias == cspn.prototype_bias);
    CHECK(bd.xi_norm > 0.0);
    CHECK(bd.pseudo_count > 0.0);
    CHECK(bd.pseudo_count <= 8.0);
    CHECK(bd.weight_entropy > 0.0);
    CHECK(bd.basic_bias == cspn.basic_bias);
}

TEST_CASE("theory sweep") {
    const auto fs = testing::bench_set();
    TheoryConfig tc;
    tc.eval = small_config();
    tc.eval.episodes = 60;
    tc.k = 1;
    tc.z_max = 6;
    tc.empirical = true;
    const auto report = run_theory(tc, fs, fs, 2);
    REQUIRE(report.rows.size() == 7u);
    REQUIRE(report.anchors.size() == 2u);
    CHECK(report.anchors[0].t == 1);
    CHECK(report.anchors[1].t == 5);
    CHECK(report.anchors[1].accuracy > report.anchors[0].accuracy);
    CHECK(report.params.eta > 0.0);
    for (std::size_t i = 1; i < report.rows.size(); ++i) CHECK(report.rows[i].predicted > report.rows[i - 1].predicted);
    for (const auto& row : report.rows) CHECK(row.empirical.has_value());

    const auto tsv = emit_theory(report, ReportFormat::tsv);
    CHECK(tsv.find("Z\tpredicted_acc\tempirical_acc\tempirical_ci95\n") != std::string::npos);
    const auto json = nlohmann::json::parse(emit_theory(report, ReportFormat::json));
    CHECK(json.at("rows").size() == 7u);

    tc.empirical = false;
    const auto bare = run_theory(tc, fs, fs, 1);
    CHECK_FALSE(bare.rows[0].empirical.has_value());
    CHECK(emit_theory(bare, ReportFormat::tsv).find("\tNA\tNA\n") != std::string::npos);
}

TEST_CASE("thread count from the environment") {
    ::setenv("PROTORECT_THREADS", "3", 1);
    CHECK(default_thread_count() == 3u);
    ::setenv("PROTORECT_THREADS", "zero", 1);
    CHECK(default_thread_count() >= 1u);
    ::unsetenv("PROTORECT_THREADS");
    CHECK(default_thread_count() >= 1u);
}

}
