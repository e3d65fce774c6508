#include "protorect/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "protorect/error.hpp"

namespace protorect {

namespace {

struct CellOutcome {
    double accuracy = 0.0;
    double map = 0.0;
    double xi_norm = 0.0;
    double pseudo_count = 0.0;
    double weight_entropy = 0.0;
    double basic_bias = 0.0;
    double prototype_bias = 0.0;
};

struct EpisodeFailure {
    std::uint64_t index = std::numeric_limits<std::uint64_t>::max();
    ErrorKind kind = ErrorKind::data;
    std::string message;
};

double mean_bias(const PrototypeSet& protos, const std::vector<std::vector<double>>& class_means) {
    double total = 0.0;
    for (std::size_t n = 0; n < protos.size(); ++n) {
        const auto p = protos.vectors.row(n);
        const auto& mu = class_means[protos.class_ids[n]];
        double sq = 0.0;
        for (std::size_t d = 0; d < p.size(); ++d) sq += (p[d] - mu[d]) * (p[d] - mu[d]);
        total += std::sqrt(sq);
    }
    return total / static_cast<double>(protos.size());
}

double average(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<CellOutcome> evaluate_episode(const RunConfig& cfg, const FeatureSet& fs, const NormalizedView& view,
                                          const std::vector<std::vector<double>>& class_means,
                                          std::uint64_t index) {
    auto ep = sample_episode(fs, cfg.spec, index);
    ep = inject_distractors(fs, std::move(ep), cfg.spec);
    const auto features = gather_episode(view, ep);

    QueryTruth truth(features.query.rows());
    for (std::size_t q = 0; q < ep.query_truth.size(); ++q) truth[q] = ep.query_truth[q];

    std::vector<CellOutcome> out;
    for (const Mode mode : cfg.modes) {
        for (const int z : cfg.z_values) {
            PipelineOptions opts;
            opts.mode = mode;
            opts.z = z;
            opts.epsilon = cfg.epsilon;
            opts.tau = cfg.tau;
            opts.intra_first = cfg.intra_first;
            const auto result = run_pipeline(features, opts);

            std::vector<std::uint32_t> predicted(features.labeled_queries);
            for (std::size_t q = 0; q < predicted.size(); ++q) predicted[q] = result.predictions[q].label;

            CellOutcome o;
            o.accuracy = accuracy(predicted, ep.query_truth);
            if (cfg.map_enabled()) o.map = mean_average_precision(result.scores, truth, cfg.map_top);
            o.xi_norm = result.diagnostics.xi_norm;
            std::vector<double> counts(result.diagnostics.pseudo_counts.begin(), result.diagnostics.pseudo_counts.end());
            o.pseudo_count = average(counts);
            o.weight_entropy = average(result.diagnostics.weight_entropy);
            o.basic_bias = mean_bias(result.basic, class_means);
            o.prototype_bias = mean_bias(result.prototypes, class_means);
            out.push_back(o);
        }
    }
    return out;
}

std::string fixed(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

ReportFormat parse_report_format(std::string_view name) {
    if (name == "tsv") return ReportFormat::tsv;
    if (name == "json") return ReportFormat::json;
    throw Error(ErrorKind::usage, "unknown report format '" + std::string(name) + "' (expected tsv|json)");
}

std::string_view to_string(ReportFormat format) { return format == ReportFormat::tsv ? "tsv" : "json"; }

nlohmann::json to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["features"] = cfg.features;
    j["ways"] = cfg.spec.ways;
    j["shots"] = cfg.spec.shots;
    j["queries"] = cfg.spec.queries;
    j["distractors"] = cfg.spec.distractors;
    j["seed"] = cfg.spec.seed;
    auto modes = nlohmann::json::array();
    for (const Mode m : cfg.modes) modes.push_back(std::string(to_string(m)));
    j["modes"] = modes;
    j["z"] = cfg.z_values;
    j["epsilon"] = cfg.epsilon;
    j["tau"] = cfg.tau;
    j["episodes"] = cfg.episodes;
    j["format"] = std::string(to_string(cfg.format));
    j["intra_first"] = cfg.intra_first;
    j["compute_map"] = cfg.compute_map;
    j["map_top"] = cfg.map_top;
    return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    cfg.features = j.at("features").get<std::string>();
    cfg.spec.ways = j.at("ways").get<int>();
    cfg.spec.shots = j.at("shots").get<int>();
    cfg.spec.queries = j.at("queries").get<int>();
    cfg.spec.distractors = j.at("distractors").get<int>();
    cfg.spec.seed = j.at("seed").get<std::uint64_t>();
    cfg.modes.clear();
    for (const auto& m : j.at("modes")) cfg.modes.push_back(parse_mode(m.get<std::string>()));
    cfg.z_values = j.at("z").get<std::vector<int>>();
    cfg.epsilon = j.at("epsilon").get<double>();
    cfg.tau = j.at("tau").get<double>();
    cfg.episodes = j.at("episodes").get<int>();
    cfg.format = parse_report_format(j.at("format").get<std::string>());
    cfg.intra_first = j.at("intra_first").get<bool>();
    cfg.compute_map = j.at("compute_map").get<bool>();
    cfg.map_top = j.at("map_top").get<int>();
    return cfg;
}

double accuracy(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth) {
    if (predicted.size() != truth.size()) {
        throw Error(ErrorKind::shape, "accuracy over " + std::to_string(predicted.size()) + " predictions and " +
                                          std::to_string(truth.size()) + " truth labels");
    }
    if (truth.empty()) {
        throw Error(ErrorKind::shape, "accuracy of an empty query set");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(truth.size());
}

double mean(std::span<const double> samples) {
    if (samples.empty()) return 0.0;
    return std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
}

double ci95_half_width(std::span<const double> samples) {
    const std::size_t n = samples.size();
    if (n < 2) return 0.0;
    const double m = mean(samples);
    double ss = 0.0;
    for (const double v : samples) ss += (v - m) * (v - m);
    return 1.96 * std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

double sign_test_p(int wins, int losses) {
    const int n = wins + losses;
    if (n == 0) return 1.0;
    const int k = std::min(wins, losses);
    // Sum of the lower tail in log space, then doubled.
    const double log_half_n = n * std::log(0.5);
    double tail = 0.0;
    for (int i = 0; i <= k; ++i) {
        const double log_choose = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0);
        tail += std::exp(log_choose + log_half_n);
    }
    return std::min(1.0, 2.0 * tail);
}

double mean_average_precision(const ScoreMatrix& sm, const QueryTruth& truth, int top) {
    if (top < 1) {
        throw Error(ErrorKind::usage, "mAP needs top >= 1");
    }
    if (truth.size() != sm.queries()) {
        throw Error(ErrorKind::shape, "mAP truth has " + std::to_string(truth.size()) + " rows, scores " +
                                          std::to_string(sm.queries()));
    }
    const std::size_t n_classes = sm.classes();
    if (n_classes == 0) return 0.0;
    std::vector<std::size_t> order(sm.queries());
    double total = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return sm.probabilities(a, c) > sm.probabilities(b, c);
        });
        const std::size_t depth = std::min(order.size(), static_cast<std::size_t>(top));
        double precision_sum = 0.0;
        std::size_t hits = 0;
        for (std::size_t r = 0; r < depth; ++r) {
            const auto& t = truth[order[r]];
            if (t && *t == c) {
                ++hits;
                precision_sum += static_cast<double>(hits) / static_cast<double>(r + 1);
            }
        }
        total += hits == 0 ? 0.0 : precision_sum / static_cast<double>(hits);
    }
    return total / static_cast<double>(n_classes);
}

unsigned default_thread_count() {
    if (const char* env = std::getenv("PROTORECT_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

RunReport run_eval(const RunConfig& cfg, const FeatureSet& fs, unsigned threads) {
    if (cfg.episodes < 1) {
        throw Error(ErrorKind::usage, "episodes must be at least 1");
    }
    if (cfg.modes.empty() || cfg.z_values.empty()) {
        throw Error(ErrorKind::usage, "at least one mode and one Z value are required");
    }
    for (const int z : cfg.z_values) {
        if (z < 0) throw Error(ErrorKind::usage, "Z must be non-negative");
    }
    if (!(cfg.epsilon > 0.0) || !(cfg.tau > 0.0)) {
        throw Error(ErrorKind::usage, "epsilon and tau must be positive");
    }
    validate_spec(fs, cfg.spec);

    const auto view = normalize(fs);
    std::vector<std::vector<double>> class_means(fs.num_classes());
    for (std::uint32_t c = 0; c < fs.num_classes(); ++c) class_means[c] = row_mean(view.class_rows(fs, c));

    const auto n_episodes = static_cast<std::size_t>(cfg.episodes);
    std::vector<std::vector<CellOutcome>> outcomes(n_episodes);
    std::atomic<std::size_t> next{0};
    std::mutex failure_mutex;
    EpisodeFailure failure;

    auto worker = [&] {
        while (true) {
            const std::size_t e = next.fetch_add(1);
            if (e >= n_episodes) return;
            try {
                outcomes[e] = evaluate_episode(cfg, fs, view, class_means, e);
            } catch (const Error& err) {
                std::lock_guard lock(failure_mutex);
                if (e < failure.index) failure = {e, err.kind(), err.what()};
            }
        }
    };
    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n_episodes)));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (unsigned t = 0; t < workers; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure.index != std::numeric_limits<std::uint64_t>::max()) {
        throw Error(failure.kind, "episode " + std::to_string(failure.index) + ": " + failure.message);
    }

    RunReport report;
    report.config = cfg;
    std::size_t cell_index = 0;
    for (const Mode mode : cfg.modes) {
        for (const int z : cfg.z_values) {
            CellReport cell;
            cell.mode = mode;
            cell.z = z;
            std::vector<double> xi, pseudo, entropy, basic_bias, proto_bias;
            for (std::size_t e = 0; e < n_episodes; ++e) {
                const auto& o = outcomes[e][cell_index];
                cell.episode_accuracy.push_back(o.accuracy);
                if (cfg.map_enabled()) cell.episode_map.push_back(o.map);
                xi.push_back(o.xi_norm);
                pseudo.push_back(o.pseudo_count);
                entropy.push_back(o.weight_entropy);
                basic_bias.push_back(o.basic_bias);
                proto_bias.push_back(o.prototype_bias);
            }
            cell.accuracy = mean(cell.episode_accuracy);
            cell.ci95 = ci95_half_width(cell.episode_accuracy);
            if (cfg.map_enabled()) cell.map = mean(cell.episode_map);
            cell.diagnostics = {mean(xi), mean(pseudo), mean(entropy), mean(basic_bias), mean(proto_bias)};
            report.cells.push_back(std::move(cell));
            ++cell_index;
        }
    }

    for (std::size_t c = 1; c < report.cells.size(); ++c) {
        PairedComparison cmp;
        cmp.baseline = 0;
        cmp.cell = c;
        for (std::size_t e = 0; e < n_episodes; ++e) {
            const double d = report.cells[c].episode_accuracy[e] - report.cells[0].episode_accuracy[e];
            cmp.deltas.push_back(d);
            if (d > 0) ++cmp.wins;
            else if (d < 0) ++cmp.losses;
            else ++cmp.ties;
        }
        cmp.mean_delta = mean(cmp.deltas);
        cmp.ci95 = ci95_half_width(cmp.deltas);
        cmp.sign_test_p = sign_test_p(cmp.wins, cmp.losses);
        report.paired.push_back(std::move(cmp));
    }
    return report;
}

nlohmann::json to_json(const RunReport& report) {
    nlohmann::json j;
    j["config"] = to_json(report.config);
    j["map_definition"] = std::string(kMapDefinition);
    auto cells = nlohmann::json::array();
    for (const auto& c : report.cells) {
        nlohmann::json cj;
        cj["mode"] = std::string(to_string(c.mode));
        cj["z"] = c.z;
        cj["ways"] = report.config.spec.ways;
        cj["shots"] = report.config.spec.shots;
        cj["accuracy"] = c.accuracy;
        cj["ci95"] = c.ci95;
        cj["map"] = c.map ? nlohmann::json(*c.map) : nlohmann::json(nullptr);
        cj["episode_accuracy"] = c.episode_accuracy;
        cj["episode_map"] = c.episode_map;
        cj["diagnostics"] = {
            {"xi_norm", c.diagnostics.xi_norm},
            {"pseudo_count", c.diagnostics.pseudo_count},
            {"weight_entropy", c.diagnostics.weight_entropy},
            {"basic_bias", c.diagnostics.basic_bias},
            {"prototype_bias", c.diagnostics.prototype_bias},
        };
        cells.push_back(std::move(cj));
    }
    j["cells"] = cells;
    auto paired = nlohmann::json::array();
    for (const auto& p : report.paired) {
        const auto& base = report.cells[p.baseline];
        const auto& other = report.cells[p.cell];
        paired.push_back({
            {"baseline", {{"mode", std::string(to_string(base.mode))}, {"z", base.z}}},
            {"cell", {{"mode", std::string(to_string(other.mode))}, {"z", other.z}}},
            {"mean_delta", p.mean_delta},
            {"ci95", p.ci95},
            {"wins", p.wins},
            {"losses", p.losses},
            {"ties", p.ties},
            {"sign_test_p", p.sign_test_p},
            {"deltas", p.deltas},
        });
    }
    j["paired"] = paired;
    return j;
}

std::string emit_report(const RunReport& report, ReportFormat format) {
    if (format == ReportFormat::json) {
        return to_json(report).dump(2) + "\n";
    }
    std::ostringstream out;
    out << "mode\tways\tshots\tZ\tacc\tci95\tmap\n";
    for (const auto& c : report.cells) {
        out << to_string(c.mode) << '\t' << report.config.spec.ways << '\t' << report.config.spec.shots << '\t' << c.z
            << '\t' << fixed(c.accuracy) << '\t' << fixed(c.ci95) << '\t' << (c.map ? fixed(*c.map) : "NA") << '\n';
    }
    return out.str();
}

TheoryReport run_theory(const TheoryConfig& cfg, const FeatureSet& episodes_source, const FeatureSet& param_source,
                        unsigned threads) {
    if (cfg.k < 1 || cfg.z_max < 0) {
        throw Error(ErrorKind::usage, "theory needs K >= 1 and z_max >= 0");
    }
    if (cfg.anchor_shots.empty()) {
        throw Error(ErrorKind::usage, "theory needs at least one anchor shot count");
    }
    TheoryReport report;
    report.k = cfg.k;
    report.params = estimate_dataset_params(param_source, normalize(param_source));

    for (const int shots : cfg.anchor_shots) {
        RunConfig anchor = cfg.eval;
        anchor.spec.shots = shots;
        anchor.spec.distractors = 0;
        anchor.modes = {Mode::cspn};
        anchor.z_values = {0};
        anchor.compute_map = false;
        const auto r = run_eval(anchor, episodes_source, threads);
        report.anchors.push_back({shots, r.cells.front().accuracy});
    }
    report.params.eta = fit_eta(report.anchors, report.params);

    std::vector<int> zs(static_cast<std::size_t>(cfg.z_max) + 1);
    std::iota(zs.begin(), zs.end(), 0);
    const auto curve = accuracy_curve(report.params, cfg.k, zs);
    for (const auto& p : curve) report.rows.push_back({p.z, p.accuracy, std::nullopt, std::nullopt});

    if (cfg.empirical) {
        RunConfig sweep = cfg.eval;
        sweep.spec.shots = cfg.k;
        sweep.spec.distractors = 0;
        sweep.modes = {cfg.empirical_mode};
        sweep.z_values = zs;
        sweep.compute_map = false;
        const auto r = run_eval(sweep, episodes_source, threads);
        for (std::size_t i = 0; i < zs.size(); ++i) {
            report.rows[i].empirical = r.cells[i].accuracy;
            report.rows[i].empirical_ci95 = r.cells[i].ci95;
        }
    }
    return report;
}

std::string emit_theory(const TheoryReport& report, ReportFormat format) {
    if (format == ReportFormat::json) {
        nlohmann::json j;
        j["lambda"] = report.params.lambda;
        j["alpha"] = report.params.alpha;
        j["eta"] = report.params.eta;
        j["dim"] = report.params.dim;
        j["k"] = report.k;
        auto anchors = nlohmann::json::array();
        for (const auto& a : report.anchors) anchors.push_back({{"t", a.t}, {"accuracy", a.accuracy}});
        j["anchors"] = anchors;
        auto rows = nlohmann::json::array();
        for (const auto& r : report.rows) {
            rows.push_back({
                {"z", r.z},
                {"predicted_acc", r.predicted},
                {"empirical_acc", r.empirical ? nlohmann::json(*r.empirical) : nlohmann::json(nullptr)},
                {"empirical_ci95", r.empirical_ci95 ? nlohmann::json(*r.empirical_ci95) : nlohmann::json(nullptr)},
            });
        }
        j["rows"] = rows;
        return j.dump(2) + "\n";
    }
    std::ostringstream out;
    out << "# lambda=" << fixed(report.params.lambda) << " alpha=" << fixed(report.params.alpha)
        << " eta=" << fixed(report.params.eta) << " K=" << report.k << '\n';
    out << "Z\tpredicted_acc\tempirical_acc\tempirical_ci95\n";
    for (const auto& r : report.rows) {
        out << r.z << '\t' << fixed(r.predicted) << '\t' << (r.empirical ? fixed(*r.empirical) : "NA") << '\t'
            << (r.empirical_ci95 ? fixed(*r.empirical_ci95) : "NA") << '\n';
    }
    return out.str();
}

}  // namespace protorect
