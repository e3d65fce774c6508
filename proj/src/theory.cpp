#include "protorect/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "protorect/error.hpp"
#include "protorect/random.hpp"

namespace protorect {

namespace {

constexpr std::uint64_t kMonteCarloStream = 0x4d4f4e54ULL;  // "MONT"

}  // namespace

TheoryParams estimate_params(const Matrix& class_rows) {
    const std::size_t n = class_rows.rows();
    if (n < 2) {
        throw Error(ErrorKind::capacity, "estimating class statistics needs at least 2 rows, got " + std::to_string(n));
    }
    const auto mean = row_mean(class_rows);
    std::vector<double> sq_dev(class_rows.cols(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = class_rows.row(i);
        for (std::size_t d = 0; d < r.size(); ++d) {
            const double dev = r[d] - mean[d];
            sq_dev[d] += dev * dev;
        }
    }
    TheoryParams p;
    p.dim = class_rows.cols();
    for (std::size_t d = 0; d < p.dim; ++d) {
        p.lambda += sq_dev[d] / static_cast<double>(n - 1);
        p.alpha += mean[d] * mean[d];
    }
    return p;
}

TheoryParams estimate_dataset_params(const FeatureSet& fs, const NormalizedView& view) {
    TheoryParams total;
    total.dim = fs.dim();
    for (std::uint32_t c = 0; c < fs.num_classes(); ++c) {
        const auto p = estimate_params(view.class_rows(fs, c));
        total.lambda += p.lambda;
        total.alpha += p.alpha;
    }
    total.lambda /= static_cast<double>(fs.num_classes());
    total.alpha /= static_cast<double>(fs.num_classes());
    return total;
}

double lower_bound(const TheoryParams& params, int t) {
    if (t < 1) {
        throw Error(ErrorKind::usage, "T must be at least 1");
    }
    if (!(params.alpha > 0.0)) {
        throw Error(ErrorKind::undefined_bound, "lower bound is undefined for alpha = 0");
    }
    if (params.lambda < 0.0) {
        throw Error(ErrorKind::data, "lambda must be non-negative");
    }
    return params.alpha / std::sqrt(params.lambda / static_cast<double>(t) + params.alpha);
}

double fit_eta(std::span<const AccuracyPoint> points, const TheoryParams& params) {
    if (points.empty()) {
        throw Error(ErrorKind::capacity, "fitting eta needs at least one accuracy point");
    }
    double num = 0.0;
    double den = 0.0;
    for (const auto& p : points) {
        if (!(p.accuracy > 0.0 && p.accuracy <= 1.0)) {
            throw Error(ErrorKind::data, "accuracy " + std::to_string(p.accuracy) + " outside (0, 1]");
        }
        const double b = lower_bound(params, p.t);
        num += p.accuracy * b;
        den += b * b;
    }
    return num / den;
}

std::vector<CurvePoint> accuracy_curve(const TheoryParams& params, int k, std::span<const int> z_values) {
    if (k < 1) {
        throw Error(ErrorKind::usage, "K must be at least 1");
    }
    std::vector<CurvePoint> curve;
    curve.reserve(z_values.size());
    for (const int z : z_values) {
        if (z < 0) {
            throw Error(ErrorKind::usage, "Z must be non-negative");
        }
        curve.push_back({z, params.eta * lower_bound(params, k + z)});
    }
    return curve;
}

McEstimate mc_expected_cosine(const Matrix& class_rows, int t, int trials, std::uint64_t seed) {
    if (t < 1) {
        throw Error(ErrorKind::usage, "T must be at least 1");
    }
    if (trials < 100) {
        throw Error(ErrorKind::usage, "Monte Carlo estimate needs at least 100 trials");
    }
    const std::size_t n = class_rows.rows();
    if (static_cast<std::size_t>(t) > n) {
        throw Error(ErrorKind::capacity, "T = " + std::to_string(t) + " exceeds the class size " + std::to_string(n));
    }
    // The mean cosine to all class rows is linear in the unit rows: it is the
    // unit prototype dotted with the mean unit row.
    Matrix unit = class_rows;
    normalize_rows(unit);
    const auto unit_mean = row_mean(unit);

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<double> values(static_cast<std::size_t>(trials));
    std::vector<double> proto(class_rows.cols());
    for (int trial = 0; trial < trials; ++trial) {
        auto rng = make_rng(seed, kMonteCarloStream, static_cast<std::uint64_t>(trial));
        const auto picked = sample_without_replacement(all, static_cast<std::size_t>(t), rng);
        std::fill(proto.begin(), proto.end(), 0.0);
        for (const auto i : picked) {
            const auto r = unit.row(i);
            for (std::size_t d = 0; d < proto.size(); ++d) proto[d] += r[d];
        }
        const double len = norm(proto);
        if (!(len >= kDegenerateNorm)) {
            throw Error(ErrorKind::degenerate_vector, "Monte Carlo trial " + std::to_string(trial) +
                                                          " produced a zero prototype");
        }
        values[static_cast<std::size_t>(trial)] = dot(unit_mean, proto) / len;
    }
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / trials;
    double ss = 0.0;
    for (const double v : values) ss += (v - mean) * (v - mean);
    McEstimate est;
    est.mean = mean;
    est.stderr_mean = std::sqrt(ss / (trials - 1)) / std::sqrt(static_cast<double>(trials));
    est.trials = trials;
    return est;
}

}  // namespace protorect
