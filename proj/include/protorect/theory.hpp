#ifndef PROTORECT_THEORY_HPP
#define PROTORECT_THEORY_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "protorect/featurestore.hpp"
#include "protorect/matrix.hpp"

namespace protorect {

/// Summary statistics of normalized class features.
///   lambda = sum over dimensions of the per-dimension variance
///   alpha  = sum over dimensions of the squared per-dimension mean
/// eta scales the cosine bound into an accuracy estimate.
struct TheoryParams {
    double lambda = 0.0;
    double alpha = 0.0;
    double eta = 1.0;
    std::size_t dim = 0;
};

/// Per-dimension sample statistics of one class (unbiased variance). Needs at
/// least two rows.
TheoryParams estimate_params(const Matrix& class_rows);

/// Unweighted mean of the per-class estimates over every class of `fs`.
TheoryParams estimate_dataset_params(const FeatureSet& fs, const NormalizedView& view);

/// alpha / sqrt(lambda / t + alpha): lower bound on the expected cosine between
/// a t-sample mean prototype and a sample of its class. Throws undefined_bound
/// when alpha is zero.
double lower_bound(const TheoryParams& params, int t);

struct AccuracyPoint {
    int t = 1;
    double accuracy = 0.0;
};

/// Least-squares eta for accuracy ~ eta * lower_bound(t). One point solves exactly.
double fit_eta(std::span<const AccuracyPoint> points, const TheoryParams& params);

struct CurvePoint {
    int z = 0;
    double accuracy = 0.0;
};

/// eta * lower_bound(k + z) for every z.
std::vector<CurvePoint> accuracy_curve(const TheoryParams& params, int k, std::span<const int> z_values);

struct McEstimate {
    double mean = 0.0;
    double stderr_mean = 0.0;
    int trials = 0;
};

/// Monte Carlo estimate of the expected cosine between a prototype built from
/// `t` rows drawn without replacement and the rows of the class. Each trial
/// uses its own derived random stream.
McEstimate mc_expected_cosine(const Matrix& class_rows, int t, int trials, std::uint64_t seed);

}  // namespace protorect

#endif
