#ifndef PROTORECT_TRAINER_HPP
#define PROTORECT_TRAINER_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "protorect/featurestore.hpp"
#include "protorect/matrix.hpp"

namespace protorect {

inline constexpr double kMinTau = 1e-3;

struct TrainHyper {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int epochs = 60;
    int batch_size = 64;
    /// Compress the 10/20/40-of-60 learning-rate drops proportionally when
    /// fewer than 60 epochs are run.
    bool scale_schedule = true;
    std::uint64_t seed = 0;

    bool operator==(const TrainHyper&) const = default;
};

/// Linear feature adapter followed by a cosine classifier:
///   p(c | x) = softmax_c(tau * cos(adapterᵀ x, weights_c))
struct ClassifierParams {
    Matrix adapter;  // input_dim x embed_dim
    Matrix weights;  // classes x embed_dim
    double tau = 10.0;
    TrainHyper hyper;

    std::size_t input_dim() const noexcept { return adapter.rows(); }
    std::size_t embed_dim() const noexcept { return adapter.cols(); }
    std::size_t classes() const noexcept { return weights.rows(); }

    bool operator==(const ClassifierParams&) const = default;
};

/// Gaussian initialisation: adapter entries ~ N(0, 1/input_dim), weight rows
/// ~ N(0, 1). tau starts at 10.
ClassifierParams init_classifier(std::size_t input_dim, std::size_t embed_dim, std::size_t classes,
                                 const TrainHyper& hyper);

struct Batch {
    Matrix inputs;
    std::vector<std::uint32_t> labels;
};

Batch make_batch(const FeatureSet& fs, std::span<const std::size_t> rows);
Batch full_batch(const FeatureSet& fs);

/// Class probabilities for one raw input vector.
std::vector<double> forward(const ClassifierParams& params, std::span<const double> x);

/// Mean negative log-likelihood over the batch plus
/// (weight_decay / 2) * (|adapter|^2 + |weights|^2). An empty batch has a
/// zero data term.
double loss(const ClassifierParams& params, const Batch& batch);

struct Gradients {
    Matrix adapter;
    Matrix weights;
    double tau = 0.0;
};

/// Exact gradient of loss() with respect to adapter, weights and tau.
Gradients gradient(const ClassifierParams& params, const Batch& batch);

/// Epochs at which the learning rate is divided by 10.
std::vector<int> lr_milestones(const TrainHyper& hyper);
double learning_rate_at(const TrainHyper& hyper, int epoch);

struct TrainReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    int best_epoch = 0;  // 0 = initial parameters
    std::vector<double> epoch_loss;
};

/// Minibatch SGD with momentum over `fs`. Deterministic per hyper.seed. The
/// returned parameters are those with the lowest full training loss seen at
/// any epoch boundary, so the final loss never exceeds the initial one.
/// Throws training_failure if the loss becomes non-finite.
ClassifierParams train(const FeatureSet& fs, ClassifierParams params, TrainReport* report = nullptr);

/// Fraction of rows whose argmax class equals the label.
double training_accuracy(const ClassifierParams& params, const FeatureSet& fs);

/// Adapter embeddings adapterᵀ x of every row, labels kept.
FeatureSet project(const ClassifierParams& params, const FeatureSet& fs);

void save_checkpoint(const ClassifierParams& params, const std::filesystem::path& path);
ClassifierParams load_checkpoint(const std::filesystem::path& path);

}  // namespace protorect

#endif
