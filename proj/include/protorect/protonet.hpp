#ifndef PROTORECT_PROTONET_HPP
#define PROTORECT_PROTONET_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "protorect/matrix.hpp"

namespace protorect {

enum class PrototypeKind { basic, rectified };

/// One prototype row per episode class. Prototypes are plain means or convex
/// combinations of unit vectors and are not renormalized.
struct PrototypeSet {
    std::vector<std::uint32_t> class_ids;
    Matrix vectors;
    PrototypeKind kind = PrototypeKind::basic;

    std::size_t size() const noexcept { return vectors.rows(); }

    /// Throws degenerate_vector for a near-zero prototype and shape for N < 2
    /// or a class_ids/vectors size mismatch.
    void validate() const;
};

/// Cosine similarity clamped to [-1, 1]. Throws degenerate_vector if either
/// input has near-zero norm.
double cosine(std::span<const double> a, std::span<const double> b);

/// softmax(scale * logits), max-subtracted for stability.
std::vector<double> softmax(std::span<const double> logits, double scale = 1.0);

/// Mean of each class's support rows. `support` holds N*K normalized rows
/// grouped by class (K = support.rows() / class_ids.size()).
PrototypeSet basic_prototypes(const Matrix& support, std::span<const std::uint32_t> class_ids);

/// Query-by-class cosines plus the softmax(tau * cosine) companion.
struct ScoreMatrix {
    Matrix cosines;
    Matrix probabilities;
    double tau = 10.0;

    std::size_t queries() const noexcept { return cosines.rows(); }
    std::size_t classes() const noexcept { return cosines.cols(); }
};

ScoreMatrix score(const Matrix& queries, const PrototypeSet& protos, double tau);

struct Prediction {
    std::uint32_t label = 0;  // episode-class position
    double confidence = 0.0;

    bool operator==(const Prediction&) const = default;
};

/// Argmax cosine per row, lowest class index on ties; confidence is the
/// softmax probability of the chosen class.
std::vector<Prediction> predict(const ScoreMatrix& sm);

}  // namespace protorect

#endif
