#ifndef PROTORECT_RECTIFY_HPP
#define PROTORECT_RECTIFY_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "protorect/episodes.hpp"
#include "protorect/featurestore.hpp"
#include "protorect/matrix.hpp"
#include "protorect/protonet.hpp"

namespace protorect {

/// Difference between the pooled support mean and the pooled query mean of
/// normalized features. Adding it to every query row aligns the two means.
struct ShiftTerm {
    std::vector<double> xi;
};

ShiftTerm shift_term(const Matrix& support, const Matrix& query);

/// query + xi row-wise. Rows are left unnormalized.
Matrix apply_shift(const Matrix& query, const ShiftTerm& shift);

struct PseudoLabel {
    std::size_t query = 0;
    double confidence = 0.0;

    bool operator==(const PseudoLabel&) const = default;
};

/// Per episode class, the selected query rows in non-increasing confidence.
/// A query appears under at most one class: its argmax.
struct PseudoLabelSet {
    std::vector<std::vector<PseudoLabel>> per_class;
    int z = 0;

    std::size_t total() const;
};

/// Assigns each query to its predicted class, then keeps the top `z` per class
/// by confidence (ties: lower query index first). Classes with fewer than `z`
/// predicted queries keep all of theirs.
PseudoLabelSet select_pseudo(const ScoreMatrix& sm, int z);

/// softmax over rows of epsilon * cos(row, basic_proto).
std::vector<double> rectification_weights(const Matrix& augmented, std::span<const double> basic_proto,
                                          double epsilon);

/// Weighted prototypes over each class's K support rows plus its pseudo-labeled
/// query rows. Pseudo rows are taken from `query` (possibly shifted) and
/// renormalized first. `weights_out`, when given, receives each class's weights.
PrototypeSet rectified_prototypes(const Matrix& support, const PseudoLabelSet& pseudo, const Matrix& query,
                                  const PrototypeSet& basic, double epsilon,
                                  std::vector<std::vector<double>>* weights_out = nullptr);

struct BiasMeasure {
    std::vector<double> vector;
    double norm = 0.0;
};

/// mean(population) - mean(subset) for one class.
BiasMeasure measure_intra_bias(const Matrix& population, const Matrix& subset);

/// mean(support) - mean(query); identical to shift_term.
BiasMeasure measure_cross_bias(const Matrix& support, const Matrix& query);

/// Ablation variants: basic prototypes only (cspn), with the cross-class shift
/// (bdc), with pseudo-label rectification (bdi), or both (bd).
enum class Mode { cspn, bdc, bdi, bd };

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view name);
bool uses_shift(Mode mode);
bool uses_rectification(Mode mode);

struct PipelineOptions {
    Mode mode = Mode::bd;
    int z = 8;
    double epsilon = 10.0;
    double tau = 10.0;
    /// In bd mode: select pseudo-labels and build rectified prototypes from the
    /// unshifted queries, then shift only for the final scoring.
    bool intra_first = false;
};

/// Normalized rows of one episode. `query` holds the labeled query rows first,
/// then any distractor rows.
struct EpisodeFeatures {
    Matrix support;
    Matrix query;
    std::vector<std::uint32_t> class_ids;
    std::size_t labeled_queries = 0;
};

EpisodeFeatures gather_episode(const NormalizedView& view, const Episode& ep);

struct EpisodeDiagnostics {
    double xi_norm = 0.0;
    std::vector<std::size_t> pseudo_counts;
    std::vector<double> weight_entropy;
};

struct PipelineResult {
    std::vector<Prediction> predictions;  // one per query row, distractors included
    ScoreMatrix scores;
    PrototypeSet basic;
    PrototypeSet prototypes;  // the prototypes used for the final prediction
    EpisodeDiagnostics diagnostics;
};

PipelineResult run_pipeline(const EpisodeFeatures& episode, const PipelineOptions& options);

}  // namespace protorect

#endif
