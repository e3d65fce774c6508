#ifndef PROTORECT_FEATURESTORE_HPP
#define PROTORECT_FEATURESTORE_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "protorect/matrix.hpp"

namespace protorect {

/// Rows with an L2 norm below this are rejected wherever a direction is needed.
inline constexpr double kDegenerateNorm = 1e-12;

/// Immutable table of raw (unnormalized) embedding vectors with class labels.
///
/// Values are stored as 32-bit floats, the precision of the on-disk format, so
/// a save/load cycle is bit-exact. All arithmetic downstream is done in double.
class FeatureSet {
public:
    /// Validates every invariant: dim >= 1, values.size() == count * dim, all
    /// values finite, labels dense in [0, num_classes) with every class used.
    /// `class_names`, when non-empty, fixes num_classes to its length.
    FeatureSet(std::size_t dim, std::vector<float> values, std::vector<std::uint32_t> labels,
               std::vector<std::string> class_names = {});

    std::size_t dim() const noexcept { return dim_; }
    std::size_t count() const noexcept { return labels_.size(); }
    std::size_t num_classes() const noexcept { return by_class_.size(); }

    std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
    std::span<const float> values() const noexcept { return values_; }
    std::span<const std::uint32_t> labels() const noexcept { return labels_; }
    std::uint32_t label(std::size_t i) const { return labels_[i]; }
    const std::vector<std::string>& class_names() const noexcept { return class_names_; }

    /// Row indices belonging to class `c`, ascending.
    std::span<const std::size_t> rows_of_class(std::uint32_t c) const { return by_class_.at(c); }

    bool operator==(const FeatureSet& other) const;

private:
    std::size_t dim_;
    std::vector<float> values_;
    std::vector<std::uint32_t> labels_;
    std::vector<std::string> class_names_;
    std::vector<std::vector<std::size_t>> by_class_;
};

/// Row-wise L2-normalized copy of a FeatureSet. Labels are shared by index.
class NormalizedView {
public:
    std::size_t dim() const noexcept { return rows_.cols(); }
    std::size_t count() const noexcept { return rows_.rows(); }
    std::span<const double> row(std::size_t i) const { return rows_.row(i); }
    std::uint32_t label(std::size_t i) const { return labels_[i]; }
    const Matrix& matrix() const noexcept { return rows_; }

    /// Normalized rows of one class, in FeatureSet order.
    Matrix class_rows(const FeatureSet& source, std::uint32_t c) const;

private:
    friend NormalizedView normalize(const FeatureSet& fs);
    Matrix rows_;
    std::vector<std::uint32_t> labels_;
};

/// Throws ErrorKind::degenerate_vector naming the first row whose norm is
/// below kDegenerateNorm.
NormalizedView normalize(const FeatureSet& fs);

/// Normalizes each row of `m` in place; same error contract as normalize().
void normalize_rows(Matrix& m);

enum class FileFormat { binary, csv };

FileFormat parse_file_format(std::string_view name);

FeatureSet load_features(const std::filesystem::path& path, FileFormat format);
void save_features(const FeatureSet& fs, const std::filesystem::path& path, FileFormat format);

/// Infers the format from the extension: ".csv" is CSV, anything else binary.
FileFormat format_for_path(const std::filesystem::path& path);

/// Where synthetic class means are drawn from. `sphere` samples uniformly on
/// the unit sphere; `orthant` restricts to its non-negative orthant, which
/// gives classes a shared mean component the way rectified backbone features
/// do.
enum class MeanLayout { sphere, orthant };

MeanLayout parse_mean_layout(std::string_view name);

struct SynthOptions {
    std::size_t num_classes = 20;
    std::size_t per_class = 100;
    std::size_t dim = 64;
    double spread = 0.145;
    std::uint64_t seed = 0;
    MeanLayout layout = MeanLayout::sphere;
};

/// Isotropic Gaussian classes around unit-norm means: row = mean_c + spread * N(0, I).
/// Deterministic per options; rows are grouped by class.
FeatureSet synth(const SynthOptions& options);

}  // namespace protorect

#endif
