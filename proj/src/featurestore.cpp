#include "protorect/featurestore.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "protorect/error.hpp"
#include "protorect/random.hpp"

namespace protorect {

namespace {

using detail::ByteReader;
using detail::ByteWriter;
using detail::read_file;
using detail::write_file;

constexpr std::array<char, 4> kMagic = {'P', 'R', 'F', 'S'};
constexpr std::uint32_t kVersion = 1;

FeatureSet load_binary(const std::filesystem::path& path) {
    ByteReader in(read_file(path));
    const auto magic = in.str(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) {
        throw Error(ErrorKind::format, "bad magic in '" + path.string() + "': not a PRFS feature file");
    }
    const auto version = in.u32("version");
    if (version != kVersion) {
        throw Error(ErrorKind::format, "unsupported feature file version " + std::to_string(version));
    }
    const auto count = in.u64("count");
    const auto dim = in.u32("dim");
    const auto num_classes = in.u32("num_classes");
    const auto flags = in.u8("flags");
    if (flags > 1) {
        throw Error(ErrorKind::format, "unknown flags byte " + std::to_string(flags));
    }
    if (dim == 0) {
        throw Error(ErrorKind::format, "dim must be positive");
    }
    // Guard the allocation below against a corrupt header.
    const std::uint64_t row_bytes = 4ULL * (static_cast<std::uint64_t>(dim) + 1);
    if (count > in.remaining() / row_bytes) {
        throw Error(ErrorKind::truncation,
                    "feature file declares " + std::to_string(count) + " rows of dim " + std::to_string(dim) +
                        " but the payload is only " + std::to_string(in.remaining()) + " bytes");
    }

    std::vector<std::uint32_t> labels(count);
    for (auto& l : labels) {
        l = in.u32("labels");
    }
    std::vector<float> values(count * dim);
    for (auto& v : values) {
        v = in.f32("values");
    }
    std::vector<std::string> names;
    if (flags == 1) {
        names.reserve(num_classes);
        for (std::uint32_t c = 0; c < num_classes; ++c) {
            const auto len = in.u32("class name length");
            names.push_back(in.str(len, "class name"));
        }
    }
    if (in.remaining() != 0) {
        throw Error(ErrorKind::format, std::to_string(in.remaining()) + " trailing bytes after payload");
    }
    for (const auto l : labels) {
        if (l >= num_classes) {
            throw Error(ErrorKind::data, "label " + std::to_string(l) + " outside declared num_classes " +
                                             std::to_string(num_classes));
        }
    }
    FeatureSet fs(dim, std::move(values), std::move(labels), std::move(names));
    if (fs.num_classes() != num_classes) {
        throw Error(ErrorKind::data, "declared num_classes " + std::to_string(num_classes) + " but labels use " +
                                         std::to_string(fs.num_classes()));
    }
    return fs;
}

void save_binary(const FeatureSet& fs, const std::filesystem::path& path) {
    ByteWriter out;
    out.bytes(kMagic.data(), kMagic.size());
    out.u32(kVersion);
    out.u64(fs.count());
    out.u32(static_cast<std::uint32_t>(fs.dim()));
    out.u32(static_cast<std::uint32_t>(fs.num_classes()));
    const bool has_names = !fs.class_names().empty();
    out.u8(has_names ? 1 : 0);
    for (const auto l : fs.labels()) {
        out.u32(l);
    }
    for (const auto v : fs.values()) {
        out.f32(v);
    }
    if (has_names) {
        for (const auto& name : fs.class_names()) {
            out.u32(static_cast<std::uint32_t>(name.size()));
            out.bytes(name.data(), name.size());
        }
    }
    write_file(path, out.buffer());
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

FeatureSet load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for reading");
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw Error(ErrorKind::format, "empty CSV file '" + path.string() + "'");
    }
    const auto header = split_commas(trim(line));
    if (header.size() < 2 || trim(header[0]) != "label") {
        throw Error(ErrorKind::format, "CSV header must be label,f0,...,f{D-1}");
    }
    const std::size_t dim = header.size() - 1;

    std::vector<float> values;
    std::vector<std::uint32_t> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto cells = split_commas(body);
        if (cells.size() != dim + 1) {
            throw Error(ErrorKind::format, "CSV line " + std::to_string(line_no) + " has " +
                                               std::to_string(cells.size()) + " cells, expected " +
                                               std::to_string(dim + 1));
        }
        const auto label_text = trim(cells[0]);
        std::uint32_t label = 0;
        // Accept "1" and "1.0" style labels; anything fractional is rejected.
        double label_value = 0.0;
        auto [lp, lec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label_value);
        if (lec != std::errc{} || lp != label_text.data() + label_text.size() || label_value < 0 ||
            label_value != std::floor(label_value) || label_value > 4294967295.0) {
            throw Error(ErrorKind::format, "CSV line " + std::to_string(line_no) + ": bad label '" +
                                               std::string(label_text) + "'");
        }
        label = static_cast<std::uint32_t>(label_value);
        labels.push_back(label);
        for (std::size_t d = 0; d < dim; ++d) {
            const auto cell = trim(cells[d + 1]);
            float v = 0.0f;
            auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc{} || p != cell.data() + cell.size()) {
                throw Error(ErrorKind::format, "CSV line " + std::to_string(line_no) + ": bad value '" +
                                                   std::string(cell) + "'");
            }
            values.push_back(v);
        }
    }
    return FeatureSet(dim, std::move(values), std::move(labels));
}

void save_csv(const FeatureSet& fs, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    }
    out << "label";
    for (std::size_t d = 0; d < fs.dim(); ++d) {
        out << ",f" << d;
    }
    out << '\n';
    std::array<char, 64> buf{};
    for (std::size_t i = 0; i < fs.count(); ++i) {
        out << fs.label(i);
        for (const float v : fs.row(i)) {
            // Shortest representation that parses back to the same float.
            auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
            out << ',' << std::string_view(buf.data(), static_cast<std::size_t>(p - buf.data()));
        }
        out << '\n';
    }
    if (!out) {
        throw Error(ErrorKind::io, "write to '" + path.string() + "' failed");
    }
}

}  // namespace

FeatureSet::FeatureSet(std::size_t dim, std::vector<float> values, std::vector<std::uint32_t> labels,
                       std::vector<std::string> class_names)
    : dim_(dim), values_(std::move(values)), labels_(std::move(labels)), class_names_(std::move(class_names)) {
    if (dim_ == 0) {
        throw Error(ErrorKind::data, "feature dim must be at least 1");
    }
    if (labels_.empty()) {
        throw Error(ErrorKind::data, "feature set must contain at least one row");
    }
    if (values_.size() != labels_.size() * dim_) {
        throw Error(ErrorKind::shape, "feature payload has " + std::to_string(values_.size()) + " values, expected " +
                                          std::to_string(labels_.size() * dim_));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            throw Error(ErrorKind::data, "non-finite value in row " + std::to_string(i / dim_) + ", component " +
                                             std::to_string(i % dim_));
        }
    }
    std::size_t num_classes = class_names_.size();
    if (num_classes == 0) {
        num_classes = static_cast<std::size_t>(*std::max_element(labels_.begin(), labels_.end())) + 1;
    }
    by_class_.assign(num_classes, {});
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] >= num_classes) {
            throw Error(ErrorKind::data, "label " + std::to_string(labels_[i]) + " in row " + std::to_string(i) +
                                             " is outside [0, " + std::to_string(num_classes) + ")");
        }
        by_class_[labels_[i]].push_back(i);
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (by_class_[c].empty()) {
            throw Error(ErrorKind::data, "class " + std::to_string(c) + " has no rows");
        }
    }
}

bool FeatureSet::operator==(const FeatureSet& other) const {
    if (dim_ != other.dim_ || labels_ != other.labels_ || class_names_ != other.class_names_ ||
        values_.size() != other.values_.size()) {
        return false;
    }
    // Bitwise, so -0.0f and 0.0f are distinguished.
    return std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(float)) == 0;
}

Matrix NormalizedView::class_rows(const FeatureSet& source, std::uint32_t c) const {
    const auto idx = source.rows_of_class(c);
    return gather_rows(rows_, idx);
}

NormalizedView normalize(const FeatureSet& fs) {
    NormalizedView view;
    view.rows_ = Matrix(fs.count(), fs.dim());
    view.labels_.assign(fs.labels().begin(), fs.labels().end());
    for (std::size_t i = 0; i < fs.count(); ++i) {
        const auto src = fs.row(i);
        auto dst = view.rows_.row(i);
        double sq = 0.0;
        for (std::size_t d = 0; d < fs.dim(); ++d) {
            dst[d] = static_cast<double>(src[d]);
            sq += dst[d] * dst[d];
        }
        const double n = std::sqrt(sq);
        if (n < kDegenerateNorm) {
            throw Error(ErrorKind::degenerate_vector, "row " + std::to_string(i) + " has near-zero norm");
        }
        for (auto& v : dst) {
            v /= n;
        }
    }
    return view;
}

void normalize_rows(Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto r = m.row(i);
        const double n = norm(r);
        if (n < kDegenerateNorm) {
            throw Error(ErrorKind::degenerate_vector, "row " + std::to_string(i) + " has near-zero norm");
        }
        for (auto& v : r) {
            v /= n;
        }
    }
}

FileFormat parse_file_format(std::string_view name) {
    if (name == "binary" || name == "bin") return FileFormat::binary;
    if (name == "csv") return FileFormat::csv;
    throw Error(ErrorKind::usage, "unknown feature format '" + std::string(name) + "'");
}

FileFormat format_for_path(const std::filesystem::path& path) {
    return path.extension() == ".csv" ? FileFormat::csv : FileFormat::binary;
}

FeatureSet load_features(const std::filesystem::path& path, FileFormat format) {
    return format == FileFormat::binary ? load_binary(path) : load_csv(path);
}

void save_features(const FeatureSet& fs, const std::filesystem::path& path, FileFormat format) {
    if (format == FileFormat::binary) {
        save_binary(fs, path);
    } else {
        save_csv(fs, path);
    }
}

MeanLayout parse_mean_layout(std::string_view name) {
    if (name == "sphere") return MeanLayout::sphere;
    if (name == "orthant") return MeanLayout::orthant;
    throw Error(ErrorKind::usage, "unknown mean layout '" + std::string(name) + "'");
}

FeatureSet synth(const SynthOptions& options) {
    if (options.num_classes < 2 || options.per_class < 2 || options.dim < 2) {
        throw Error(ErrorKind::usage, "synth requires num_classes >= 2, per_class >= 2, dim >= 2");
    }
    if (!(options.spread >= 0.0) || !std::isfinite(options.spread)) {
        throw Error(ErrorKind::usage, "synth spread must be finite and non-negative");
    }
    Rng rng(splitmix64(options.seed));
    std::normal_distribution<double> gauss(0.0, 1.0);

    Matrix means(options.num_classes, options.dim);
    for (std::size_t c = 0; c < options.num_classes; ++c) {
        auto mu = means.row(c);
        // Redraw on the (measure-zero) event of a zero or duplicate mean.
        while (true) {
            for (auto& v : mu) {
                v = gauss(rng);
                if (options.layout == MeanLayout::orthant) v = std::abs(v);
            }
            const double n = norm(mu);
            if (n < kDegenerateNorm) continue;
            for (auto& v : mu) v /= n;
            bool duplicate = false;
            for (std::size_t prev = 0; prev < c; ++prev) {
                const auto other = means.row(prev);
                duplicate = duplicate || std::equal(mu.begin(), mu.end(), other.begin());
            }
            if (!duplicate) break;
        }
    }

    std::vector<float> values;
    values.reserve(options.num_classes * options.per_class * options.dim);
    std::vector<std::uint32_t> labels;
    labels.reserve(options.num_classes * options.per_class);
    for (std::size_t c = 0; c < options.num_classes; ++c) {
        const auto mu = means.row(c);
        for (std::size_t i = 0; i < options.per_class; ++i) {
            for (std::size_t d = 0; d < options.dim; ++d) {
                values.push_back(static_cast<float>(mu[d] + options.spread * gauss(rng)));
            }
            labels.push_back(static_cast<std::uint32_t>(c));
        }
    }
    return FeatureSet(options.dim, std::move(values), std::move(labels));
}

}  // namespace protorect
