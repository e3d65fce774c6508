#include "protorect/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace protorect {

void Matrix::push_row(std::span<const double> values) {
    if (rows_ == 0 && cols_ == 0) {
        cols_ = values.size();
    }
    if (values.size() != cols_) {
        throw std::invalid_argument("Matrix::push_row: column count mismatch");
    }
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

std::vector<double> row_mean(const Matrix& m) {
    if (m.rows() == 0) {
        return {};
    }
    std::vector<double> mean(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto r = m.row(i);
        for (std::size_t d = 0; d < m.cols(); ++d) {
            mean[d] += r[d];
        }
    }
    const double n = static_cast<double>(m.rows());
    for (auto& v : mean) {
        v /= n;
    }
    return mean;
}

Matrix gather_rows(const Matrix& source, std::span<const std::size_t> indices) {
    Matrix out(indices.size(), source.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto src = source.row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

}  // namespace protorect
