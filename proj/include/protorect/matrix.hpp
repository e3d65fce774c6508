#ifndef PROTORECT_MATRIX_HPP
#define PROTORECT_MATRIX_HPP

#include <cstddef>
#include <span>
#include <vector>

namespace protorect {

/// Dense row-major matrix of doubles. Rows are the unit of work everywhere in
/// this library (one row = one feature vector), so access is row-oriented.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return rows_ == 0; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    /// Appends a row; the first appended row fixes the column count of an
    /// empty matrix.
    void push_row(std::span<const double> values);

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// Mean of all rows; empty input yields an empty vector.
std::vector<double> row_mean(const Matrix& m);

/// Copies the listed rows of `source` into a new matrix, in order.
Matrix gather_rows(const Matrix& source, std::span<const std::size_t> indices);

}  // namespace protorect

#endif
