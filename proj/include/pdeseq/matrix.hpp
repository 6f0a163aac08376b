#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pdeseq {

/// Dense column-major matrix. Columns are time slices throughout this
/// project, so a slice is one contiguous span.
template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t i, std::size_t j) { return data_[j * rows_ + i]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data_[j * rows_ + i]; }

    std::span<T> col(std::size_t j) { return {data_.data() + j * rows_, rows_}; }
    std::span<const T> col(std::size_t j) const { return {data_.data() + j * rows_, rows_}; }

    void set_col(std::size_t j, std::span<const T> values) {
        auto dst = col(j);
        for (std::size_t i = 0; i < rows_; ++i) dst[i] = values[i];
    }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

} // namespace pdeseq
