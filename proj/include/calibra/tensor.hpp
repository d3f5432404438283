#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "calibra/error.hpp"

namespace calibra {

// Dense row-major rank-2 tensor. Shape is fixed at construction.
template <typename T>
class Tensor2 {
public:
    Tensor2() = default;
    Tensor2(int rows, int cols, T fill = T{}) : rows_(rows), cols_(cols) {
        if (rows < 0 || cols < 0) throw ValidationError("Tensor2: negative shape");
        data_.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), fill);
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * cols_ + x]; }
    const T& operator()(int y, int x) const {
        return data_[static_cast<std::size_t>(y) * cols_ + x];
    }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    const std::vector<T>& storage() const { return data_; }

    bool same_shape(const Tensor2& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    friend bool operator==(const Tensor2& a, const Tensor2& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<T> data_;
};

// Dense row-major rank-3 tensor with layout (channels, rows, cols).
template <typename T>
class Tensor3 {
public:
    Tensor3() = default;
    Tensor3(int channels, int rows, int cols, T fill = T{})
        : channels_(channels), rows_(rows), cols_(cols) {
        if (channels < 0 || rows < 0 || cols < 0) throw ValidationError("Tensor3: negative shape");
        data_.assign(static_cast<std::size_t>(channels) * rows * cols, fill);
    }

    int channels() const { return channels_; }
    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(rows_) * cols_; }
    bool empty() const { return data_.empty(); }

    T& operator()(int c, int y, int x) {
        return data_[(static_cast<std::size_t>(c) * rows_ + y) * cols_ + x];
    }
    const T& operator()(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * rows_ + y) * cols_ + x];
    }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    const std::vector<T>& storage() const { return data_; }

    bool same_shape(const Tensor3& other) const {
        return channels_ == other.channels_ && rows_ == other.rows_ && cols_ == other.cols_;
    }
    friend bool operator==(const Tensor3& a, const Tensor3& b) {
        return a.channels_ == b.channels_ && a.rows_ == b.rows_ && a.cols_ == b.cols_ &&
               a.data_ == b.data_;
    }

private:
    int channels_ = 0;
    int rows_ = 0;
    int cols_ = 0;
    std::vector<T> data_;
};

// Boolean pixel mask; nonzero means selected.
using Mask = Tensor2<std::uint8_t>;

inline std::size_t mask_count(const Mask& m) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < m.size(); ++i) n += (m[i] != 0);
    return n;
}

template <typename T>
bool all_finite(const std::vector<T>& v) {
    for (const T& x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

}  // namespace calibra
