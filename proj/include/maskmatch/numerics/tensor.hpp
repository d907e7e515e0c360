#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "maskmatch/error.hpp"

namespace maskmatch {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major tensor of rank 1 or 2. A rank-1 tensor behaves as a single
// row wherever a matrix is expected.
template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
        check_rank();
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_rank();
        if (shape_size(shape_) != data_.size()) {
            fail(ErrorKind::kDimension, "shape " + shape_string(shape_) + " does not match " +
                                            std::to_string(data_.size()) + " values");
        }
    }

    static Tensor vector(std::initializer_list<T> values) {
        return Tensor({values.size()}, std::vector<T>(values));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<T> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) fail(ErrorKind::kDimension, "ragged matrix literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return shape_.empty(); }
    std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
    std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }
    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    Tensor& operator+=(const Tensor& other) {
        require_same_shape(*this, other, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

    static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
        if (a.shape_ != b.shape_) {
            fail(ErrorKind::kDimension, std::string(op) + ": shapes " + shape_string(a.shape_) +
                                            " and " + shape_string(b.shape_) + " differ");
        }
    }

   private:
    void check_rank() const {
        if (shape_.empty() || shape_.size() > 2) {
            fail(ErrorKind::kDimension, "only rank-1 and rank-2 tensors are supported, got " +
                                            shape_string(shape_));
        }
    }

    Shape shape_;
    std::vector<T> data_;
    bool requires_grad_ = false;
};

namespace ops {

// Product of a[m x k] and b[k x n]. A rank-1 left operand yields a rank-1 result.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (b.rank() != 2 || a.cols() != b.rows()) {
        fail(ErrorKind::kDimension, "matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                                        shape_string(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor<T> out(a.rank() == 1 ? Shape{n} : Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
        T* o = out.data().data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a.data()[i * k + p];
            if (av == T{0}) continue;
            const T* brow = b.data().data() + p * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += av * brow[j];
        }
    }
    return out;
}

// a[m x k] times transpose(b[n x k]).
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.cols() != b.cols()) {
        fail(ErrorKind::kDimension, "matmul_nt: cannot multiply " + shape_string(a.shape()) +
                                        " by transpose of " + shape_string(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor<T> out(a.rank() == 1 ? Shape{n} : Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a.data().data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b.data().data() + j * k;
            T acc{0};
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            out.data()[i * n + j] = acc;
        }
    }
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    const std::size_t m = a.rows(), n = a.cols();
    Tensor<T> out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out(j, i) = a.data()[i * n + j];
    return out;
}

// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
    if (logits.size() == 0) fail(ErrorKind::kDimension, "softmax of an empty tensor");
    if (!logits.all_finite()) fail(ErrorKind::kNumericInput, "softmax input contains NaN or Inf");
    Tensor<T> out(logits.shape());
    const std::size_t n = logits.cols();
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto in = logits.row(r);
        auto o = out.row(r);
        const T mx = *std::max_element(in.begin(), in.end());
        T sum{0};
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < n; ++j) o[j] /= sum;
    }
    return out;
}

template <typename T>
T log_sum_exp(std::span<const T> values) {
    const T mx = *std::max_element(values.begin(), values.end());
    T sum{0};
    for (T v : values) sum += std::exp(v - mx);
    return mx + std::log(sum);
}

inline constexpr double kProbabilityFloor = 1e-12;

// -log p[q], with p[q] clamped from below.
template <typename T>
T cross_entropy(std::span<const T> probabilities, std::size_t gold) {
    if (gold >= probabilities.size()) {
        fail(ErrorKind::kIndex, "gold index " + std::to_string(gold) + " out of range for " +
                                    std::to_string(probabilities.size()) + " classes");
    }
    return -std::log(std::max(probabilities[gold], static_cast<T>(kProbabilityFloor)));
}

}  // namespace ops
}  // namespace maskmatch
