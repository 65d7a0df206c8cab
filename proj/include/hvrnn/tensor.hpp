#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hvrnn/errors.hpp"

namespace hvrnn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Dense n-d array, contiguous row-major. Image tensors are (batch, channels,
// height, width).
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<std::size_t>(shape_numel(shape_)), T(0));
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
            throw ContractViolation("tensor data size " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static Tensor scalar(T v) { return full({1}, v); }

    static Tensor from(Shape shape, std::initializer_list<T> vals) {
        return Tensor(std::move(shape), std::vector<T>(vals));
    }

    const Shape& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // 4-d accessor for BCHW tensors.
    T& at4(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) {
        return data_[static_cast<std::size_t>(((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    const T& at4(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return data_[static_cast<std::size_t>(((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw ContractViolation("reshape " + shape_str(shape_) + " -> " + shape_str(s) +
                                    " changes element count");
        Tensor t;
        t.shape_ = std::move(s);
        t.data_ = data_;
        return t;
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> d(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(d));
    }

private:
    void validate_shape() const {
        if (shape_.empty()) throw ContractViolation("tensor shape must have at least one dimension");
        for (auto d : shape_)
            if (d <= 0) throw ContractViolation("tensor dimensions must be positive, got " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
};

}  // namespace hvrnn
