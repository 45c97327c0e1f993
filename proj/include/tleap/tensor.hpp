#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tleap::nn {

/// Dense row-major tensor. The network code uses the canonical 5-D layout
/// [batch, channels, time, height, width]; lower-rank views just use fewer
/// dims. Scalar is float for training and double for gradient checks.
template <typename Scalar>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
        data_.assign(size_t(numel()), Scalar(0));
    }

    Tensor(std::initializer_list<int64_t> shape) : Tensor(std::vector<int64_t>(shape)) {}

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape_) n *= d;
        return shape_.empty() ? 0 : n;
    }

    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }

    Scalar& operator[](size_t i) { return data_[i]; }
    const Scalar& operator[](size_t i) const { return data_[i]; }

    void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(Scalar(0)); }

    /// Reinterprets the buffer with a new shape of equal element count.
    void reshape(std::vector<int64_t> shape) {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        if (n != numel())
            throw std::invalid_argument("Tensor::reshape: element count mismatch");
        shape_ = std::move(shape);
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape_[i]);
        return s + "]";
    }

private:
    std::vector<int64_t> shape_;
    std::vector<Scalar> data_;
};

}  // namespace tleap::nn
