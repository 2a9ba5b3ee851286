#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfd {

/// Dense row-major tensor of 64-bit floats. Rank 0..2 is what the models
/// need; higher ranks are not supported.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

    Tensor(std::vector<int64_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != checked_numel(shape_))
            throw std::invalid_argument("Tensor: shape/data size mismatch");
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor full(std::vector<int64_t> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape_); }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t i) const { return shape_.at(static_cast<size_t>(i)); }

    bool is_scalar() const { return numel() == 1; }
    double item() const {
        if (!is_scalar()) throw std::logic_error("Tensor::item on non-scalar");
        return data_[0];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * dim(1) + c)]; }
    double at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * dim(1) + c)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i)
            s += std::to_string(shape_[i]) + (i + 1 < shape_.size() ? "," : "");
        return s + "]";
    }

private:
    static int64_t checked_numel(const std::vector<int64_t>& shape) {
        if (shape.size() > 2) throw std::invalid_argument("Tensor: rank > 2 unsupported");
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

} // namespace mfd
