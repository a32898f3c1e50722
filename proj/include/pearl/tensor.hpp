#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pearl {

// Dense row-major float64 tensor. Feature maps are (C,H,W), convolution
// weights (O,I/g,K,K), transposed-convolution weights (I,O,K,K).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}
    Tensor(std::initializer_list<int> shape, double fill = 0.0)
        : Tensor(std::vector<int>(shape), fill) {}

    static Tensor from_data(std::vector<int> shape, std::vector<double> data) {
        Tensor t;
        if (checked_size(shape) != data.size())
            throw std::invalid_argument("Tensor::from_data: shape/data size mismatch");
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    // (C,H,W) accessors for the common feature-map case.
    double& at(int c, int h, int w) { return data_[(size_t(c) * shape_[1] + h) * shape_[2] + w]; }
    double at(int c, int h, int w) const { return data_[(size_t(c) * shape_[1] + h) * shape_[2] + w]; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(0.0); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape_.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape_[i]);
        return s + ")";
    }

private:
    static size_t checked_size(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
            n *= size_t(d);
        }
        return shape.empty() ? 0 : n;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

inline void axpy(double a, const Tensor& x, Tensor& y) {
    for (size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

}  // namespace pearl
