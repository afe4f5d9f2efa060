#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace g3dm {

// Dense row-major tensor of 64-bit floats. Rank is dynamic but nearly all of
// the network code works with rank-1 vectors and rank-2 (rows x cols)
// matrices.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_)) {
            throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                        " does not match shape product " +
                                        std::to_string(count(shape_)));
        }
    }

    static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
    static Tensor vector(std::size_t n) { return Tensor({n}); }

    static Tensor scalar(double v) {
        Tensor t({1});
        t.data_[0] = v;
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    double* row(std::size_t r) { return data_.data() + r * cols(); }
    const double* row(std::size_t r) const { return data_.data() + r * cols(); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    std::string shape_str() const {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << ')';
        return os.str();
    }

private:
    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t e : s) n *= e;
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

}  // namespace g3dm
