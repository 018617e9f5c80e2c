#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "fedsim/errors.hpp"

namespace fedsim {

// Dense n-dimensional array of doubles, row-major. Treated as an immutable
// value once returned from a public op; mutation is for construction only.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double value);
    static Tensor full(std::vector<std::size_t> shape, double value);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    // A tensor holding a single element acts as a scalar operand.
    bool is_scalar() const { return data_.size() == 1; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double at(std::initializer_list<std::size_t> idx) const;
    double& at(std::initializer_list<std::size_t> idx);

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

// Elementwise ops. Shapes must match exactly or one operand must be a
// single-element tensor (scalar broadcast); anything else is ShapeMismatch.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor relu_grad(const Tensor& a);  // 1 where a > 0 else 0

// Reductions over a set of axes; reduced axes are removed from the shape.
// var_pop is the population variance: mean(a^2) - mean(a)^2, divisor = count.
Tensor reduce_sum(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor reduce_mean(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor reduce_var_pop(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor reduce_max(const Tensor& a, const std::vector<std::size_t>& axes);

// Standard matrix product, 64-bit accumulation. a: [m x k], b: [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

// Throws NonFiniteValue naming `context` if any element is NaN or Inf.
void ensure_finite(const Tensor& t, const char* context);

}  // namespace fedsim
