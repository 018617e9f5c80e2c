#include "fedsim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace fedsim {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size()) {
        throw ShapeMismatch("data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    return const_cast<Tensor*>(this)->at(idx);
}

double& Tensor::at(std::initializer_list<std::size_t> idx) {
    if (idx.size() != shape_.size()) {
        throw ShapeMismatch("index rank " + std::to_string(idx.size()) +
                            " for tensor of rank " + std::to_string(shape_.size()));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
        flat = flat * shape_[axis] + i;
        ++axis;
    }
    return data_[flat];
}

namespace {

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F f, const char* opname) {
    if (a.same_shape(b)) {
        Tensor out(a.shape());
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        for (std::size_t i = 0; i < a.size(); ++i) po[i] = f(pa[i], pb[i]);
        return out;
    }
    if (b.is_scalar()) {
        Tensor out(a.shape());
        const double s = b[0];
        const double* pa = a.data();
        double* po = out.data();
        for (std::size_t i = 0; i < a.size(); ++i) po[i] = f(pa[i], s);
        return out;
    }
    if (a.is_scalar()) {
        Tensor out(b.shape());
        const double s = a[0];
        const double* pb = b.data();
        double* po = out.data();
        for (std::size_t i = 0; i < b.size(); ++i) po[i] = f(s, pb[i]);
        return out;
    }
    throw ShapeMismatch(std::string(opname) + ": " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return zip(a, b, [](double x, double y) { return x + y; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return zip(a, b, [](double x, double y) { return x - y; }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return zip(a, b, [](double x, double y) { return x * y; }, "mul");
}

Tensor scale(const Tensor& a, double factor) {
    Tensor out(a.shape());
    const double* pa = a.data();
    double* po = out.data();
    for (std::size_t i = 0; i < a.size(); ++i) po[i] = pa[i] * factor;
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out(a.shape());
    const double* pa = a.data();
    double* po = out.data();
    for (std::size_t i = 0; i < a.size(); ++i) po[i] = pa[i] > 0.0 ? pa[i] : 0.0;
    return out;
}

Tensor relu_grad(const Tensor& a) {
    Tensor out(a.shape());
    const double* pa = a.data();
    double* po = out.data();
    for (std::size_t i = 0; i < a.size(); ++i) po[i] = pa[i] > 0.0 ? 1.0 : 0.0;
    return out;
}

namespace {

struct ReducePlan {
    std::vector<std::size_t> out_shape;
    // For each input element, the flat index of the output cell it folds into.
    std::vector<bool> reduced;     // per input axis
    std::size_t reduce_count = 1;  // elements folded per output cell
};

ReducePlan plan_reduce(const Tensor& a, const std::vector<std::size_t>& axes) {
    ReducePlan plan;
    plan.reduced.assign(a.rank(), false);
    for (std::size_t ax : axes) {
        if (ax >= a.rank()) {
            throw InvalidAxis("axis " + std::to_string(ax) + " for tensor " +
                              shape_str(a.shape()));
        }
        if (plan.reduced[ax]) {
            throw InvalidAxis("duplicate axis " + std::to_string(ax));
        }
        plan.reduced[ax] = true;
        plan.reduce_count *= a.shape()[ax];
    }
    for (std::size_t i = 0; i < a.rank(); ++i) {
        if (!plan.reduced[i]) plan.out_shape.push_back(a.shape()[i]);
    }
    return plan;
}

// Folds every input element into its output cell with `fold`.
template <typename Fold>
Tensor reduce_fold(const Tensor& a, const ReducePlan& plan, double init, Fold fold) {
    Tensor out = Tensor::full(plan.out_shape, init);
    const std::size_t rank = a.rank();
    std::vector<std::size_t> idx(rank, 0);
    double* po = out.data();
    const double* pa = a.data();
    for (std::size_t flat = 0; flat < a.size(); ++flat) {
        std::size_t out_flat = 0;
        for (std::size_t ax = 0; ax < rank; ++ax) {
            if (!plan.reduced[ax]) out_flat = out_flat * a.shape()[ax] + idx[ax];
        }
        po[out_flat] = fold(po[out_flat], pa[flat]);
        for (std::size_t ax = rank; ax-- > 0;) {
            if (++idx[ax] < a.shape()[ax]) break;
            idx[ax] = 0;
        }
    }
    return out;
}

}  // namespace

Tensor reduce_sum(const Tensor& a, const std::vector<std::size_t>& axes) {
    ReducePlan plan = plan_reduce(a, axes);
    return reduce_fold(a, plan, 0.0, [](double acc, double v) { return acc + v; });
}

Tensor reduce_mean(const Tensor& a, const std::vector<std::size_t>& axes) {
    ReducePlan plan = plan_reduce(a, axes);
    Tensor s = reduce_fold(a, plan, 0.0, [](double acc, double v) { return acc + v; });
    return scale(s, 1.0 / static_cast<double>(plan.reduce_count));
}

Tensor reduce_var_pop(const Tensor& a, const std::vector<std::size_t>& axes) {
    ReducePlan plan = plan_reduce(a, axes);
    const double inv_n = 1.0 / static_cast<double>(plan.reduce_count);
    Tensor s = reduce_fold(a, plan, 0.0, [](double acc, double v) { return acc + v; });
    Tensor sq = reduce_fold(a, plan, 0.0, [](double acc, double v) { return acc + v * v; });
    Tensor out(plan.out_shape);
    double* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double m = s[i] * inv_n;
        const double v = sq[i] * inv_n - m * m;
        po[i] = v > 0.0 ? v : 0.0;  // guard tiny negative round-off
    }
    return out;
}

Tensor reduce_max(const Tensor& a, const std::vector<std::size_t>& axes) {
    ReducePlan plan = plan_reduce(a, axes);
    if (plan.reduce_count == 0) {
        throw InvalidAxis("max over empty extent");
    }
    return reduce_fold(a, plan, -std::numeric_limits<double>::infinity(),
                       [](double acc, double v) { return v > acc ? v : acc; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeMismatch("matmul expects rank-2 operands, got " + shape_str(a.shape()) +
                            " and " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw ShapeMismatch("matmul inner dims: " + shape_str(a.shape()) + " x " +
                            shape_str(b.shape()));
    }
    Tensor out({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = po + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            const double* brow = pb + kk * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) {
        throw ShapeMismatch("transpose2d expects rank 2, got " + shape_str(a.shape()));
    }
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    const double* pa = a.data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
    return out;
}

void ensure_finite(const Tensor& t, const char* context) {
    const double* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(p[i])) {
            throw NonFiniteValue(std::string(context) + ": element " + std::to_string(i) +
                                 " is " + std::to_string(p[i]));
        }
    }
}

}  // namespace fedsim
