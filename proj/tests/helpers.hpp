#pragma once

// Test-only oracles: central finite differences and naive reference
// implementations, independent of the kernels they check.

#include <cmath>
#include <functional>

#include "fedsim/layers.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim::testing {

inline double rel_err(double a, double b, double floor = 1e-2) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central finite difference of a scalar function w.r.t. one tensor element.
inline double central_diff(const std::function<double()>& f, double& x, double h = 1e-5) {
    const double saved = x;
    x = saved + h;
    const double up = f();
    x = saved - h;
    const double down = f();
    x = saved;
    return (up - down) / (2.0 * h);
}

// Naive seven-loop convolution, written independently of conv2d_forward.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                           std::size_t stride, std::size_t pad) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const std::size_t OH = (H + 2 * pad - KH) / stride + 1;
    const std::size_t OW = (W + 2 * pad - KW) / stride + 1;
    Tensor y({B, OC, OH, OW});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t oc = 0; oc < OC; ++oc)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    double acc = bias[oc];
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t kh = 0; kh < KH; ++kh)
                            for (std::size_t kw = 0; kw < KW; ++kw) {
                                const long ih = static_cast<long>(oh * stride + kh) -
                                                static_cast<long>(pad);
                                const long iw = static_cast<long>(ow * stride + kw) -
                                                static_cast<long>(pad);
                                if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) ||
                                    iw >= static_cast<long>(W))
                                    continue;
                                acc += w[((oc * C + c) * KH + kh) * KW + kw] *
                                       x[((b * C + c) * H + ih) * W + iw];
                            }
                    y[((b * OC + oc) * OH + oh) * OW + ow] = acc;
                }
    return y;
}

inline Tensor naive_maxpool(const Tensor& x, std::size_t k, std::size_t s) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OH = (H - k) / s + 1, OW = (W - k) / s + 1;
    Tensor y({B, C, OH, OW});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    double best = -1e300;
                    for (std::size_t kh = 0; kh < k; ++kh)
                        for (std::size_t kw = 0; kw < k; ++kw) {
                            best = std::max(
                                best, x[((b * C + c) * H + oh * s + kh) * W + ow * s + kw]);
                        }
                    y[((b * C + c) * OH + oh) * OW + ow] = best;
                }
    return y;
}

}  // namespace fedsim::testing
