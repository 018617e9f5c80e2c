#include "fedsim/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fedsim {

namespace {

long floor_div(long a, long b) {
    long q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

long ceil_div(long a, long b) { return floor_div(a + b - 1, b); }

struct ConvGeom {
    std::size_t batch, in_ch, height, width;
    std::size_t out_ch, kh, kw;
    long stride, pad;
    std::size_t out_h, out_w;
};

ConvGeom conv_geometry(const Tensor& x, const ConvParams& p) {
    if (x.rank() != 4) {
        throw ShapeMismatch("conv2d input must be [B,C,H,W], got " + shape_str(x.shape()));
    }
    if (p.weight.rank() != 4) {
        throw ShapeMismatch("conv2d weight must be [out,in,kh,kw], got " +
                            shape_str(p.weight.shape()));
    }
    ConvGeom g;
    g.batch = x.dim(0);
    g.in_ch = x.dim(1);
    g.height = x.dim(2);
    g.width = x.dim(3);
    g.out_ch = p.weight.dim(0);
    g.kh = p.weight.dim(2);
    g.kw = p.weight.dim(3);
    g.stride = static_cast<long>(p.stride);
    g.pad = static_cast<long>(p.padding);
    if (g.in_ch != p.weight.dim(1)) {
        throw ShapeMismatch("conv2d: input channels " + std::to_string(g.in_ch) +
                            " vs weight in-channels " + std::to_string(p.weight.dim(1)));
    }
    if (p.bias.size() != g.out_ch) {
        throw ShapeMismatch("conv2d: bias size " + std::to_string(p.bias.size()) +
                            " vs out channels " + std::to_string(g.out_ch));
    }
    if (g.stride < 1) throw ShapeMismatch("conv2d: stride must be >= 1");
    const long oh_num = static_cast<long>(g.height) + 2 * g.pad - static_cast<long>(g.kh);
    const long ow_num = static_cast<long>(g.width) + 2 * g.pad - static_cast<long>(g.kw);
    if (oh_num < 0 || ow_num < 0 || oh_num % g.stride != 0 || ow_num % g.stride != 0) {
        throw NonIntegralOutputSize("conv2d: input " + shape_str(x.shape()) + ", kernel " +
                                    std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                                    ", stride " + std::to_string(g.stride) + ", padding " +
                                    std::to_string(g.pad));
    }
    g.out_h = static_cast<std::size_t>(oh_num / g.stride + 1);
    g.out_w = static_cast<std::size_t>(ow_num / g.stride + 1);
    if (g.out_h == 0 || g.out_w == 0) {
        throw NonIntegralOutputSize("conv2d: empty output");
    }
    return g;
}

// Output index range [lo, hi] such that o*stride + k - pad lies in [0, limit).
inline void valid_range(long limit, long pad, long k, long stride, long out_limit, long& lo,
                        long& hi) {
    lo = std::max(0L, ceil_div(pad - k, stride));
    hi = std::min(out_limit - 1, floor_div(limit - 1 + pad - k, stride));
}

Tensor conv2d_with_weight(const Tensor& x, const Tensor& weight, const Tensor& bias,
                          const ConvGeom& g) {
    Tensor y({g.batch, g.out_ch, g.out_h, g.out_w});
    const double* xp = x.data();
    const double* wp = weight.data();
    const double* bp = bias.data();
    double* yp = y.data();

    const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
    const long OH = static_cast<long>(g.out_h), OW = static_cast<long>(g.out_w);
    const long s = g.stride, pad = g.pad;

    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
            double* yplane = yp + ((b * g.out_ch + oc) * g.out_h) * g.out_w;
            const double bv = bp[oc];
            for (long i = 0; i < OH * OW; ++i) yplane[i] = bv;
            for (std::size_t c = 0; c < g.in_ch; ++c) {
                const double* xplane = xp + ((b * g.in_ch + c) * g.height) * g.width;
                const double* wrow = wp + ((oc * g.in_ch + c) * g.kh) * g.kw;
                for (std::size_t kh = 0; kh < g.kh; ++kh) {
                    long oh0, oh1;
                    valid_range(H, pad, static_cast<long>(kh), s, OH, oh0, oh1);
                    for (std::size_t kw = 0; kw < g.kw; ++kw) {
                        const double wv = wrow[kh * g.kw + kw];
                        long ow0, ow1;
                        valid_range(W, pad, static_cast<long>(kw), s, OW, ow0, ow1);
                        const long off = static_cast<long>(kw) - pad;
                        for (long oh = oh0; oh <= oh1; ++oh) {
                            const long ih = oh * s + static_cast<long>(kh) - pad;
                            double* yrow = yplane + oh * OW;
                            const double* xrow = xplane + ih * W;
                            if (s == 1) {
                                for (long ow = ow0; ow <= ow1; ++ow) {
                                    yrow[ow] += wv * xrow[ow + off];
                                }
                            } else {
                                for (long ow = ow0; ow <= ow1; ++ow) {
                                    yrow[ow] += wv * xrow[ow * s + off];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return y;
}

ConvGrads conv2d_backward_with_weight(const Tensor& x, const Tensor& weight,
                                      const Tensor& grad_out, const ConvGeom& g) {
    if (grad_out.shape() != std::vector<std::size_t>{g.batch, g.out_ch, g.out_h, g.out_w}) {
        throw ShapeMismatch("conv2d backward: grad_out " + shape_str(grad_out.shape()));
    }
    ConvGrads grads;
    grads.grad_x = Tensor(x.shape());
    grads.grad_weight = Tensor(weight.shape());
    grads.grad_bias = Tensor({g.out_ch});

    const double* xp = x.data();
    const double* wp = weight.data();
    const double* gop = grad_out.data();
    double* gxp = grads.grad_x.data();
    double* gwp = grads.grad_weight.data();
    double* gbp = grads.grad_bias.data();

    const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
    const long OH = static_cast<long>(g.out_h), OW = static_cast<long>(g.out_w);
    const long s = g.stride, pad = g.pad;

    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
            const double* goplane = gop + ((b * g.out_ch + oc) * g.out_h) * g.out_w;
            double acc_b = 0.0;
            for (long i = 0; i < OH * OW; ++i) acc_b += goplane[i];
            gbp[oc] += acc_b;
            for (std::size_t c = 0; c < g.in_ch; ++c) {
                const double* xplane = xp + ((b * g.in_ch + c) * g.height) * g.width;
                double* gxplane = gxp + ((b * g.in_ch + c) * g.height) * g.width;
                const double* wrow = wp + ((oc * g.in_ch + c) * g.kh) * g.kw;
                double* gwrow = gwp + ((oc * g.in_ch + c) * g.kh) * g.kw;
                for (std::size_t kh = 0; kh < g.kh; ++kh) {
                    long oh0, oh1;
                    valid_range(H, pad, static_cast<long>(kh), s, OH, oh0, oh1);
                    for (std::size_t kw = 0; kw < g.kw; ++kw) {
                        const double wv = wrow[kh * g.kw + kw];
                        long ow0, ow1;
                        valid_range(W, pad, static_cast<long>(kw), s, OW, ow0, ow1);
                        const long off = static_cast<long>(kw) - pad;
                        double acc_w = 0.0;
                        for (long oh = oh0; oh <= oh1; ++oh) {
                            const long ih = oh * s + static_cast<long>(kh) - pad;
                            const double* gorow = goplane + oh * OW;
                            const double* xrow = xplane + ih * W;
                            double* gxrow = gxplane + ih * W;
                            if (s == 1) {
                                for (long ow = ow0; ow <= ow1; ++ow) {
                                    acc_w += gorow[ow] * xrow[ow + off];
                                    gxrow[ow + off] += wv * gorow[ow];
                                }
                            } else {
                                for (long ow = ow0; ow <= ow1; ++ow) {
                                    acc_w += gorow[ow] * xrow[ow * s + off];
                                    gxrow[ow * s + off] += wv * gorow[ow];
                                }
                            }
                        }
                        gwrow[kh * g.kw + kw] += acc_w;
                    }
                }
            }
        }
    }
    return grads;
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const ConvParams& p) {
    const ConvGeom g = conv_geometry(x, p);
    return conv2d_with_weight(x, p.weight, p.bias, g);
}

ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_out) {
    const ConvGeom g = conv_geometry(x, p);
    return conv2d_backward_with_weight(x, p.weight, grad_out, g);
}

Tensor ws_standardize(const ConvParams& p) {
    if (!p.gain.has_value()) {
        throw ShapeMismatch("ws_standardize: params carry no gain");
    }
    const std::size_t oc = p.out_channels();
    const std::size_t n = p.fan_in();
    if (p.gain->size() != oc) {
        throw ShapeMismatch("ws_standardize: gain size " + std::to_string(p.gain->size()) +
                            " vs out channels " + std::to_string(oc));
    }
    Tensor what(p.weight.shape());
    const double* wp = p.weight.data();
    const double* gp = p.gain->data();
    double* op = what.data();
    const double dn = static_cast<double>(n);
    for (std::size_t i = 0; i < oc; ++i) {
        const double* row = wp + i * n;
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) sum += row[j];
        const double mean = sum / dn;
        // centered two-pass variance: stable under a constant row shift
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= dn;
        const double scale = gp[i] / std::sqrt(std::max(var * dn, p.ws_eps));
        double* orow = op + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] = (row[j] - mean) * scale;
    }
    return what;
}

WsGrads ws_standardize_backward(const ConvParams& p, const Tensor& grad_what) {
    if (!p.gain.has_value()) {
        throw ShapeMismatch("ws_standardize_backward: params carry no gain");
    }
    if (!grad_what.same_shape(p.weight)) {
        throw ShapeMismatch("ws_standardize_backward: grad shape " +
                            shape_str(grad_what.shape()));
    }
    const std::size_t oc = p.out_channels();
    const std::size_t n = p.fan_in();
    const double dn = static_cast<double>(n);

    WsGrads grads;
    grads.grad_weight = Tensor(p.weight.shape());
    grads.grad_gain = Tensor({oc});

    const double* wp = p.weight.data();
    const double* gp = p.gain->data();
    const double* ghat = grad_what.data();
    double* gw = grads.grad_weight.data();
    double* gg = grads.grad_gain.data();

    for (std::size_t i = 0; i < oc; ++i) {
        const double* row = wp + i * n;
        const double* grow = ghat + i * n;
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) sum += row[j];
        const double mean = sum / dn;
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= dn;
        const bool clamped = var * dn <= p.ws_eps;
        const double inv = 1.0 / std::sqrt(std::max(var * dn, p.ws_eps));

        double gsum = 0.0;   // sum of incoming grads
        double gcdot = 0.0;  // dot of incoming grads with centered weights
        for (std::size_t j = 0; j < n; ++j) {
            gsum += grow[j];
            gcdot += grow[j] * (row[j] - mean);
        }
        gg[i] = gcdot * inv;

        const double gmean = gsum / dn;
        const double gval = gp[i];
        double* gwrow = gw + i * n;
        if (clamped) {
            // scale is constant below the clamp; only the centering propagates
            for (std::size_t j = 0; j < n; ++j) {
                gwrow[j] = gval * inv * (grow[j] - gmean);
            }
        } else {
            const double inv3 = inv * inv * inv;
            for (std::size_t j = 0; j < n; ++j) {
                gwrow[j] =
                    gval * (inv * (grow[j] - gmean) - inv3 * gcdot * (row[j] - mean));
            }
        }
    }
    return grads;
}

Tensor wsconv_forward(const Tensor& x, const ConvParams& p) {
    const ConvGeom g = conv_geometry(x, p);
    return conv2d_with_weight(x, ws_standardize(p), p.bias, g);
}

WsConvGrads wsconv_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_out) {
    const ConvGeom g = conv_geometry(x, p);
    const Tensor what = ws_standardize(p);
    ConvGrads conv = conv2d_backward_with_weight(x, what, grad_out, g);
    WsGrads ws = ws_standardize_backward(p, conv.grad_weight);
    WsConvGrads grads;
    grads.grad_x = std::move(conv.grad_x);
    grads.grad_weight = std::move(ws.grad_weight);
    grads.grad_gain = std::move(ws.grad_gain);
    grads.grad_bias = std::move(conv.grad_bias);
    return grads;
}

// ---- Normalization ---------------------------------------------------------

namespace {

void check_norm_input(const Tensor& x, const NormParams& p) {
    if (x.rank() != 4) {
        throw ShapeMismatch("norm input must be [B,C,H,W], got " + shape_str(x.shape()));
    }
    const std::size_t c = x.dim(1);
    if (p.gamma.size() != c || p.beta.size() != c) {
        throw ShapeMismatch("norm affine size vs " + std::to_string(c) + " channels");
    }
}

}  // namespace

BatchNormResult batchnorm_forward(const Tensor& x, const NormParams& p, Mode mode,
                                  BnStatsMode stats_mode) {
    check_norm_input(x, p);
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (p.running_mean.size() != C || p.running_var.size() != C) {
        throw ShapeMismatch("batchnorm running stats vs " + std::to_string(C) + " channels");
    }
    const std::size_t plane = H * W;
    const std::size_t m = B * plane;  // reduction count per channel

    BatchNormResult res;
    res.y = Tensor(x.shape());
    res.new_running_mean = p.running_mean;
    res.new_running_var = p.running_var;

    const bool use_batch_stats = (mode == Mode::Train && stats_mode == BnStatsMode::Batch);
    const double* xp = x.data();
    double* yp = res.y.data();
    const double* gp = p.gamma.data();
    const double* bp = p.beta.data();

    Tensor mean({C}), var({C});
    if (use_batch_stats) {
        if (m < 2) {
            throw DegenerateBatch("batchnorm train mode needs B*H*W >= 2, got " +
                                  std::to_string(m));
        }
        for (std::size_t c = 0; c < C; ++c) {
            double sum = 0.0, sumsq = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* xpl = xp + ((b * C + c) * plane);
                for (std::size_t i = 0; i < plane; ++i) {
                    sum += xpl[i];
                    sumsq += xpl[i] * xpl[i];
                }
            }
            const double mu = sum / static_cast<double>(m);
            double v = sumsq / static_cast<double>(m) - mu * mu;
            if (v < 0.0) v = 0.0;
            mean[c] = mu;
            var[c] = v;
            res.new_running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * mu;
            res.new_running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * v;
        }
    } else {
        mean = p.running_mean;
        var = p.running_var;
    }

    NormCache& cache = res.cache;
    cache.valid = (mode == Mode::Train);
    cache.fixed_stats = !use_batch_stats;
    cache.kind = NormKind::BatchNorm;
    cache.batch = B;
    cache.channels = C;
    cache.height = H;
    cache.width = W;
    cache.groups = 1;
    cache.gamma = p.gamma;
    cache.inv_std = Tensor({C});
    cache.x_hat = Tensor(x.shape());

    double* xh = cache.x_hat.data();
    for (std::size_t c = 0; c < C; ++c) {
        const double inv = 1.0 / std::sqrt(var[c] + p.eps);
        cache.inv_std[c] = inv;
        const double mu = mean[c];
        const double gamma = gp[c], beta = bp[c];
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t base = (b * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double h = (xp[base + i] - mu) * inv;
                xh[base + i] = h;
                yp[base + i] = gamma * h + beta;
            }
        }
    }
    return res;
}

GroupNormResult groupnorm_forward(const Tensor& x, const NormParams& p) {
    check_norm_input(x, p);
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t groups = (p.kind == NormKind::LayerNorm) ? 1 : p.groups;
    if (groups == 0 || C % groups != 0) {
        throw InvalidGroupCount(std::to_string(groups) + " groups for " + std::to_string(C) +
                                " channels");
    }
    const std::size_t cpg = C / groups;
    const std::size_t plane = H * W;
    const std::size_t m = cpg * plane;  // reduction count per (sample, group)

    GroupNormResult res;
    res.y = Tensor(x.shape());
    NormCache& cache = res.cache;
    cache.valid = true;
    cache.fixed_stats = false;
    cache.kind = (p.kind == NormKind::LayerNorm) ? NormKind::LayerNorm : NormKind::GroupNorm;
    cache.batch = B;
    cache.channels = C;
    cache.height = H;
    cache.width = W;
    cache.groups = groups;
    cache.gamma = p.gamma;
    cache.inv_std = Tensor({B * groups});
    cache.x_hat = Tensor(x.shape());

    const double* xp = x.data();
    double* yp = res.y.data();
    double* xh = cache.x_hat.data();
    const double* gp = p.gamma.data();
    const double* bp = p.beta.data();

    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t g = 0; g < groups; ++g) {
            double sum = 0.0, sumsq = 0.0;
            for (std::size_t cc = 0; cc < cpg; ++cc) {
                const std::size_t c = g * cpg + cc;
                const double* xpl = xp + ((b * C + c) * plane);
                for (std::size_t i = 0; i < plane; ++i) {
                    sum += xpl[i];
                    sumsq += xpl[i] * xpl[i];
                }
            }
            const double mu = sum / static_cast<double>(m);
            double v = sumsq / static_cast<double>(m) - mu * mu;
            if (v < 0.0) v = 0.0;
            const double inv = 1.0 / std::sqrt(v + p.eps);
            cache.inv_std[b * groups + g] = inv;
            for (std::size_t cc = 0; cc < cpg; ++cc) {
                const std::size_t c = g * cpg + cc;
                const std::size_t base = (b * C + c) * plane;
                const double gamma = gp[c], beta = bp[c];
                for (std::size_t i = 0; i < plane; ++i) {
                    const double h = (xp[base + i] - mu) * inv;
                    xh[base + i] = h;
                    yp[base + i] = gamma * h + beta;
                }
            }
        }
    }
    return res;
}

NormGrads norm_backward(const NormCache& cache, const Tensor& grad_out) {
    if (!cache.valid) {
        throw StaleCache("norm_backward: cache not produced by a train-mode forward");
    }
    const std::size_t B = cache.batch, C = cache.channels;
    const std::size_t plane = cache.height * cache.width;
    if (grad_out.shape() != std::vector<std::size_t>{B, C, cache.height, cache.width}) {
        throw ShapeMismatch("norm_backward: grad_out " + shape_str(grad_out.shape()));
    }

    NormGrads grads;
    grads.grad_x = Tensor(grad_out.shape());
    grads.grad_gamma = Tensor({C});
    grads.grad_beta = Tensor({C});

    const double* go = grad_out.data();
    const double* xh = cache.x_hat.data();
    const double* gp = cache.gamma.data();
    double* gx = grads.grad_x.data();
    double* ggamma = grads.grad_gamma.data();
    double* gbeta = grads.grad_beta.data();

    for (std::size_t c = 0; c < C; ++c) {
        double dg = 0.0, db = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t base = (b * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                dg += go[base + i] * xh[base + i];
                db += go[base + i];
            }
        }
        ggamma[c] = dg;
        gbeta[c] = db;
    }

    if (cache.fixed_stats) {
        // Statistics are constants; the chain is a per-channel affine map.
        for (std::size_t c = 0; c < C; ++c) {
            const double k = gp[c] * cache.inv_std[c];
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t base = (b * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) gx[base + i] = k * go[base + i];
            }
        }
        return grads;
    }

    if (cache.kind == NormKind::BatchNorm) {
        const double m = static_cast<double>(B * plane);
        for (std::size_t c = 0; c < C; ++c) {
            // S1 = sum(dxhat), S2 = sum(dxhat * xhat); dxhat = go * gamma
            const double s1 = gp[c] * gbeta[c];
            const double s2 = gp[c] * ggamma[c];
            const double inv = cache.inv_std[c];
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t base = (b * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double dxhat = go[base + i] * gp[c];
                    gx[base + i] = inv * (dxhat - (s1 + xh[base + i] * s2) / m);
                }
            }
        }
        return grads;
    }

    // GroupNorm / LayerNorm: reduction sets are (sample, group).
    const std::size_t groups = cache.groups;
    const std::size_t cpg = C / groups;
    const double m = static_cast<double>(cpg * plane);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t g = 0; g < groups; ++g) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t cc = 0; cc < cpg; ++cc) {
                const std::size_t c = g * cpg + cc;
                const std::size_t base = (b * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double dxhat = go[base + i] * gp[c];
                    s1 += dxhat;
                    s2 += dxhat * xh[base + i];
                }
            }
            const double inv = cache.inv_std[b * groups + g];
            for (std::size_t cc = 0; cc < cpg; ++cc) {
                const std::size_t c = g * cpg + cc;
                const std::size_t base = (b * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double dxhat = go[base + i] * gp[c];
                    gx[base + i] = inv * (dxhat - (s1 + xh[base + i] * s2) / m);
                }
            }
        }
    }
    return grads;
}

// ---- Pooling / dropout -----------------------------------------------------

MaxPoolResult maxpool2d_forward(const Tensor& x, std::size_t kernel, std::size_t stride) {
    if (x.rank() != 4) {
        throw ShapeMismatch("maxpool input must be [B,C,H,W], got " + shape_str(x.shape()));
    }
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (kernel == 0 || stride == 0 || H < kernel || W < kernel ||
        (H - kernel) % stride != 0 || (W - kernel) % stride != 0) {
        throw NonIntegralOutputSize("maxpool2d: " + shape_str(x.shape()) + " with kernel " +
                                    std::to_string(kernel) + ", stride " +
                                    std::to_string(stride));
    }
    const std::size_t OH = (H - kernel) / stride + 1;
    const std::size_t OW = (W - kernel) / stride + 1;

    MaxPoolResult res;
    res.y = Tensor({B, C, OH, OW});
    res.in_shape = x.shape();
    res.argmax.resize(res.y.size());

    const double* xp = x.data();
    double* yp = res.y.data();
    std::size_t out_i = 0;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * H * W;
            for (std::size_t oh = 0; oh < OH; ++oh) {
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    std::size_t best_idx = base + (oh * stride) * W + (ow * stride);
                    double best = xp[best_idx];
                    for (std::size_t kh = 0; kh < kernel; ++kh) {
                        for (std::size_t kw = 0; kw < kernel; ++kw) {
                            const std::size_t idx =
                                base + (oh * stride + kh) * W + (ow * stride + kw);
                            if (xp[idx] > best) {  // ties keep the first scan position
                                best = xp[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    yp[out_i] = best;
                    res.argmax[out_i] = best_idx;
                    ++out_i;
                }
            }
        }
    }
    return res;
}

Tensor maxpool2d_backward(const MaxPoolResult& cache, const Tensor& grad_out) {
    if (!grad_out.same_shape(cache.y)) {
        throw ShapeMismatch("maxpool backward: grad_out " + shape_str(grad_out.shape()));
    }
    Tensor grad_x(cache.in_shape);
    double* gx = grad_x.data();
    const double* go = grad_out.data();
    for (std::size_t i = 0; i < grad_out.size(); ++i) gx[cache.argmax[i]] += go[i];
    return grad_x;
}

DropoutResult dropout(const Tensor& x, double rate, RngStream& stream, Mode mode) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw InvalidRate("dropout rate " + std::to_string(rate) + " outside [0, 1)");
    }
    DropoutResult res;
    if (mode == Mode::Eval || rate == 0.0) {
        res.y = x;
        res.mask = Tensor::full(x.shape(), 1.0);
        return res;
    }
    const double keep_scale = 1.0 / (1.0 - rate);
    res.mask = Tensor(x.shape());
    res.y = Tensor(x.shape());
    const double* xp = x.data();
    double* mp = res.mask.data();
    double* yp = res.y.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = stream.next_uniform() >= rate ? keep_scale : 0.0;
        mp[i] = keep;
        yp[i] = xp[i] * keep;
    }
    return res;
}

// ---- Fully connected -------------------------------------------------------

Tensor fc_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 2 || weight.rank() != 2) {
        throw ShapeMismatch("fc: x " + shape_str(x.shape()) + ", weight " +
                            shape_str(weight.shape()));
    }
    const std::size_t B = x.dim(0), in = x.dim(1);
    const std::size_t out = weight.dim(0);
    if (weight.dim(1) != in || bias.size() != out) {
        throw ShapeMismatch("fc: weight " + shape_str(weight.shape()) + " vs input " +
                            shape_str(x.shape()));
    }
    Tensor y({B, out});
    const double* xp = x.data();
    const double* wp = weight.data();
    const double* bp = bias.data();
    double* yp = y.data();
    for (std::size_t b = 0; b < B; ++b) {
        const double* xrow = xp + b * in;
        double* yrow = yp + b * out;
        for (std::size_t o = 0; o < out; ++o) {
            const double* wrow = wp + o * in;
            double acc = bp[o];
            for (std::size_t i = 0; i < in; ++i) acc += xrow[i] * wrow[i];
            yrow[o] = acc;
        }
    }
    return y;
}

FcGrads fc_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out) {
    const std::size_t B = x.dim(0), in = x.dim(1), out = weight.dim(0);
    if (grad_out.shape() != std::vector<std::size_t>{B, out}) {
        throw ShapeMismatch("fc backward: grad_out " + shape_str(grad_out.shape()));
    }
    FcGrads grads;
    grads.grad_x = Tensor({B, in});
    grads.grad_weight = Tensor(weight.shape());
    grads.grad_bias = Tensor({out});

    const double* xp = x.data();
    const double* wp = weight.data();
    const double* go = grad_out.data();
    double* gx = grads.grad_x.data();
    double* gw = grads.grad_weight.data();
    double* gb = grads.grad_bias.data();

    for (std::size_t b = 0; b < B; ++b) {
        const double* gorow = go + b * out;
        const double* xrow = xp + b * in;
        double* gxrow = gx + b * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double g = gorow[o];
            if (g == 0.0) continue;
            gb[o] += g;
            const double* wrow = wp + o * in;
            double* gwrow = gw + o * in;
            for (std::size_t i = 0; i < in; ++i) {
                gxrow[i] += g * wrow[i];
                gwrow[i] += g * xrow[i];
            }
        }
    }
    return grads;
}

// ---- Loss ------------------------------------------------------------------

SoftmaxCeResult softmax_cross_entropy(const Tensor& logits,
                                      const std::vector<std::size_t>& labels) {
    if (logits.rank() != 2) {
        throw ShapeMismatch("softmax_cross_entropy: logits " + shape_str(logits.shape()));
    }
    const std::size_t B = logits.dim(0), K = logits.dim(1);
    if (labels.size() != B) {
        throw ShapeMismatch("softmax_cross_entropy: " + std::to_string(labels.size()) +
                            " labels for batch " + std::to_string(B));
    }
    SoftmaxCeResult res;
    res.probs = Tensor({B, K});
    res.grad_logits = Tensor({B, K});
    const double* zp = logits.data();
    double* pp = res.probs.data();
    double* gp = res.grad_logits.data();
    double loss_sum = 0.0;
    const double inv_b = 1.0 / static_cast<double>(B);

    for (std::size_t b = 0; b < B; ++b) {
        if (labels[b] >= K) {
            throw LabelOutOfRange("label " + std::to_string(labels[b]) + " for " +
                                  std::to_string(K) + " classes");
        }
        const double* z = zp + b * K;
        double zmax = z[0];
        for (std::size_t k = 1; k < K; ++k) zmax = std::max(zmax, z[k]);
        double sumexp = 0.0;
        for (std::size_t k = 0; k < K; ++k) sumexp += std::exp(z[k] - zmax);
        const double log_z = zmax + std::log(sumexp);
        loss_sum += log_z - z[labels[b]];
        double* prow = pp + b * K;
        double* grow = gp + b * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double pk = std::exp(z[k] - zmax) / sumexp;
            prow[k] = pk;
            grow[k] = (pk - (k == labels[b] ? 1.0 : 0.0)) * inv_b;
        }
    }
    res.loss = loss_sum * inv_b;
    return res;
}

}  // namespace fedsim
