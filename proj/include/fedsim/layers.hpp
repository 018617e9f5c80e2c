#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

enum class Mode { Train, Eval };

// How BatchNorm normalizes during training: with batch statistics (the
// normal case) or with frozen running statistics (FixBN second stage,
// where gamma/beta keep training but statistics stop updating).
enum class BnStatsMode { Batch, Frozen };

struct ConvParams {
    Tensor weight;  // [out_ch, in_ch, kh, kw]
    Tensor bias;    // [out_ch]
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::optional<Tensor> gain;  // [out_ch], present iff weight-standardized
    double ws_eps = 1e-4;

    std::size_t out_channels() const { return weight.dim(0); }
    std::size_t in_channels() const { return weight.dim(1); }
    std::size_t fan_in() const { return weight.dim(1) * weight.dim(2) * weight.dim(3); }
};

enum class NormKind { BatchNorm, GroupNorm, LayerNorm, None };

struct NormParams {
    NormKind kind = NormKind::None;
    std::size_t groups = 1;  // GroupNorm group count; LayerNorm behaves as groups == 1
    Tensor gamma;            // [ch]
    Tensor beta;             // [ch]
    Tensor running_mean;     // [ch], BatchNorm only
    Tensor running_var;      // [ch], BatchNorm only
    double eps = 1e-5;
    double momentum = 0.1;
};

// ---- Convolution -----------------------------------------------------------

Tensor conv2d_forward(const Tensor& x, const ConvParams& p);

struct ConvGrads {
    Tensor grad_x;
    Tensor grad_weight;
    Tensor grad_bias;
};
ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_out);

// Per output channel i: what = gain_i * (W_i - mean_i) / sqrt(max(var_i * N, ws_eps))
// with mean/population-variance taken over the N fan-in entries of row i.
Tensor ws_standardize(const ConvParams& p);

struct WsGrads {
    Tensor grad_weight;  // gradient w.r.t. the raw weight
    Tensor grad_gain;
};
// Propagates a gradient w.r.t. the standardized weight back through the
// standardization (mean, variance, clamp).
WsGrads ws_standardize_backward(const ConvParams& p, const Tensor& grad_what);

Tensor wsconv_forward(const Tensor& x, const ConvParams& p);

struct WsConvGrads {
    Tensor grad_x;
    Tensor grad_weight;
    Tensor grad_gain;
    Tensor grad_bias;
};
WsConvGrads wsconv_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_out);

// ---- Normalization ---------------------------------------------------------

struct NormCache {
    bool valid = false;
    bool fixed_stats = false;  // eval-style normalization (frozen/eval path)
    NormKind kind = NormKind::None;
    std::size_t batch = 0, channels = 0, height = 0, width = 0, groups = 1;
    Tensor x_hat;    // normalized input, same shape as x
    Tensor inv_std;  // one entry per reduction set
    Tensor gamma;
};

struct BatchNormResult {
    Tensor y;
    NormCache cache;
    Tensor new_running_mean;  // updated stats (train+batch mode), else copies
    Tensor new_running_var;
};
BatchNormResult batchnorm_forward(const Tensor& x, const NormParams& p, Mode mode,
                                  BnStatsMode stats_mode = BnStatsMode::Batch);

struct GroupNormResult {
    Tensor y;
    NormCache cache;
};
// Identical in train and eval mode; LayerNorm is groups == 1.
GroupNormResult groupnorm_forward(const Tensor& x, const NormParams& p);

struct NormGrads {
    Tensor grad_x;
    Tensor grad_gamma;
    Tensor grad_beta;
};
NormGrads norm_backward(const NormCache& cache, const Tensor& grad_out);

// ---- Pooling / activation / dropout ---------------------------------------

struct MaxPoolResult {
    Tensor y;
    std::vector<std::size_t> in_shape;
    std::vector<std::size_t> argmax;  // flat input index per output element
};
MaxPoolResult maxpool2d_forward(const Tensor& x, std::size_t kernel, std::size_t stride);
Tensor maxpool2d_backward(const MaxPoolResult& cache, const Tensor& grad_out);

struct DropoutResult {
    Tensor y;
    Tensor mask;  // 0 or 1/(1-rate); all ones in eval mode or at rate 0
};
DropoutResult dropout(const Tensor& x, double rate, RngStream& stream, Mode mode);

// ---- Fully connected -------------------------------------------------------

// x: [B, in], weight: [out, in] (row = output unit), bias: [out].
Tensor fc_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct FcGrads {
    Tensor grad_x;
    Tensor grad_weight;
    Tensor grad_bias;
};
FcGrads fc_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out);

// ---- Loss ------------------------------------------------------------------

struct SoftmaxCeResult {
    double loss;         // mean over the batch
    Tensor grad_logits;  // (softmax - onehot) / B
    Tensor probs;
};
SoftmaxCeResult softmax_cross_entropy(const Tensor& logits,
                                      const std::vector<std::size_t>& labels);

}  // namespace fedsim
