#include "fedsim/model.hpp"

#include <cmath>
#include <sstream>

namespace fedsim {

const char* param_role_name(ParamRole role) {
    switch (role) {
        case ParamRole::ConvWeight: return "conv_weight";
        case ParamRole::ConvBias: return "conv_bias";
        case ParamRole::WSGain: return "ws_gain";
        case ParamRole::NormGamma: return "norm_gamma";
        case ParamRole::NormBeta: return "norm_beta";
        case ParamRole::NormRunningStat: return "norm_running_stat";
        case ParamRole::FCWeight: return "fc_weight";
        case ParamRole::FCBias: return "fc_bias";
    }
    return "?";
}

ParamRole param_role_from_name(const std::string& name) {
    if (name == "conv_weight") return ParamRole::ConvWeight;
    if (name == "conv_bias") return ParamRole::ConvBias;
    if (name == "ws_gain") return ParamRole::WSGain;
    if (name == "norm_gamma") return ParamRole::NormGamma;
    if (name == "norm_beta") return ParamRole::NormBeta;
    if (name == "norm_running_stat") return ParamRole::NormRunningStat;
    if (name == "fc_weight") return ParamRole::FCWeight;
    if (name == "fc_bias") return ParamRole::FCBias;
    throw ParseError("unknown parameter role '" + name + "'");
}

bool is_trainable(ParamRole role) { return role != ParamRole::NormRunningStat; }

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::BN: return "bn";
        case Variant::GN: return "gn";
        case Variant::LN: return "ln";
        case Variant::WSConv: return "wsconv";
        case Variant::Plain: return "plain";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    if (name == "bn") return Variant::BN;
    if (name == "gn") return Variant::GN;
    if (name == "ln") return Variant::LN;
    if (name == "wsconv") return Variant::WSConv;
    if (name == "plain") return Variant::Plain;
    throw ParseError("unknown model variant '" + name + "'");
}

const Tensor& ModelState::value(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw ShapeMismatch("model has no entry '" + name + "'");
    return it->second.value;
}

Tensor& ModelState::value(const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end()) throw ShapeMismatch("model has no entry '" + name + "'");
    return it->second.value;
}

namespace {

constexpr std::size_t kKernel = 5;
constexpr std::size_t kPad = 2;

// Base widths from the reference architecture; gn group counts per stage.
constexpr std::size_t kBaseConv[3] = {64, 64, 128};
constexpr std::size_t kBaseFc[2] = {2048, 512};
constexpr std::size_t kBaseGroups[3] = {32, 32, 64};

std::size_t scaled(std::size_t base, double scale, const char* what) {
    const double v = static_cast<double>(base) * scale;
    const double r = std::round(v);
    if (r < 1.0 || std::abs(v - r) > 1e-9) {
        throw InvalidSpec(std::string("width_scale makes ") + what + " non-integral: " +
                          std::to_string(v));
    }
    return static_cast<std::size_t>(r);
}

bool has_norm(Variant v) { return v == Variant::BN || v == Variant::GN || v == Variant::LN; }

}  // namespace

Cnn6::Cnn6(ModelSpec spec) : spec_(spec) {
    if (spec_.num_classes < 2) throw InvalidSpec("need at least 2 classes");
    if (spec_.in_channels == 0) throw InvalidSpec("need at least 1 input channel");
    if (spec_.height % 4 != 0 || spec_.width % 4 != 0) {
        throw InvalidSpec("input height/width must be divisible by 4 (two 2x2 pools), got " +
                          std::to_string(spec_.height) + "x" + std::to_string(spec_.width));
    }
    if (!(spec_.dropout_rate >= 0.0 && spec_.dropout_rate < 1.0)) {
        throw InvalidSpec("dropout rate " + std::to_string(spec_.dropout_rate));
    }
    for (int i = 0; i < 3; ++i) conv_ch_.push_back(scaled(kBaseConv[i], spec_.width_scale, "conv width"));
    fc_dims_ = {scaled(kBaseFc[0], spec_.width_scale, "fc width"),
                scaled(kBaseFc[1], spec_.width_scale, "fc width"), spec_.num_classes};
    flat_dim_ = conv_ch_[2] * (spec_.height / 4) * (spec_.width / 4);

    if (spec_.variant == Variant::GN) {
        for (int i = 0; i < 3; ++i) {
            const std::size_t groups = std::min(kBaseGroups[i], conv_ch_[i]);
            if (conv_ch_[i] % groups != 0) {
                throw InvalidSpec("group count " + std::to_string(groups) +
                                  " does not divide " + std::to_string(conv_ch_[i]));
            }
            gn_groups_.push_back(groups);
        }
    } else {
        gn_groups_ = {1, 1, 1};
    }

    std::ostringstream id;
    id << "cnn6/w=" << spec_.width_scale << "/in=" << spec_.in_channels << "x" << spec_.height
       << "x" << spec_.width << "/k=" << spec_.num_classes << "/do=" << spec_.dropout_rate;
    arch_id_ = id.str();
}

ModelState Cnn6::init_state(RngStream stream) const {
    ModelState state;
    state.arch_id = arch_id_;
    state.variant = spec_.variant;
    {
        std::ostringstream lin;
        lin << "seed=" << stream.seed() << "/stream=0x" << std::hex << stream.stream_id();
        state.seed_lineage = lin.str();
    }

    auto put = [&](const std::string& name, ParamRole role, Tensor value) {
        state.entries.emplace(name, ModelEntry{role, std::move(value)});
    };
    auto xavier = [&](const std::string& name, std::vector<std::size_t> shape,
                      std::size_t fan_in, std::size_t fan_out) {
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
        return stream.split(name).normal(shape, 0.0, stddev);
    };

    std::size_t in_ch = spec_.in_channels;
    for (std::size_t s = 0; s < 3; ++s) {
        const std::size_t oc = conv_ch_[s];
        const std::string conv = "conv" + std::to_string(s + 1);
        put(conv + ".weight", ParamRole::ConvWeight,
            xavier(conv + ".weight", {oc, in_ch, kKernel, kKernel}, in_ch * kKernel * kKernel,
                   oc * kKernel * kKernel));
        put(conv + ".bias", ParamRole::ConvBias, Tensor({oc}));
        if (spec_.variant == Variant::WSConv) {
            put(conv + ".gain", ParamRole::WSGain, Tensor::full({oc}, 1.0));
        }
        if (has_norm(spec_.variant)) {
            const std::string norm = "norm" + std::to_string(s + 1);
            put(norm + ".gamma", ParamRole::NormGamma, Tensor::full({oc}, 1.0));
            put(norm + ".beta", ParamRole::NormBeta, Tensor({oc}));
            if (spec_.variant == Variant::BN) {
                put(norm + ".running_mean", ParamRole::NormRunningStat, Tensor({oc}));
                put(norm + ".running_var", ParamRole::NormRunningStat,
                    Tensor::full({oc}, 1.0));
            }
        }
        in_ch = oc;
    }

    std::size_t fc_in = flat_dim_;
    for (std::size_t s = 0; s < 3; ++s) {
        const std::size_t out = fc_dims_[s];
        const std::string fc = "fc" + std::to_string(s + 1);
        put(fc + ".weight", ParamRole::FCWeight,
            xavier(fc + ".weight", {out, fc_in}, fc_in, out));
        put(fc + ".bias", ParamRole::FCBias, Tensor({out}));
        fc_in = out;
    }
    return state;
}

ConvParams Cnn6::conv_params(const ModelState& state, std::size_t stage) const {
    const std::string conv = "conv" + std::to_string(stage + 1);
    ConvParams p;
    p.weight = state.value(conv + ".weight");
    p.bias = state.value(conv + ".bias");
    p.stride = 1;
    p.padding = kPad;
    if (spec_.variant == Variant::WSConv) {
        p.gain = state.value(conv + ".gain");
        p.ws_eps = 1e-4;
    }
    return p;
}

NormParams Cnn6::norm_params(const ModelState& state, std::size_t stage) const {
    const std::string norm = "norm" + std::to_string(stage + 1);
    NormParams p;
    switch (spec_.variant) {
        case Variant::BN: p.kind = NormKind::BatchNorm; break;
        case Variant::GN: p.kind = NormKind::GroupNorm; break;
        case Variant::LN: p.kind = NormKind::LayerNorm; break;
        default: p.kind = NormKind::None; return p;
    }
    p.groups = gn_groups_[stage];
    p.gamma = state.value(norm + ".gamma");
    p.beta = state.value(norm + ".beta");
    if (spec_.variant == Variant::BN) {
        p.running_mean = state.value(norm + ".running_mean");
        p.running_var = state.value(norm + ".running_var");
    }
    return p;
}

ForwardResult Cnn6::forward_loss(const ModelState& state, const Batch& batch, Mode mode,
                                 RngStream stream, BnStatsMode bn_stats) const {
    if (state.arch_id != arch_id_) {
        throw ShapeMismatch("model state arch '" + state.arch_id + "' vs '" + arch_id_ + "'");
    }
    const Tensor& x = batch.x;
    if (x.rank() != 4 || x.dim(1) != spec_.in_channels || x.dim(2) != spec_.height ||
        x.dim(3) != spec_.width) {
        throw ShapeMismatch("batch shape " + shape_str(x.shape()) + " vs model input");
    }
    if (batch.labels.size() != x.dim(0)) {
        throw ShapeMismatch("batch labels size " + std::to_string(batch.labels.size()));
    }

    ForwardResult res;
    ModelCache& cache = res.cache;
    cache.valid = (mode == Mode::Train);
    cache.mode = mode;
    cache.arch_id = arch_id_;
    cache.x0 = x;

    Tensor cur = x;
    for (std::size_t s = 0; s < 3; ++s) {
        cache.conv_in.push_back(cur);
        const ConvParams cp = conv_params(state, s);
        Tensor conv_out = (spec_.variant == Variant::WSConv) ? wsconv_forward(cur, cp)
                                                             : conv2d_forward(cur, cp);
        cache.conv_out.push_back(conv_out);

        Tensor normed;
        if (has_norm(spec_.variant)) {
            const NormParams np = norm_params(state, s);
            if (spec_.variant == Variant::BN) {
                BatchNormResult bn = batchnorm_forward(conv_out, np, mode, bn_stats);
                normed = std::move(bn.y);
                cache.norm_cache.push_back(std::move(bn.cache));
                if (mode == Mode::Train && bn_stats == BnStatsMode::Batch) {
                    const std::string norm = "norm" + std::to_string(s + 1);
                    res.stat_updates.emplace_back(norm + ".running_mean",
                                                  std::move(bn.new_running_mean));
                    res.stat_updates.emplace_back(norm + ".running_var",
                                                  std::move(bn.new_running_var));
                }
            } else {
                GroupNormResult gn = groupnorm_forward(conv_out, np);
                normed = std::move(gn.y);
                cache.norm_cache.push_back(std::move(gn.cache));
            }
        } else {
            normed = std::move(conv_out);
            cache.norm_cache.emplace_back();
        }

        cache.relu_in.push_back(normed);
        Tensor activated = relu(normed);
        if (s < 2) {
            MaxPoolResult pool = maxpool2d_forward(activated, 2, 2);
            cur = pool.y;
            cache.pools.push_back(std::move(pool));
        } else {
            cur = std::move(activated);
        }
    }

    // Flatten [B, c3, H/4, W/4] -> [B, flat]; row-major makes this a reshape.
    Tensor flat({cur.dim(0), flat_dim_}, cur.values());
    cache.flat_in = flat;

    Tensor fc_cur = std::move(flat);
    for (std::size_t s = 0; s < 3; ++s) {
        if (s < 2) {
            RngStream drop_stream = stream.split("dropout", s);
            DropoutResult dr = dropout(fc_cur, spec_.dropout_rate, drop_stream, mode);
            cache.dropout_mask.push_back(std::move(dr.mask));
            fc_cur = std::move(dr.y);
        }
        cache.fc_in.push_back(fc_cur);
        const std::string fc = "fc" + std::to_string(s + 1);
        Tensor out = fc_forward(fc_cur, state.value(fc + ".weight"), state.value(fc + ".bias"));
        if (s < 2) {
            cache.relu_in.push_back(out);
            fc_cur = relu(out);
        } else {
            fc_cur = std::move(out);
        }
    }

    res.logits = fc_cur;
    SoftmaxCeResult ce = softmax_cross_entropy(res.logits, batch.labels);
    res.loss = ce.loss;
    if (!std::isfinite(res.loss)) {
        throw NonFiniteValue("forward_loss produced loss " + std::to_string(res.loss));
    }
    cache.grad_logits = std::move(ce.grad_logits);
    return res;
}

GradientMap Cnn6::backward(const ModelState& state, const ModelCache& cache,
                           double loss_grad) const {
    if (!cache.valid) {
        throw StaleCache("backward requires a cache from a train-mode forward");
    }
    if (cache.arch_id != arch_id_ || state.arch_id != arch_id_) {
        throw StaleCache("cache/state architecture mismatch");
    }

    GradientMap grads;
    Tensor grad = scale(cache.grad_logits, loss_grad);

    // FC stack in reverse: fc3, relu+dropout around fc2/fc1.
    for (std::size_t s = 3; s-- > 0;) {
        const std::string fc = "fc" + std::to_string(s + 1);
        if (s < 2) {
            grad = mul(grad, relu_grad(cache.relu_in[3 + s]));
        }
        FcGrads fg = fc_backward(cache.fc_in[s], state.value(fc + ".weight"), grad);
        grads[fc + ".weight"] = std::move(fg.grad_weight);
        grads[fc + ".bias"] = std::move(fg.grad_bias);
        grad = std::move(fg.grad_x);
        if (s < 2) {
            grad = mul(grad, cache.dropout_mask[s]);
        }
    }

    // Back to spatial layout.
    const std::size_t B = cache.x0.dim(0);
    Tensor grad_spatial(
        {B, conv_ch_[2], spec_.height / 4, spec_.width / 4}, grad.values());

    Tensor cur = std::move(grad_spatial);
    for (std::size_t s = 3; s-- > 0;) {
        if (s < 2) {
            cur = maxpool2d_backward(cache.pools[s], cur);
        }
        cur = mul(cur, relu_grad(cache.relu_in[s]));
        if (has_norm(spec_.variant)) {
            const std::string norm = "norm" + std::to_string(s + 1);
            NormGrads ng = norm_backward(cache.norm_cache[s], cur);
            grads[norm + ".gamma"] = std::move(ng.grad_gamma);
            grads[norm + ".beta"] = std::move(ng.grad_beta);
            cur = std::move(ng.grad_x);
        }
        const std::string conv = "conv" + std::to_string(s + 1);
        const ConvParams cp = conv_params(state, s);
        if (spec_.variant == Variant::WSConv) {
            WsConvGrads wg = wsconv_backward(cache.conv_in[s], cp, cur);
            grads[conv + ".weight"] = std::move(wg.grad_weight);
            grads[conv + ".gain"] = std::move(wg.grad_gain);
            grads[conv + ".bias"] = std::move(wg.grad_bias);
            cur = std::move(wg.grad_x);
        } else {
            ConvGrads cg = conv2d_backward(cache.conv_in[s], cp, cur);
            grads[conv + ".weight"] = std::move(cg.grad_weight);
            grads[conv + ".bias"] = std::move(cg.grad_bias);
            cur = std::move(cg.grad_x);
        }
    }
    return grads;
}

std::size_t Cnn6::trainable_count() const {
    std::size_t count = 0;
    std::size_t in_ch = spec_.in_channels;
    for (std::size_t s = 0; s < 3; ++s) {
        const std::size_t oc = conv_ch_[s];
        count += oc * in_ch * kKernel * kKernel + oc;  // weight + bias
        if (spec_.variant == Variant::WSConv) count += oc;
        if (has_norm(spec_.variant)) count += 2 * oc;  // gamma + beta
        in_ch = oc;
    }
    std::size_t fc_in = flat_dim_;
    for (std::size_t s = 0; s < 3; ++s) {
        count += fc_dims_[s] * fc_in + fc_dims_[s];
        fc_in = fc_dims_[s];
    }
    return count;
}

std::vector<std::string> Cnn6::trainable_keys(const ModelState& state) const {
    std::vector<std::string> keys;
    for (const auto& [name, entry] : state.entries) {
        if (is_trainable(entry.role)) keys.push_back(name);
    }
    return keys;
}

double accuracy(const Tensor& logits, const std::vector<std::size_t>& labels) {
    const std::size_t B = logits.dim(0), K = logits.dim(1);
    std::size_t hits = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const double* row = logits.data() + b * K;
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k) {
            if (row[k] > row[best]) best = k;
        }
        if (best == labels[b]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(B);
}

}  // namespace fedsim
