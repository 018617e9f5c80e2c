#pragma once

#include <map>
#include <string>
#include <vector>

#include "fedsim/layers.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

enum class ParamRole {
    ConvWeight,
    ConvBias,
    WSGain,
    NormGamma,
    NormBeta,
    NormRunningStat,
    FCWeight,
    FCBias,
};

const char* param_role_name(ParamRole role);
ParamRole param_role_from_name(const std::string& name);
bool is_trainable(ParamRole role);

// bn/gn/ln carry the matching norm layers; wsconv drops every norm and
// standardizes its convolutions; plain drops the norms but keeps ordinary
// convolutions (the ablation arm).
enum class Variant { BN, GN, LN, WSConv, Plain };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelEntry {
    ParamRole role;
    Tensor value;
};

// Named, role-tagged parameter/buffer map; the unit shipped between
// clients and server. Ordered by name, so iteration is deterministic.
struct ModelState {
    std::map<std::string, ModelEntry> entries;
    std::string arch_id;
    Variant variant = Variant::BN;
    std::string seed_lineage;

    const Tensor& value(const std::string& name) const;
    Tensor& value(const std::string& name);
    bool has(const std::string& name) const { return entries.count(name) != 0; }
};

using GradientMap = std::map<std::string, Tensor>;

struct ModelSpec {
    std::size_t in_channels = 3;
    std::size_t height = 28;
    std::size_t width = 28;
    std::size_t num_classes = 10;
    double width_scale = 1.0;
    double dropout_rate = 0.5;
    Variant variant = Variant::BN;
};

struct Batch {
    Tensor x;  // [B, C, H, W]
    std::vector<std::size_t> labels;
};

class Cnn6;

// Opaque activation record produced by forward_loss; consumed by backward.
struct ModelCache {
    bool valid = false;
    Mode mode = Mode::Train;
    std::string arch_id;
    Tensor x0;
    std::vector<Tensor> conv_in;        // input to each conv layer (3)
    std::vector<Tensor> conv_out;       // pre-norm conv output (3)
    std::vector<NormCache> norm_cache;  // (3), valid only for bn/gn/ln
    std::vector<Tensor> relu_in;        // pre-activation of every relu (5)
    std::vector<MaxPoolResult> pools;   // (2)
    std::vector<Tensor> fc_in;          // input to each fc layer (3)
    std::vector<Tensor> dropout_mask;   // (2)
    Tensor flat_in;                     // pooled conv stack output, flattened
    Tensor grad_logits;                 // d(mean loss)/d(logits)
};

struct ForwardResult {
    double loss = 0.0;
    Tensor logits;
    ModelCache cache;
    // Updated BatchNorm running statistics (train mode, batch stats); the
    // caller owns applying them to its working state.
    std::vector<std::pair<std::string, Tensor>> stat_updates;
};

// The 6-layer CNN: three conv stages (5x5, stride 1, pad 2; pools after the
// first two), then Dropout+FC(flat,2048s)+ReLU, Dropout+FC(2048s,512s)+ReLU,
// FC(512s,classes), with s = width_scale. Norm placement depends on variant.
class Cnn6 {
public:
    explicit Cnn6(ModelSpec spec);

    const ModelSpec& spec() const { return spec_; }
    const std::string& arch_id() const { return arch_id_; }

    ModelState init_state(RngStream stream) const;

    ForwardResult forward_loss(const ModelState& state, const Batch& batch, Mode mode,
                               RngStream stream,
                               BnStatsMode bn_stats = BnStatsMode::Batch) const;

    // loss_grad is the upstream gradient of the scalar loss (1 for plain
    // backpropagation; 0 must yield all-zero gradients).
    GradientMap backward(const ModelState& state, const ModelCache& cache,
                         double loss_grad = 1.0) const;

    // Total trainable parameter count, computed from the layer dimensions.
    std::size_t trainable_count() const;

    std::vector<std::string> trainable_keys(const ModelState& state) const;

    // Channel widths and fc sizes after width scaling.
    const std::vector<std::size_t>& conv_channels() const { return conv_ch_; }
    const std::vector<std::size_t>& gn_groups() const { return gn_groups_; }
    std::size_t flat_dim() const { return flat_dim_; }
    const std::vector<std::size_t>& fc_dims() const { return fc_dims_; }

private:
    ModelSpec spec_;
    std::string arch_id_;
    std::vector<std::size_t> conv_ch_;    // {c1, c2, c3}
    std::vector<std::size_t> gn_groups_;  // per conv stage (gn variant)
    std::size_t flat_dim_ = 0;
    std::vector<std::size_t> fc_dims_;  // {fc1_out, fc2_out, num_classes}

    NormParams norm_params(const ModelState& state, std::size_t stage) const;
    ConvParams conv_params(const ModelState& state, std::size_t stage) const;
};

// Fraction of argmax(logits) == label over the batch.
double accuracy(const Tensor& logits, const std::vector<std::size_t>& labels);

}  // namespace fedsim
