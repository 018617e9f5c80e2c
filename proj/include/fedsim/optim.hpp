#pragma once

#include "fedsim/model.hpp"

namespace fedsim {

enum class AgcScope { ConvOnly, ConvAndFc };

struct OptimSpec {
    double lr = 0.01;
    bool agc_enabled = false;
    double agc_lambda = 0.0;  // required iff agc_enabled
    double agc_eps = 1e-3;
    AgcScope agc_scope = AgcScope::ConvAndFc;
    double prox_mu = 0.0;
};

// Per-unit adaptive gradient clipping. A unit is one output row of a
// weight matrix (output channel for conv, output neuron for fc). Rows with
// ||G_i|| / max(||W_i||, eps) <= lambda pass through bitwise unchanged;
// the rest are rescaled to sit exactly on the threshold.
GradientMap agc_clip(const GradientMap& grads, const ModelState& weights, double lambda,
                     double eps, AgcScope scope = AgcScope::ConvAndFc);

// One SGD update: g' = agc(g) when enabled, then g'' = g' + mu * (theta -
// theta_anchor) on trainable entries, theta <- theta - lr * g''. Buffers
// (running statistics) pass through untouched.
ModelState sgd_step(const ModelState& model, const GradientMap& grads, const OptimSpec& spec,
                    const ModelState* global_anchor = nullptr);

}  // namespace fedsim
