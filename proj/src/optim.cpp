#include "fedsim/optim.hpp"

#include <cmath>

namespace fedsim {

namespace {

bool clippable(ParamRole role, AgcScope scope) {
    if (role == ParamRole::ConvWeight) return true;
    if (role == ParamRole::FCWeight) return scope == AgcScope::ConvAndFc;
    return false;
}

}  // namespace

GradientMap agc_clip(const GradientMap& grads, const ModelState& weights, double lambda,
                     double eps, AgcScope scope) {
    GradientMap out;
    for (const auto& [name, grad] : grads) {
        auto it = weights.entries.find(name);
        if (it == weights.entries.end()) {
            throw ShapeMismatch("agc_clip: gradient '" + name + "' has no weight entry");
        }
        const ModelEntry& entry = it->second;
        if (!clippable(entry.role, scope)) {
            out.emplace(name, grad);
            continue;
        }
        const Tensor& w = entry.value;
        if (!w.same_shape(grad)) {
            throw ShapeMismatch("agc_clip: '" + name + "' weight " + shape_str(w.shape()) +
                                " vs grad " + shape_str(grad.shape()));
        }
        const std::size_t units = w.dim(0);
        const std::size_t fan_in = w.size() / units;

        Tensor clipped = grad;
        const double* wp = w.data();
        double* gp = clipped.data();
        for (std::size_t i = 0; i < units; ++i) {
            const double* wrow = wp + i * fan_in;
            double* grow = gp + i * fan_in;
            double wsq = 0.0, gsq = 0.0;
            for (std::size_t j = 0; j < fan_in; ++j) {
                wsq += wrow[j] * wrow[j];
                gsq += grow[j] * grow[j];
            }
            const double wnorm = std::max(std::sqrt(wsq), eps);
            const double gnorm = std::sqrt(gsq);
            // The slack absorbs the one-ulp overshoot of a previous clip, so
            // clipping is exactly idempotent; it matches the post-clip bound
            // ||G_i|| <= lambda * ||W_i||* (1 + 1e-12).
            if (gnorm > lambda * wnorm * (1.0 + 1e-12)) {
                const double factor = lambda * wnorm / gnorm;
                for (std::size_t j = 0; j < fan_in; ++j) grow[j] *= factor;
            }
        }
        out.emplace(name, std::move(clipped));
    }
    return out;
}

ModelState sgd_step(const ModelState& model, const GradientMap& grads, const OptimSpec& spec,
                    const ModelState* global_anchor) {
    if (spec.prox_mu > 0.0 && global_anchor == nullptr) {
        throw MissingAnchor("sgd_step: prox_mu > 0 requires a global anchor state");
    }

    const GradientMap* effective = &grads;
    GradientMap clipped;
    if (spec.agc_enabled) {
        clipped = agc_clip(grads, model, spec.agc_lambda, spec.agc_eps, spec.agc_scope);
        effective = &clipped;
    }

    ModelState next = model;
    for (auto& [name, entry] : next.entries) {
        if (!is_trainable(entry.role)) continue;
        auto git = effective->find(name);
        if (git == effective->end()) {
            throw ShapeMismatch("sgd_step: no gradient for trainable entry '" + name + "'");
        }
        const Tensor& g = git->second;
        if (!g.same_shape(entry.value)) {
            throw ShapeMismatch("sgd_step: '" + name + "' grad " + shape_str(g.shape()));
        }
        double* p = entry.value.data();
        const double* gp = g.data();
        if (spec.prox_mu > 0.0) {
            const Tensor& anchor = global_anchor->value(name);
            if (!anchor.same_shape(entry.value)) {
                throw ShapeMismatch("sgd_step: anchor shape mismatch for '" + name + "'");
            }
            const double* ap = anchor.data();
            for (std::size_t i = 0; i < entry.value.size(); ++i) {
                p[i] -= spec.lr * (gp[i] + spec.prox_mu * (p[i] - ap[i]));
            }
        } else {
            for (std::size_t i = 0; i < entry.value.size(); ++i) {
                p[i] -= spec.lr * gp[i];
            }
        }
    }
    return next;
}

}  // namespace fedsim
