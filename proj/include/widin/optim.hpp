#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "widin/tensor.hpp"

namespace widin {

enum class OptimAlgo { Sgd, AdamW };

// State for one optimizer instance. Moment buffers are lazily shaped to the
// parameters on the first step and must keep matching afterwards.
struct OptimState {
    OptimAlgo algo = OptimAlgo::Sgd;
    double lr = 0.0;

    // SGD
    double momentum = 0.0;  // plain SGD unless configured otherwise

    // AdamW
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    int64_t step = 0;
    std::vector<Tensor> m;  // Adam first moment / SGD velocity
    std::vector<Tensor> v;  // Adam second moment

    static OptimState sgd(double lr, double momentum = 0.0) {
        OptimState s;
        s.algo = OptimAlgo::Sgd;
        s.lr = lr;
        s.momentum = momentum;
        return s;
    }

    static OptimState adamw(double lr) {
        OptimState s;
        s.algo = OptimAlgo::AdamW;
        s.lr = lr;
        return s;
    }
};

namespace detail {
inline void check_step_shapes(const std::vector<Tensor*>& params,
                              const std::vector<const Tensor*>& grads,
                              OptimState& state, bool needs_v) {
    if (params.size() != grads.size())
        throw ShapeError("optimizer step: params/grads count mismatch");
    for (size_t i = 0; i < params.size(); ++i)
        require_same_shape(*params[i], *grads[i], "optimizer step");
    if (state.m.empty()) {
        for (const Tensor* p : params) state.m.emplace_back(p->rows, p->cols);
        if (needs_v)
            for (const Tensor* p : params) state.v.emplace_back(p->rows, p->cols);
    }
    if (state.m.size() != params.size())
        throw ShapeError("optimizer step: parameter count changed mid-run");
    for (size_t i = 0; i < params.size(); ++i)
        require_same_shape(state.m[i], *params[i], "optimizer moment");
}
}  // namespace detail

// p <- p - lr * g  (velocity buffer only engages when momentum is configured)
inline void sgd_step(const std::vector<Tensor*>& params,
                     const std::vector<const Tensor*>& grads, OptimState& state) {
    if (state.algo != OptimAlgo::Sgd) throw Error("sgd_step: state is not SGD");
    auto p = params;
    detail::check_step_shapes(p, grads, state, /*needs_v=*/false);
    state.step += 1;
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& w = *params[i];
        const Tensor& g = *grads[i];
        if (state.momentum == 0.0) {
            for (size_t k = 0; k < w.size(); ++k) w.data[k] -= state.lr * g.data[k];
        } else {
            Tensor& vel = state.m[i];
            for (size_t k = 0; k < w.size(); ++k) {
                vel.data[k] = state.momentum * vel.data[k] + g.data[k];
                w.data[k] -= state.lr * vel.data[k];
            }
        }
    }
}

// Decoupled-weight-decay Adam with bias correction.
inline void adamw_step(const std::vector<Tensor*>& params,
                       const std::vector<const Tensor*>& grads, OptimState& state) {
    if (state.algo != OptimAlgo::AdamW) throw Error("adamw_step: state is not AdamW");
    auto p = params;
    detail::check_step_shapes(p, grads, state, /*needs_v=*/true);
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& w = *params[i];
        const Tensor& g = *grads[i];
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (size_t k = 0; k < w.size(); ++k) {
            w.data[k] -= state.lr * state.weight_decay * w.data[k];
            m.data[k] = state.beta1 * m.data[k] + (1.0 - state.beta1) * g.data[k];
            v.data[k] = state.beta2 * v.data[k] + (1.0 - state.beta2) * g.data[k] * g.data[k];
            const double mhat = m.data[k] / bc1;
            const double vhat = v.data[k] / bc2;
            w.data[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

inline void optim_step(const std::vector<Tensor*>& params,
                       const std::vector<const Tensor*>& grads, OptimState& state) {
    if (state.algo == OptimAlgo::Sgd)
        sgd_step(params, grads, state);
    else
        adamw_step(params, grads, state);
}

}  // namespace widin
