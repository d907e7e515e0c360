#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "maskmatch/numerics/parameters.hpp"

namespace maskmatch {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Per-parameter moments for AdamW. Moments are created lazily on the first
// step so they always match the shapes of the parameters they follow.
template <typename T>
struct OptimizerState {
    AdamWConfig hyper;
    std::vector<Tensor<T>> first_moment;
    std::vector<Tensor<T>> second_moment;
    std::uint64_t step = 0;
};

// One decoupled-weight-decay Adam update over every parameter, reading p.grad.
// A non-finite gradient aborts before any parameter is touched.
template <typename T>
void adamw_step(ParameterSet<T>& params, OptimizerState<T>& state, double lr) {
    for (const auto& p : params) {
        if (p.grad.shape() != p.value.shape()) {
            fail(ErrorKind::kDimension, "gradient of " + p.name + " has shape " +
                                            shape_string(p.grad.shape()) + ", parameter " +
                                            shape_string(p.value.shape()));
        }
        if (!p.grad.all_finite()) {
            fail(ErrorKind::kNumericFailure, "non-finite gradient in parameter " + p.name);
        }
    }
    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.value.shape());
            state.second_moment.emplace_back(p.value.shape());
        }
    }
    if (state.first_moment.size() != params.size()) {
        fail(ErrorKind::kContract, "optimizer state does not match the parameter set");
    }
    ++state.step;
    const T b1 = static_cast<T>(state.hyper.beta1);
    const T b2 = static_cast<T>(state.hyper.beta2);
    const T eps = static_cast<T>(state.hyper.eps);
    const T step_lr = static_cast<T>(lr);
    const T decay = static_cast<T>(lr * state.hyper.weight_decay);
    const T correction1 = T{1} - std::pow(b1, static_cast<T>(state.step));
    const T correction2 = T{1} - std::pow(b2, static_cast<T>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params.at(i);
        auto w = p.value.data();
        auto g = p.grad.data();
        auto m = state.first_moment[i].data();
        auto v = state.second_moment[i].data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            if (decay != T{0}) w[j] -= decay * w[j];
            m[j] = b1 * m[j] + (T{1} - b1) * g[j];
            v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
            const T m_hat = m[j] / correction1;
            const T v_hat = v[j] / correction2;
            w[j] -= step_lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

// Scales all gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <typename T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm) {
    double total = 0.0;
    for (const auto& p : params)
        for (T g : p.grad.data()) total += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(total);
    if (max_norm > 0.0 && norm > max_norm) {
        const T factor = static_cast<T>(max_norm / norm);
        for (auto& p : params)
            for (auto& g : p.grad.data()) g *= factor;
    }
    return norm;
}

// Linear warm-up to peak_lr over warmup_ratio * total_steps, then linear decay
// to zero at total_steps.
struct LrSchedule {
    double peak_lr = 1e-5;
    double warmup_ratio = 0.2;
    std::size_t total_steps = 1;

    double warmup_steps() const { return warmup_ratio * static_cast<double>(total_steps); }

    double lr_at(std::size_t step) const {
        if (step > total_steps && !overrun_logged_) {
            overrun_logged_ = true;
            std::cerr << "lr schedule: step " << step << " beyond " << total_steps
                      << " total steps, clamping to 0\n";
        }
        if (step >= total_steps) return 0.0;
        const double s = static_cast<double>(step);
        const double warm = warmup_steps();
        if (s < warm) return peak_lr * s / warm;
        const double decay = static_cast<double>(total_steps) - warm;
        return peak_lr * (static_cast<double>(total_steps) - s) / decay;
    }

    mutable bool overrun_logged_ = false;
};

}  // namespace maskmatch
