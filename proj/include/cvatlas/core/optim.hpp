#pragma once

#include "cvatlas/core/tensor.hpp"

#include <cmath>
#include <cstddef>
#include <vector>

namespace cvatlas {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW); 0 gives plain Adam
};

/// Adam / AdamW over a fixed list of parameter slots. Call `begin_step()`
/// once per iteration, then `update(slot, ...)` for every parameter array.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void begin_step() noexcept { ++t_; }
    [[nodiscard]] long step_count() const noexcept { return t_; }
    [[nodiscard]] const AdamConfig& config() const noexcept { return cfg_; }

    void update(std::size_t slot, Scalar* param, const Scalar* grad, std::size_t n) {
        if (slot >= m_.size()) {
            m_.resize(slot + 1);
            v_.resize(slot + 1);
        }
        auto& m = m_[slot];
        auto& v = v_[slot];
        if (m.size() != n) {
            m.assign(n, 0.0);
            v.assign(n, 0.0);
        }
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        const double lr = cfg_.learning_rate;
        for (std::size_t i = 0; i < n; ++i) {
            if (cfg_.weight_decay != 0.0) param[i] -= lr * cfg_.weight_decay * param[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            param[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }

    template <typename Dense>
    void update(std::size_t slot, Dense& param, const Dense& grad) {
        update(slot, param.data(), grad.data(), static_cast<std::size_t>(param.size()));
    }

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::vector<std::vector<Scalar>> m_, v_;
};

}  // namespace cvatlas
