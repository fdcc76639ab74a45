#include "icopro/grad/adam.hpp"

#include <algorithm>
#include <cmath>

#include "icopro/errors.hpp"

namespace icopro::grad {

AdamConfig AdamConfig::for_batch(std::size_t batch_size, double alpha) {
    AdamConfig c;
    c.alpha = alpha;
    c.eps = 0.01 / static_cast<double>(batch_size);
    return c;
}

AdamState::AdamState(AdamConfig config, std::vector<std::size_t> block_sizes) : config_(config) {
    if (config_.alpha <= 0.0 || config_.eps <= 0.0 || config_.beta1 < 0.0 || config_.beta1 >= 1.0 ||
        config_.beta2 < 0.0 || config_.beta2 >= 1.0) {
        throw ConfigError("invalid Adam hyperparameters");
    }
    m_.reserve(block_sizes.size());
    v_.reserve(block_sizes.size());
    for (auto n : block_sizes) {
        m_.emplace_back(n, 0.0);
        v_.emplace_back(n, 0.0);
    }
}

void AdamState::step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw ConfigError("Adam: block count mismatch");
    }
    std::size_t offset = 0;
    for (std::size_t b = 0; b < grads.size(); ++b) {
        if (params[b].size() != m_[b].size() || grads[b].size() != m_[b].size()) {
            throw ConfigError("Adam: block " + std::to_string(b) + " size mismatch");
        }
        for (std::size_t i = 0; i < grads[b].size(); ++i) {
            if (!std::isfinite(grads[b][i])) throw NumericalError("non-finite gradient", offset + i);
        }
        offset += grads[b].size();
    }

    ++step_count_;
    const double t = static_cast<double>(step_count_);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    const double step_size = config_.alpha / bc1;
    const double sqrt_bc2 = std::sqrt(bc2);
    for (std::size_t b = 0; b < grads.size(); ++b) {
        auto& m = m_[b];
        auto& v = v_[b];
        auto p = params[b];
        auto g = grads[b];
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            p[i] -= step_size * m[i] / (std::sqrt(v[i]) / sqrt_bc2 + config_.eps);
        }
    }
}

void AdamState::reset_moments() {
    for (auto& m : m_) std::fill(m.begin(), m.end(), 0.0);
    for (auto& v : v_) std::fill(v.begin(), v.end(), 0.0);
    step_count_ = 0;
}

double clip_grad_norm(std::span<const std::span<double>> grads, double max_norm) {
    double sq = 0.0;
    for (auto g : grads) {
        for (double x : g) sq += x * x;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (auto g : grads) {
            for (double& x : g) x *= scale;
        }
    }
    return norm;
}

} // namespace icopro::grad
