#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace icopro::grad {

struct AdamConfig {
    double alpha = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 0.01 / 128.0;

    // eps scaled by the minibatch size, as 0.01 / batch.
    static AdamConfig for_batch(std::size_t batch_size, double alpha = 1e-4);
};

/// Bias-corrected Adam over a fixed list of parameter blocks.
class AdamState {
public:
    AdamState(AdamConfig config, std::vector<std::size_t> block_sizes);

    /// One update. Throws NumericalError naming the flat index of the first
    /// non-finite gradient; parameters are left untouched in that case.
    void step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads);

    /// Zeroes both moments and the step counter. Hyperparameters are kept.
    void reset_moments();

    const AdamConfig& config() const noexcept { return config_; }
    std::uint64_t step_count() const noexcept { return step_count_; }
    const std::vector<std::vector<double>>& first_moment() const noexcept { return m_; }
    const std::vector<std::vector<double>>& second_moment() const noexcept { return v_; }

private:
    AdamConfig config_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::uint64_t step_count_ = 0;
};

// Scales gradients so their global L2 norm is at most max_norm. Returns the norm before scaling.
double clip_grad_norm(std::span<const std::span<double>> grads, double max_norm);

} // namespace icopro::grad
