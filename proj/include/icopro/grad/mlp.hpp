#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "icopro/grad/tensor.hpp"

namespace icopro::grad {

enum class Activation { Relu, Tanh };

struct DenseLayer {
    DenseTensor weight; // [out, in]
    DenseTensor bias;   // [out]

    std::size_t in_dim() const noexcept { return weight.cols(); }
    std::size_t out_dim() const noexcept { return weight.rows(); }

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Fully connected network. Every layer except the last is followed by
/// `activation`; the last one too when `activate_output` is set.
struct MlpParams {
    std::vector<DenseLayer> layers;
    Activation activation = Activation::Relu;
    bool activate_output = false;

    std::size_t in_dim() const;
    std::size_t out_dim() const;
    std::size_t parameter_count() const;

    // Throws ConfigError unless layer shapes chain.
    void validate() const;

    friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Layer sizes {in, h1, ..., out}. Weights are uniform in +-sqrt(6 / fan_in), biases zero.
MlpParams make_mlp(const std::vector<std::size_t>& sizes, Activation activation, bool activate_output,
                   std::mt19937_64& rng);

MlpParams zeros_like(const MlpParams& params);

// Parameter storage as flat blocks, in order W0, b0, W1, b1, ...
std::vector<std::span<double>> parameter_blocks(MlpParams& params);
std::vector<std::span<const double>> parameter_blocks(const MlpParams& params);

/// Input is [in] or [batch, in]; output has the matching rank.
DenseTensor mlp_forward(const MlpParams& params, const DenseTensor& input);

/// Activations kept for a later backward pass. Bound to the parameter object
/// it was recorded against.
struct MlpTape {
    const MlpParams* params = nullptr;
    std::uint64_t params_fingerprint = 0;
    bool vector_input = false;
    std::vector<DenseTensor> inputs;  // input to each layer, [batch, in]
    std::vector<DenseTensor> outputs; // post-activation output of each layer, [batch, out]
    DenseTensor output;               // final output in caller's rank
};

MlpTape mlp_forward_recorded(const MlpParams& params, const DenseTensor& input);

struct MlpGradients {
    MlpParams params;       // same layout as the network
    DenseTensor input_grad; // d loss / d input, same shape as the recorded input
};

/// Reverse pass for `tape`. `loss_grad` is d loss / d output.
MlpGradients mlp_backward(const MlpParams& params, const MlpTape& tape, const DenseTensor& loss_grad);

// dst += src, layer by layer.
void accumulate(MlpParams& dst, const MlpParams& src);

} // namespace icopro::grad
