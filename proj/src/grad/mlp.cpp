#include "icopro/grad/mlp.hpp"

#include <cmath>
#include <string>

#include <Eigen/Core>

#include "icopro/errors.hpp"

namespace icopro::grad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::RowVectorXd>;

MatrixMap as_matrix(DenseTensor& t) {
    return MatrixMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

ConstMatrixMap as_matrix(const DenseTensor& t) {
    return ConstMatrixMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                          static_cast<Eigen::Index>(t.cols()));
}

std::uint64_t fingerprint(const MlpParams& params) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 1099511628211ULL;
    };
    mix(params.layers.size());
    for (const auto& layer : params.layers) {
        mix(layer.in_dim());
        mix(layer.out_dim());
    }
    mix(params.activate_output ? 1 : 0);
    return h;
}

bool layer_activated(const MlpParams& params, std::size_t k) {
    return k + 1 < params.layers.size() || params.activate_output;
}

void apply_activation(Activation act, MatrixMap m) {
    if (act == Activation::Relu) {
        m = m.cwiseMax(0.0);
    } else {
        m = m.array().tanh().matrix();
    }
}

// Multiplies grad in place by the activation derivative, expressed through the activated output.
void activation_backward(Activation act, const DenseTensor& activated, MatrixMap grad) {
    auto out = as_matrix(activated);
    if (act == Activation::Relu) {
        grad = (out.array() > 0.0).select(grad, 0.0);
    } else {
        grad.array() *= (1.0 - out.array().square());
    }
}

DenseTensor as_batch(const MlpParams& params, const DenseTensor& input, bool& vector_input) {
    if (params.layers.empty()) throw ConfigError("mlp has no layers");
    if (input.rank() != 1 && input.rank() != 2) throw ConfigError("mlp input must be rank 1 or 2");
    if (input.cols() != params.in_dim()) {
        throw ConfigError("mlp input dimension " + std::to_string(input.cols()) + " does not match " +
                          std::to_string(params.in_dim()));
    }
    vector_input = input.rank() == 1;
    if (!vector_input) return input;
    return DenseTensor({1, input.cols()}, input.storage());
}

DenseTensor layer_forward(const DenseLayer& layer, const DenseTensor& x) {
    DenseTensor y({x.rows(), layer.out_dim()});
    auto ym = as_matrix(y);
    ym.noalias() = as_matrix(x) * as_matrix(layer.weight).transpose();
    ym.rowwise() += ConstVectorMap(layer.bias.data().data(), static_cast<Eigen::Index>(layer.out_dim()));
    return y;
}

void check_finite(const DenseTensor& t, const char* what) {
    const std::size_t bad = t.first_non_finite();
    if (bad != t.size()) throw NumericalError(std::string("non-finite value in ") + what, bad);
}

} // namespace

std::size_t MlpParams::in_dim() const {
    return layers.empty() ? 0 : layers.front().in_dim();
}

std::size_t MlpParams::out_dim() const {
    return layers.empty() ? 0 : layers.back().out_dim();
}

std::size_t MlpParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

void MlpParams::validate() const {
    if (layers.empty()) throw ConfigError("mlp has no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const auto& l = layers[k];
        if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.size() != l.out_dim()) {
            throw ConfigError("layer " + std::to_string(k) + " has inconsistent weight/bias shapes");
        }
        if (k > 0 && layers[k - 1].out_dim() != l.in_dim()) {
            throw ConfigError("layer " + std::to_string(k) + " input does not chain with previous output");
        }
    }
}

MlpParams make_mlp(const std::vector<std::size_t>& sizes, Activation activation, bool activate_output,
                   std::mt19937_64& rng) {
    if (sizes.size() < 2) throw ConfigError("mlp needs at least input and output sizes");
    MlpParams p;
    p.activation = activation;
    p.activate_output = activate_output;
    for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
        const std::size_t in = sizes[k];
        const std::size_t out = sizes[k + 1];
        if (in == 0 || out == 0) throw ConfigError("mlp layer sizes must be positive");
        DenseLayer layer{DenseTensor({out, in}), DenseTensor({out})};
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& w : layer.weight.data()) w = dist(rng);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

MlpParams zeros_like(const MlpParams& params) {
    MlpParams z;
    z.activation = params.activation;
    z.activate_output = params.activate_output;
    z.layers.reserve(params.layers.size());
    for (const auto& l : params.layers) {
        z.layers.push_back({DenseTensor(l.weight.shape()), DenseTensor(l.bias.shape())});
    }
    return z;
}

std::vector<std::span<double>> parameter_blocks(MlpParams& params) {
    std::vector<std::span<double>> blocks;
    for (auto& l : params.layers) {
        blocks.push_back(l.weight.data());
        blocks.push_back(l.bias.data());
    }
    return blocks;
}

std::vector<std::span<const double>> parameter_blocks(const MlpParams& params) {
    std::vector<std::span<const double>> blocks;
    for (const auto& l : params.layers) {
        blocks.push_back(l.weight.data());
        blocks.push_back(l.bias.data());
    }
    return blocks;
}

DenseTensor mlp_forward(const MlpParams& params, const DenseTensor& input) {
    bool vector_input = false;
    DenseTensor x = as_batch(params, input, vector_input);
    for (std::size_t k = 0; k < params.layers.size(); ++k) {
        x = layer_forward(params.layers[k], x);
        if (layer_activated(params, k)) apply_activation(params.activation, as_matrix(x));
    }
    check_finite(x, "mlp output");
    if (vector_input) return DenseTensor({x.cols()}, std::move(x.storage()));
    return x;
}

MlpTape mlp_forward_recorded(const MlpParams& params, const DenseTensor& input) {
    MlpTape tape;
    tape.params = &params;
    tape.params_fingerprint = fingerprint(params);
    DenseTensor x = as_batch(params, input, tape.vector_input);
    tape.inputs.reserve(params.layers.size());
    tape.outputs.reserve(params.layers.size());
    for (std::size_t k = 0; k < params.layers.size(); ++k) {
        DenseTensor y = layer_forward(params.layers[k], x);
        if (layer_activated(params, k)) apply_activation(params.activation, as_matrix(y));
        tape.inputs.push_back(std::move(x));
        x = y;
        tape.outputs.push_back(std::move(y));
    }
    check_finite(x, "mlp output");
    tape.output = tape.vector_input ? DenseTensor({x.cols()}, x.storage()) : x;
    return tape;
}

MlpGradients mlp_backward(const MlpParams& params, const MlpTape& tape, const DenseTensor& loss_grad) {
    if (tape.params != &params || tape.params_fingerprint != fingerprint(params) ||
        tape.outputs.size() != params.layers.size()) {
        throw UsageError("mlp_backward called without a matching forward pass");
    }
    if (loss_grad.shape() != tape.output.shape()) {
        throw UsageError("loss gradient shape does not match recorded output");
    }
    const std::size_t batch = tape.inputs.front().rows();
    MlpGradients result{zeros_like(params), {}};
    DenseTensor grad({batch, params.out_dim()}, loss_grad.storage());

    for (std::size_t k = params.layers.size(); k-- > 0;) {
        const auto& layer = params.layers[k];
        auto g = as_matrix(grad);
        if (layer_activated(params, k)) activation_backward(params.activation, tape.outputs[k], g);

        auto& out = result.params.layers[k];
        as_matrix(out.weight).noalias() = g.transpose() * as_matrix(tape.inputs[k]);
        Eigen::Map<Eigen::RowVectorXd>(out.bias.data().data(), static_cast<Eigen::Index>(layer.out_dim())) =
            g.colwise().sum();

        DenseTensor next({batch, layer.in_dim()});
        as_matrix(next).noalias() = g * as_matrix(layer.weight);
        grad = std::move(next);
    }
    result.input_grad = tape.vector_input ? DenseTensor({grad.cols()}, std::move(grad.storage())) : grad;
    return result;
}

void accumulate(MlpParams& dst, const MlpParams& src) {
    if (dst.layers.size() != src.layers.size()) throw ConfigError("accumulate: layer count mismatch");
    for (std::size_t k = 0; k < dst.layers.size(); ++k) {
        auto& d = dst.layers[k];
        const auto& s = src.layers[k];
        if (d.weight.shape() != s.weight.shape()) throw ConfigError("accumulate: shape mismatch");
        as_matrix(d.weight) += as_matrix(s.weight);
        for (std::size_t i = 0; i < d.bias.size(); ++i) d.bias[i] += s.bias[i];
    }
}

} // namespace icopro::grad
