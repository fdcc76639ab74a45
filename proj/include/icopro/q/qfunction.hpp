#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "icopro/grad/mlp.hpp"

namespace icopro::q {

struct QNetConfig {
    std::vector<std::size_t> trunk_hidden{128, 128};
    std::vector<std::size_t> head_hidden{128};
    grad::Activation activation = grad::Activation::Relu;

    friend bool operator==(const QNetConfig&, const QNetConfig&) = default;
};

/// Dueling Q-network: Q(s,a) = V(s) + A(s,a) - mean_a' A(s,a').
struct QFunction {
    grad::MlpParams trunk;          // obs -> features (activated)
    grad::MlpParams value_head;     // features -> 1
    grad::MlpParams advantage_head; // features -> |A|
    int action_count = 0;
    std::size_t obs_dim = 0;
    QNetConfig net;

    static QFunction create(std::size_t obs_dim, int action_count, const QNetConfig& net, std::uint64_t seed);

    friend bool operator==(const QFunction&, const QFunction&) = default;
};

/// Frozen copy of a QFunction. Only replaced wholesale via sync_target.
class TargetQ {
public:
    TargetQ() = default;
    const QFunction& net() const noexcept { return net_; }

private:
    friend TargetQ sync_target(const QFunction& online);
    explicit TargetQ(QFunction net) : net_(std::move(net)) {}
    QFunction net_;
};

TargetQ sync_target(const QFunction& online);

std::vector<double> q_values(const QFunction& q, std::span<const double> obs);
std::vector<double> q_values(const TargetQ& target, std::span<const double> obs);

/// obs is [batch, obs_dim]; result is [batch, action_count].
grad::DenseTensor q_values_batch(const QFunction& q, const grad::DenseTensor& obs);

struct QTape {
    grad::MlpTape trunk;
    grad::MlpTape value;
    grad::MlpTape advantage;
    grad::DenseTensor q; // [batch, action_count]
};

QTape q_forward_recorded(const QFunction& q, const grad::DenseTensor& obs);

struct QGradients {
    grad::MlpParams trunk;
    grad::MlpParams value_head;
    grad::MlpParams advantage_head;

    static QGradients zeros_like(const QFunction& q);
    void accumulate(const QGradients& other);
};

/// Gradients of a scalar loss given dq = d loss / d Q, shape [batch, action_count].
QGradients q_backward(const QFunction& q, const QTape& tape, const grad::DenseTensor& dq);

std::vector<std::span<double>> parameter_blocks(QFunction& q);
std::vector<std::span<double>> parameter_blocks(QGradients& g);
std::vector<std::span<const double>> parameter_blocks(const QGradients& g);
std::vector<std::size_t> block_sizes(const QFunction& q);

// argmax with ties broken towards the lowest index.
int greedy_action(std::span<const double> row);

/// With probability epsilon a uniform action, otherwise greedy. Draws one uniform
/// number per call regardless of epsilon.
int select_action(const QFunction& q, std::span<const double> obs, double epsilon, std::mt19937_64& rng);
int epsilon_greedy(std::span<const double> row, double epsilon, std::mt19937_64& rng);

/// Writes `<path>` (trunk, value, advantage in the binary parameter format) and
/// `<path>.json` with {action_count, obs_dim, created_at, config_hash, net}.
void save_checkpoint(const QFunction& q, const std::filesystem::path& path, const std::string& config_hash);
QFunction load_checkpoint(const std::filesystem::path& path);
nlohmann::json read_checkpoint_sidecar(const std::filesystem::path& path);

} // namespace icopro::q
