#include "icopro/q/qfunction.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "icopro/errors.hpp"
#include "icopro/grad/param_io.hpp"

namespace icopro::q {
namespace {

std::vector<std::size_t> chain(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
    std::vector<std::size_t> sizes{in};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    if (out > 0) sizes.push_back(out);
    return sizes;
}

// Q = V + A - mean(A), row by row.
grad::DenseTensor combine(const grad::DenseTensor& value, const grad::DenseTensor& adv) {
    const std::size_t batch = adv.rows();
    const std::size_t actions = adv.cols();
    grad::DenseTensor q({batch, actions});
    for (std::size_t b = 0; b < batch; ++b) {
        double mean = 0.0;
        for (std::size_t a = 0; a < actions; ++a) mean += adv(b, a);
        mean /= static_cast<double>(actions);
        for (std::size_t a = 0; a < actions; ++a) q(b, a) = value(b, 0) + adv(b, a) - mean;
    }
    return q;
}

void append_blocks(std::vector<std::span<double>>& out, grad::MlpParams& p) {
    auto b = grad::parameter_blocks(p);
    out.insert(out.end(), b.begin(), b.end());
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

grad::DenseTensor as_batch(const QFunction& q, std::span<const double> obs) {
    if (obs.size() != q.obs_dim) {
        throw ConfigError("observation dimension " + std::to_string(obs.size()) + " does not match Q input " +
                          std::to_string(q.obs_dim));
    }
    return grad::DenseTensor({1, obs.size()}, std::vector<double>(obs.begin(), obs.end()));
}

} // namespace

QFunction QFunction::create(std::size_t obs_dim, int action_count, const QNetConfig& net, std::uint64_t seed) {
    if (obs_dim == 0 || action_count < 1) throw ConfigError("Q-function needs obs_dim > 0 and actions > 0");
    if (net.trunk_hidden.empty()) throw ConfigError("Q-function trunk needs at least one hidden layer");
    std::mt19937_64 rng(seed);
    QFunction q;
    q.obs_dim = obs_dim;
    q.action_count = action_count;
    q.net = net;
    q.trunk = grad::make_mlp(chain(obs_dim, net.trunk_hidden, 0), net.activation, true, rng);
    const std::size_t features = net.trunk_hidden.back();
    q.value_head = grad::make_mlp(chain(features, net.head_hidden, 1), net.activation, false, rng);
    q.advantage_head = grad::make_mlp(chain(features, net.head_hidden, static_cast<std::size_t>(action_count)),
                                      net.activation, false, rng);
    return q;
}

TargetQ sync_target(const QFunction& online) {
    return TargetQ(online);
}

grad::DenseTensor q_values_batch(const QFunction& q, const grad::DenseTensor& obs) {
    if (obs.rank() != 2 || obs.cols() != q.obs_dim) throw ConfigError("Q batch input has wrong shape");
    auto features = grad::mlp_forward(q.trunk, obs);
    return combine(grad::mlp_forward(q.value_head, features), grad::mlp_forward(q.advantage_head, features));
}

std::vector<double> q_values(const QFunction& q, std::span<const double> obs) {
    const auto out = q_values_batch(q, as_batch(q, obs));
    return {out.storage().begin(), out.storage().end()};
}

std::vector<double> q_values(const TargetQ& target, std::span<const double> obs) {
    return q_values(target.net(), obs);
}

QTape q_forward_recorded(const QFunction& q, const grad::DenseTensor& obs) {
    if (obs.rank() != 2 || obs.cols() != q.obs_dim) throw ConfigError("Q batch input has wrong shape");
    QTape tape;
    tape.trunk = grad::mlp_forward_recorded(q.trunk, obs);
    tape.value = grad::mlp_forward_recorded(q.value_head, tape.trunk.output);
    tape.advantage = grad::mlp_forward_recorded(q.advantage_head, tape.trunk.output);
    tape.q = combine(tape.value.output, tape.advantage.output);
    return tape;
}

QGradients QGradients::zeros_like(const QFunction& q) {
    return {grad::zeros_like(q.trunk), grad::zeros_like(q.value_head), grad::zeros_like(q.advantage_head)};
}

void QGradients::accumulate(const QGradients& other) {
    grad::accumulate(trunk, other.trunk);
    grad::accumulate(value_head, other.value_head);
    grad::accumulate(advantage_head, other.advantage_head);
}

QGradients q_backward(const QFunction& q, const QTape& tape, const grad::DenseTensor& dq) {
    if (dq.shape() != tape.q.shape()) throw UsageError("dQ shape does not match recorded Q batch");
    const std::size_t batch = dq.rows();
    const std::size_t actions = dq.cols();
    grad::DenseTensor dv({batch, 1});
    grad::DenseTensor da({batch, actions});
    for (std::size_t b = 0; b < batch; ++b) {
        double sum = 0.0;
        for (std::size_t a = 0; a < actions; ++a) sum += dq(b, a);
        dv(b, 0) = sum;
        const double mean = sum / static_cast<double>(actions);
        for (std::size_t a = 0; a < actions; ++a) da(b, a) = dq(b, a) - mean;
    }
    auto gv = grad::mlp_backward(q.value_head, tape.value, dv);
    auto ga = grad::mlp_backward(q.advantage_head, tape.advantage, da);
    grad::DenseTensor dfeat = std::move(gv.input_grad);
    for (std::size_t i = 0; i < dfeat.size(); ++i) dfeat[i] += ga.input_grad[i];
    auto gt = grad::mlp_backward(q.trunk, tape.trunk, dfeat);
    return {std::move(gt.params), std::move(gv.params), std::move(ga.params)};
}

std::vector<std::span<double>> parameter_blocks(QFunction& q) {
    std::vector<std::span<double>> out;
    append_blocks(out, q.trunk);
    append_blocks(out, q.value_head);
    append_blocks(out, q.advantage_head);
    return out;
}

std::vector<std::span<double>> parameter_blocks(QGradients& g) {
    std::vector<std::span<double>> out;
    append_blocks(out, g.trunk);
    append_blocks(out, g.value_head);
    append_blocks(out, g.advantage_head);
    return out;
}

std::vector<std::span<const double>> parameter_blocks(const QGradients& g) {
    std::vector<std::span<const double>> out;
    for (const auto* p : {&g.trunk, &g.value_head, &g.advantage_head}) {
        auto b = grad::parameter_blocks(*p);
        out.insert(out.end(), b.begin(), b.end());
    }
    return out;
}

std::vector<std::size_t> block_sizes(const QFunction& q) {
    std::vector<std::size_t> sizes;
    for (const auto* p : {&q.trunk, &q.value_head, &q.advantage_head}) {
        for (auto b : grad::parameter_blocks(*p)) sizes.push_back(b.size());
    }
    return sizes;
}

int greedy_action(std::span<const double> row) {
    if (row.empty()) throw ConfigError("greedy_action on empty row");
    std::size_t best = 0;
    for (std::size_t a = 1; a < row.size(); ++a) {
        if (row[a] > row[best]) best = a;
    }
    return static_cast<int>(best);
}

int epsilon_greedy(std::span<const double> row, double epsilon, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const double u = coin(rng);
    if (u < epsilon) {
        std::uniform_int_distribution<int> pick(0, static_cast<int>(row.size()) - 1);
        return pick(rng);
    }
    return greedy_action(row);
}

int select_action(const QFunction& q, std::span<const double> obs, double epsilon, std::mt19937_64& rng) {
    if (epsilon < 0.0 || epsilon > 1.0) throw ConfigError("epsilon must lie in [0, 1]");
    const auto row = q_values(q, obs);
    return epsilon_greedy(row, epsilon, rng);
}

void save_checkpoint(const QFunction& q, const std::filesystem::path& path, const std::string& config_hash) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot open checkpoint for writing: " + path.string());
        grad::write_params(out, q.trunk);
        grad::write_params(out, q.value_head);
        grad::write_params(out, q.advantage_head);
    }
    nlohmann::json side{{"action_count", q.action_count},
                        {"obs_dim", q.obs_dim},
                        {"created_at", utc_now()},
                        {"config_hash", config_hash},
                        {"trunk_hidden", q.net.trunk_hidden},
                        {"head_hidden", q.net.head_hidden},
                        {"activation", q.net.activation == grad::Activation::Relu ? "relu" : "tanh"}};
    std::ofstream meta(path.string() + ".json", std::ios::trunc);
    meta << side.dump(2) << "\n";
}

nlohmann::json read_checkpoint_sidecar(const std::filesystem::path& path) {
    std::ifstream meta(path.string() + ".json");
    if (!meta) throw FormatError("missing checkpoint sidecar: " + path.string() + ".json");
    try {
        return nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad checkpoint sidecar: ") + e.what());
    }
}

QFunction load_checkpoint(const std::filesystem::path& path) {
    const auto side = read_checkpoint_sidecar(path);
    QFunction q;
    try {
        q.action_count = side.at("action_count").get<int>();
        q.obs_dim = side.at("obs_dim").get<std::size_t>();
        q.net.trunk_hidden = side.at("trunk_hidden").get<std::vector<std::size_t>>();
        q.net.head_hidden = side.at("head_hidden").get<std::vector<std::size_t>>();
        q.net.activation = side.at("activation").get<std::string>() == "tanh" ? grad::Activation::Tanh
                                                                               : grad::Activation::Relu;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad checkpoint sidecar: ") + e.what());
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path.string());
    q.trunk = grad::read_params(in, q.net.activation, true);
    q.value_head = grad::read_params(in, q.net.activation, false);
    q.advantage_head = grad::read_params(in, q.net.activation, false);
    if (q.trunk.in_dim() != q.obs_dim || q.advantage_head.out_dim() != static_cast<std::size_t>(q.action_count) ||
        q.value_head.out_dim() != 1 || q.value_head.in_dim() != q.trunk.out_dim() ||
        q.advantage_head.in_dim() != q.trunk.out_dim()) {
        throw FormatError("checkpoint networks do not match sidecar dimensions");
    }
    return q;
}

} // namespace icopro::q
