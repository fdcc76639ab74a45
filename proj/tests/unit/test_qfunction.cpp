#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "icopro/errors.hpp"
#include "icopro/grad/adam.hpp"
#include "icopro/q/qfunction.hpp"
#include "oracles.hpp"

using namespace icopro;
using grad::DenseTensor;

namespace {

q::QFunction small_q(std::uint64_t seed, std::size_t obs = 6, int actions = 5) {
    q::QNetConfig net;
    net.trunk_hidden = {16, 16};
    net.head_hidden = {8};
    return q::QFunction::create(obs, actions, net, seed);
}

std::vector<double> random_obs(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> x(n);
    for (auto& v : x) v = g(rng);
    return x;
}

double value_of(const q::QFunction& q, const std::vector<double>& obs) {
    DenseTensor x({1, obs.size()}, obs);
    return grad::mlp_forward(q.value_head, grad::mlp_forward(q.trunk, x))[0];
}

} // namespace

TEST(QFunction, ZeroAdvantageHeadGivesConstantRow) {
    auto q = small_q(1);
    for (auto& layer : q.advantage_head.layers) {
        layer.weight.fill(0.0);
        layer.bias.fill(0.0);
    }
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        auto obs = random_obs(6, rng);
        auto row = q::q_values(q, obs);
        const double v = value_of(q, obs);
        for (double x : row) EXPECT_DOUBLE_EQ(x, v);
    }
}

TEST(QFunction, HandSetNetworkMatchesAffineAlgebra) {
    q::QNetConfig net;
    net.trunk_hidden = {1};
    net.head_hidden = {};
    auto q = q::QFunction::create(1, 3, net, 0);
    q.trunk.layers[0].weight = DenseTensor::matrix(1, 1, {2.0});
    q.trunk.layers[0].bias = DenseTensor::vector({1.0});
    q.value_head.layers[0].weight = DenseTensor::matrix(1, 1, {0.5});
    q.value_head.layers[0].bias = DenseTensor::vector({-1.0});
    q.advantage_head.layers[0].weight = DenseTensor::matrix(3, 1, {1.0, 2.0, 3.0});
    q.advantage_head.layers[0].bias = DenseTensor::vector({0.0, 0.0, 0.5});
    // h = relu(2*1.5+1) = 4; V = 1; A = {4, 8, 12.5}; mean A = 24.5/3.
    auto row = q::q_values(q, std::vector<double>{1.5});
    const double mean = 24.5 / 3.0;
    EXPECT_NEAR(row[0], 1.0 + 4.0 - mean, 1e-12);
    EXPECT_NEAR(row[1], 1.0 + 8.0 - mean, 1e-12);
    EXPECT_NEAR(row[2], 1.0 + 12.5 - mean, 1e-12);
}

TEST(QFunction, AdvantagesAreMeanCentred) {
    auto q = small_q(3);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        auto obs = random_obs(6, rng);
        auto row = q::q_values(q, obs);
        const double v = value_of(q, obs);
        double s = 0.0;
        for (double x : row) s += x - v;
        EXPECT_NEAR(s, 0.0, 1e-12);
    }
}

TEST(QFunction, DimensionMismatchIsConfigError) {
    auto q = small_q(5);
    EXPECT_THROW(q::q_values(q, std::vector<double>(5, 0.0)), ConfigError);
    EXPECT_THROW(q::q_values_batch(q, DenseTensor({2, 7})), ConfigError);
}

TEST(QFunction, BatchMatchesSingleRows) {
    auto q = small_q(6);
    std::mt19937_64 rng(7);
    std::vector<double> flat;
    std::vector<std::vector<double>> rows;
    for (int b = 0; b < 9; ++b) {
        rows.push_back(random_obs(6, rng));
        flat.insert(flat.end(), rows.back().begin(), rows.back().end());
    }
    auto batch = q::q_values_batch(q, DenseTensor({9, 6}, flat));
    for (std::size_t b = 0; b < 9; ++b) {
        auto single = q::q_values(q, rows[b]);
        for (std::size_t a = 0; a < 5; ++a) EXPECT_NEAR(batch(b, a), single[a], 1e-12);
    }
}

TEST(QFunction, BackwardMatchesFiniteDifferences) {
    for (auto act : {grad::Activation::Tanh, grad::Activation::Relu}) {
        q::QNetConfig net;
        net.trunk_hidden = {7, 5};
        net.head_hidden = {6};
        net.activation = act;
        auto q = q::QFunction::create(4, 3, net, 11);
        std::mt19937_64 rng(12);
        auto flat = random_obs(4 * 5, rng);
        DenseTensor obs({5, 4}, flat);
        auto coeff = random_obs(5 * 3, rng);
        auto loss = [&] {
            auto out = q::q_values_batch(q, obs);
            double s = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) s += coeff[i] * out[i] + 0.5 * out[i] * out[i];
            return s;
        };
        auto tape = q::q_forward_recorded(q, obs);
        DenseTensor dq(tape.q.shape());
        for (std::size_t i = 0; i < dq.size(); ++i) dq[i] = coeff[i] + tape.q[i];
        auto g = q::q_backward(q, tape, dq);
        auto params = q::parameter_blocks(q);
        auto grads = q::parameter_blocks(std::as_const(g));
        ASSERT_EQ(params.size(), grads.size());
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto numeric = oracle::central_differences(params[k], loss);
            EXPECT_LT(oracle::rel_error(grads[k], numeric), 1e-6) << "block " << k;
        }
    }
}

TEST(QFunction, GreedyTiesGoToLowestIndex) {
    EXPECT_EQ(q::greedy_action(std::vector<double>{1.0, 3.0, 3.0, 2.0}), 1);
    EXPECT_EQ(q::greedy_action(std::vector<double>{0.0, 0.0, 0.0}), 0);
    EXPECT_EQ(q::greedy_action(std::vector<double>{-1.0, -2.0, -0.5}), 2);
}

TEST(QFunction, EpsilonZeroIsDeterministicGreedy) {
    auto q = small_q(8);
    std::mt19937_64 rng(9), obs_rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        auto obs = random_obs(6, obs_rng);
        EXPECT_EQ(q::select_action(q, obs, 0.0, rng), q::greedy_action(q::q_values(q, obs)));
    }
}

TEST(QFunction, EpsilonOneIsUniformWithinThreeSigma) {
    auto q = small_q(13);
    std::mt19937_64 rng(14);
    const std::vector<double> obs(6, 0.3);
    const int draws = 50000;
    std::vector<int> counts(5, 0);
    for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(q::select_action(q, obs, 1.0, rng))];
    const double p = 0.2;
    const double sigma = std::sqrt(draws * p * (1.0 - p));
    for (int c : counts) EXPECT_LT(std::abs(c - draws * p), 3.0 * sigma);
}

TEST(QFunction, EpsilonSmallMostlyGreedy) {
    auto q = small_q(15);
    std::mt19937_64 rng(16);
    const std::vector<double> obs(6, -0.2);
    const int greedy = q::greedy_action(q::q_values(q, obs));
    const int draws = 50000;
    int hits = 0;
    for (int i = 0; i < draws; ++i) hits += q::select_action(q, obs, 0.01, rng) == greedy;
    // P(greedy) = 0.99 + 0.01/5.
    const double p = 0.99 + 0.002;
    const double sigma = std::sqrt(draws * p * (1.0 - p));
    EXPECT_LT(std::abs(hits - draws * p), 3.0 * sigma);
}

TEST(QFunction, EpsilonOutOfRangeRejected) {
    auto q = small_q(17);
    std::mt19937_64 rng(0);
    const std::vector<double> obs(6, 0.0);
    EXPECT_THROW(q::select_action(q, obs, 1.5, rng), ConfigError);
    EXPECT_THROW(q::select_action(q, obs, -0.1, rng), ConfigError);
}

TEST(QFunction, TargetSyncCopiesAndFreezes) {
    auto q = small_q(18);
    auto tgt = q::sync_target(q);
    std::mt19937_64 rng(19);
    std::vector<std::vector<double>> probes;
    for (int i = 0; i < 20; ++i) probes.push_back(random_obs(6, rng));
    std::vector<std::vector<double>> before;
    for (auto& s : probes) {
        before.push_back(q::q_values(tgt, s));
        EXPECT_EQ(before.back(), q::q_values(q, s));
    }
    EXPECT_EQ(q::sync_target(q).net(), tgt.net());

    // One Adam step on the online network.
    DenseTensor obs({1, 6}, probes[0]);
    auto tape = q::q_forward_recorded(q, obs);
    DenseTensor dq(tape.q.shape(), 1.0);
    auto g = q::q_backward(q, tape, dq);
    grad::AdamState adam(grad::AdamConfig{}, q::block_sizes(q));
    auto params = q::parameter_blocks(q);
    adam.step(params, q::parameter_blocks(std::as_const(g)));

    bool moved = false;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        EXPECT_EQ(q::q_values(tgt, probes[i]), before[i]);
        moved = moved || q::q_values(q, probes[i]) != before[i];
    }
    EXPECT_TRUE(moved);
}

TEST(QFunction, ArgmaxInvariantToAdvantageBiasShift) {
    auto q = small_q(20);
    std::mt19937_64 rng(21);
    std::vector<std::vector<double>> probes;
    std::vector<int> greedy;
    for (int i = 0; i < 200; ++i) {
        probes.push_back(random_obs(6, rng));
        greedy.push_back(q::greedy_action(q::q_values(q, probes.back())));
    }
    for (double& b : q.advantage_head.layers.back().bias.data()) b += 3.25;
    for (std::size_t i = 0; i < probes.size(); ++i) EXPECT_EQ(q::greedy_action(q::q_values(q, probes[i])), greedy[i]);
}

TEST(QFunction, CheckpointRoundTripIsBitExact) {
    auto q = small_q(22, 42, 5);
    const auto dir = std::filesystem::temp_directory_path() / "icopro_qfunction_test";
    std::filesystem::remove_all(dir);
    const auto path = dir / "net.ckpt";
    q::save_checkpoint(q, path, "abc123");
    auto loaded = q::load_checkpoint(path);
    EXPECT_EQ(loaded, q);
    auto side = q::read_checkpoint_sidecar(path);
    EXPECT_EQ(side.at("action_count").get<int>(), 5);
    EXPECT_EQ(side.at("obs_dim").get<int>(), 42);
    EXPECT_EQ(side.at("config_hash").get<std::string>(), "abc123");
    EXPECT_TRUE(side.contains("created_at"));
    std::mt19937_64 rng(23);
    for (int i = 0; i < 50; ++i) {
        auto s = random_obs(42, rng);
        EXPECT_EQ(q::q_values(loaded, s), q::q_values(q, s));
    }
    std::filesystem::remove_all(dir);
}

TEST(QFunction, MissingSidecarIsFormatError) {
    const auto dir = std::filesystem::temp_directory_path() / "icopro_qfunction_missing";
    std::filesystem::remove_all(dir);
    EXPECT_THROW(q::load_checkpoint(dir / "none.ckpt"), FormatError);
}
