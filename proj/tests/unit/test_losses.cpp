#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "icopro/errors.hpp"
#include "icopro/losses/losses.hpp"
#include "oracles.hpp"

using namespace icopro;
using buffers::Transition;
using losses::EnvSample;
using losses::LabelSample;

namespace {

// A Q-function whose output is the same row for every observation.
q::QFunction constant_q(std::vector<double> row, std::size_t obs_dim = 3) {
    q::QNetConfig net;
    net.trunk_hidden = {4};
    net.head_hidden = {};
    auto q = q::QFunction::create(obs_dim, static_cast<int>(row.size()), net, 0);
    for (auto* p : {&q.trunk, &q.value_head, &q.advantage_head}) {
        for (auto& layer : p->layers) {
            layer.weight.fill(0.0);
            layer.bias.fill(0.0);
        }
    }
    const double mean = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
    q.value_head.layers.back().bias[0] = mean;
    for (std::size_t a = 0; a < row.size(); ++a) q.advantage_head.layers.back().bias[a] = row[a] - mean;
    return q;
}

std::vector<double> gaussian(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> g(0.0, sd);
    std::vector<double> x(n);
    for (auto& v : x) v = g(rng);
    return x;
}

Transition make_transition(std::vector<double> obs, int action, double reward, std::vector<double> next, bool terminal,
                           std::uint64_t episode = 0, int step = 0) {
    Transition t;
    t.obs = std::move(obs);
    t.action = action;
    t.reward = reward;
    t.next_obs = std::move(next);
    t.terminal = terminal;
    t.episode_id = episode;
    t.timestep = step;
    return t;
}

} // namespace

TEST(MarginLoss, SpecExamples) {
    EXPECT_DOUBLE_EQ(losses::margin_loss(std::vector<double>{1.0, 0.0, 0.0, 0.0, 0.0}, 0, 0.05), 0.0);
    EXPECT_NEAR(losses::margin_loss(std::vector<double>{0.1, 0.5}, 0, 0.05), 0.45, 1e-12);
    EXPECT_NEAR(losses::margin_loss(std::vector<double>{0.5, 0.5}, 0, 0.05), 0.05, 1e-12);
}

TEST(MarginLoss, ZeroExactlyWhenLabelLeadsByMargin) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> pick(0, 4);
    const double C = 0.05;
    int zeros = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        auto q = gaussian(5, rng, 0.1);
        const int label = pick(rng);
        // Push some rows over the boundary so both sides are exercised.
        if (trial % 3 == 0) q[static_cast<std::size_t>(label)] += 0.3;
        const double loss = losses::margin_loss(q, label, C);
        EXPECT_NEAR(loss, oracle::margin_scan(q, label, C), 1e-12);
        EXPECT_GE(loss, 0.0);
        bool dominates = true;
        for (std::size_t a = 0; a < q.size(); ++a) {
            if (static_cast<int>(a) != label && q[static_cast<std::size_t>(label)] < q[a] + C) dominates = false;
        }
        EXPECT_EQ(loss == 0.0, dominates);
        zeros += dominates;
    }
    EXPECT_GT(zeros, 100);
    EXPECT_LT(zeros, 9900);
}

TEST(MarginLoss, ShiftInvariant) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 1000; ++trial) {
        auto q = gaussian(5, rng);
        auto shifted = q;
        for (auto& v : shifted) v += 7.5;
        EXPECT_NEAR(losses::margin_loss(q, trial % 5, 0.05), losses::margin_loss(shifted, trial % 5, 0.05), 1e-12);
    }
}

TEST(MarginLoss, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        auto q = gaussian(5, rng);
        const int label = trial % 5;
        auto g = losses::margin_loss_grad(q, label, 0.05);
        auto numeric = oracle::central_differences(q, [&] { return losses::margin_loss(q, label, 0.05); }, 1e-7);
        for (std::size_t a = 0; a < 5; ++a) EXPECT_NEAR(g[a], numeric[a], 1e-6);
    }
}

TEST(MarginLoss, RejectsBadLabel) {
    EXPECT_THROW(losses::margin_loss(std::vector<double>{0.0, 1.0}, 2, 0.05), ConfigError);
}

TEST(TdLoss, SpecExamples) {
    const std::vector<double> next_row{2.0, 1.0};
    const std::vector<double> zero_row{0.0, 0.0};
    // Terminal bootstraps nothing.
    const double y_term = losses::td1_target(-1.0, true, 0.99, next_row);
    EXPECT_DOUBLE_EQ((-1.0 - y_term) * (-1.0 - y_term), 0.0);
    const double y = losses::td1_target(1.0, false, 0.99, next_row);
    EXPECT_NEAR((0.0 - y) * (0.0 - y), 8.8804, 1e-12);
    const double y0 = losses::td1_target(0.0, false, 0.99, zero_row);
    EXPECT_NEAR((0.3 - y0) * (0.3 - y0), 0.09, 1e-12);
}

TEST(TdLoss, NetworkLevelMatchesTargets) {
    auto online = constant_q({0.0, 0.3});
    auto tgt = q::sync_target(constant_q({2.0, 1.0}));
    auto t = make_transition({0, 0, 0}, 0, 1.0, {1, 1, 1}, false);
    EXPECT_NEAR(losses::td1_loss(t, online, tgt, 0.99), 8.8804, 1e-12);
    auto zero_tgt = q::sync_target(constant_q({0.0, 0.0}));
    t.action = 1;
    t.reward = 0.0;
    EXPECT_NEAR(losses::td1_loss(t, online, zero_tgt, 0.99), 0.09, 1e-12);
    auto terminal = make_transition({0, 0, 0}, 0, -1.0, {0, 0, 0}, true);
    EXPECT_DOUBLE_EQ(losses::td1_loss(terminal, constant_q({-1.0, 0.0}), tgt, 0.99), 0.0);
}

TEST(TdnLoss, ThreeUnitRewardsUndiscounted) {
    std::vector<Transition> w;
    for (int k = 0; k < 3; ++k) w.push_back(make_transition({0, 0, 0}, 0, 1.0, {0, 0, 0}, k == 2, 0, k));
    auto online = constant_q({0.0, 5.0});
    auto tgt = q::sync_target(constant_q({4.0, 4.0}));
    EXPECT_DOUBLE_EQ(losses::tdn_loss(w, online, tgt, 1.0, 3), 9.0);
}

TEST(TdnLoss, TruncatesAtTerminal) {
    std::vector<Transition> w{make_transition({0, 0, 0}, 0, 2.0, {0, 0, 0}, false, 4, 0),
                              make_transition({0, 0, 0}, 1, 3.0, {0, 0, 0}, true, 4, 1),
                              make_transition({0, 0, 0}, 0, 100.0, {0, 0, 0}, false, 5, 0)};
    auto target = losses::nstep_target(w, 0.9, 3);
    EXPECT_NEAR(target.discounted_return, 2.0 + 0.9 * 3.0, 1e-12);
    EXPECT_EQ(target.bootstrap_discount, 0.0);
    EXPECT_EQ(target.length, 2);
}

TEST(TdnLoss, CrossingEpisodesWithoutTerminalIsUsageError) {
    std::vector<Transition> w{make_transition({0, 0, 0}, 0, 1.0, {0, 0, 0}, false, 1, 0),
                              make_transition({0, 0, 0}, 0, 1.0, {0, 0, 0}, false, 2, 0)};
    EXPECT_THROW(losses::nstep_target(w, 0.99, 2), UsageError);
}

TEST(TdnLoss, ShortWindowBootstrapsFromLastStep) {
    std::vector<Transition> w{make_transition({0, 0, 0}, 0, 1.0, {0, 0, 0}, false, 1, 0),
                              make_transition({0, 0, 0}, 0, 1.0, {0, 0, 0}, false, 1, 1)};
    auto target = losses::nstep_target(w, 0.5, 20);
    EXPECT_DOUBLE_EQ(target.discounted_return, 1.5);
    EXPECT_DOUBLE_EQ(target.bootstrap_discount, 0.25);
    EXPECT_EQ(target.bootstrap_index, 1u);
}

TEST(TdnLoss, OneStepEqualsTd1Exactly) {
    std::mt19937_64 rng(4);
    q::QNetConfig net;
    net.trunk_hidden = {8};
    net.head_hidden = {8};
    auto online = q::QFunction::create(3, 4, net, 5);
    auto tgt = q::sync_target(q::QFunction::create(3, 4, net, 6));
    std::bernoulli_distribution term(0.2);
    for (int i = 0; i < 1000; ++i) {
        auto t = make_transition(gaussian(3, rng), i % 4, gaussian(1, rng)[0], gaussian(3, rng), term(rng));
        std::vector<Transition> w{t};
        EXPECT_EQ(losses::tdn_loss(w, online, tgt, 0.99, 1), losses::td1_loss(t, online, tgt, 0.99));
    }
}

TEST(PseudoMargin, SpecExamples) {
    EXPECT_NEAR(losses::pseudo_margin_loss(std::vector<double>{0.6, 0.5}, std::vector<double>{0.0, 1.0}, 0.05), 0.15,
                1e-12);
    EXPECT_DOUBLE_EQ(losses::pseudo_margin_loss(std::vector<double>{1.0, 0.2}, std::vector<double>{3.0, 0.0}, 0.05),
                     0.0);
    const std::vector<double> same{0.1, 0.9, 0.3};
    EXPECT_DOUBLE_EQ(losses::pseudo_margin_loss(same, same, 0.05), 0.0);
}

TEST(PvpLoss, SpecExamples) {
    EXPECT_DOUBLE_EQ(losses::pvp_loss(std::vector<double>{-1.0, 1.0}, 0, 1), 0.0);
    EXPECT_DOUBLE_EQ(losses::pvp_loss(std::vector<double>{0.0, 0.0}, 0, 1), 2.0);
    EXPECT_DOUBLE_EQ(losses::pvp_loss(std::vector<double>{1.0, 0.0}, 0, 0), 4.0);
}

namespace {

struct PropFixture {
    std::vector<Transition> transitions;
    std::vector<std::vector<double>> label_obs;
    std::vector<EnvSample> env;
    std::vector<LabelSample> labels;
};

PropFixture random_fixture(std::mt19937_64& rng, std::size_t obs_dim, int actions, std::size_t B, std::size_t L) {
    PropFixture f;
    std::uniform_int_distribution<int> act(0, actions - 1);
    std::bernoulli_distribution coin(0.3);
    f.transitions.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
        f.transitions.push_back(make_transition(gaussian(obs_dim, rng), act(rng), gaussian(1, rng)[0],
                                                gaussian(obs_dim, rng), coin(rng), b, 0));
    }
    for (std::size_t b = 0; b < B; ++b) {
        EnvSample s;
        s.transition = &f.transitions[b];
        s.nstep.discounted_return = gaussian(1, rng)[0];
        s.nstep.bootstrap_discount = coin(rng) ? 0.0 : 0.8;
        s.nstep_obs = &f.transitions[(b + 1) % B].obs;
        s.labeled = coin(rng);
        f.env.push_back(s);
    }
    f.label_obs.reserve(L);
    for (std::size_t l = 0; l < L; ++l) {
        f.label_obs.push_back(gaussian(obs_dim, rng));
        f.labels.push_back(LabelSample{&f.label_obs.back(), act(rng), act(rng)});
    }
    return f;
}

} // namespace

TEST(CombinedProp, AllComponentsOneGivesThree) {
    // Online row [0.5, -0.45]; target row [0, 1] so the pseudo label is 1.
    auto online = constant_q({0.5, -0.45});
    auto tgt = q::sync_target(constant_q({0.0, 1.0}));
    auto t = make_transition({0, 0, 0}, 0, 0.5 - 1.0, {0, 0, 0}, true);
    EnvSample s;
    s.transition = &t;
    s.nstep.discounted_return = 0.5 + 1.0;
    s.nstep.bootstrap_discount = 0.0;
    s.labeled = false;
    std::vector<double> lobs{1, 2, 3};
    std::vector<EnvSample> env{s};
    std::vector<LabelSample> labels{LabelSample{&lobs, 0, 1}};
    losses::LossWeights lw;
    auto r = losses::combined_prop_loss(env, labels, online, tgt, losses::PropWeights::icopro(lw));
    EXPECT_NEAR(r.terms.td1, 1.0, 1e-12);
    EXPECT_NEAR(r.terms.tdn, 1.0, 1e-12);
    EXPECT_NEAR(r.terms.label_margin, 1.0, 1e-12);
    EXPECT_NEAR(r.terms.pseudo_margin, 1.0, 1e-12);
    EXPECT_NEAR(r.total, 3.0, 1e-12);
}

TEST(CombinedProp, EndpointsDropOneMarginTerm) {
    std::mt19937_64 rng(7);
    q::QNetConfig net;
    net.trunk_hidden = {8};
    net.head_hidden = {8};
    auto online = q::QFunction::create(4, 3, net, 8);
    auto tgt = q::sync_target(q::QFunction::create(4, 3, net, 9));
    auto f = random_fixture(rng, 4, 3, 16, 16);
    losses::LossWeights lw;
    lw.pseudo_weight = 0.0;
    auto r0 = losses::combined_prop_loss(f.env, f.labels, online, tgt, losses::PropWeights::icopro(lw));
    EXPECT_NEAR(r0.total, r0.terms.td1 + r0.terms.tdn + r0.terms.label_margin, 1e-12);
    auto dq = losses::combined_prop_loss(f.env, f.labels, online, tgt, losses::PropWeights::dqfd(lw));
    EXPECT_NEAR(dq.total, r0.total, 1e-12);
    lw.pseudo_weight = 1.0;
    auto r1 = losses::combined_prop_loss(f.env, f.labels, online, tgt, losses::PropWeights::icopro(lw));
    EXPECT_NEAR(r1.total, r1.terms.td1 + r1.terms.tdn + r1.terms.pseudo_margin, 1e-12);
}

TEST(CombinedProp, LinearInPseudoWeight) {
    std::mt19937_64 rng(10);
    q::QNetConfig net;
    net.trunk_hidden = {8};
    net.head_hidden = {8};
    auto online = q::QFunction::create(4, 3, net, 11);
    auto tgt = q::sync_target(q::QFunction::create(4, 3, net, 12));
    auto f = random_fixture(rng, 4, 3, 32, 32);
    auto total = [&](double wbar) {
        losses::LossWeights lw;
        lw.pseudo_weight = wbar;
        return losses::combined_prop_loss(f.env, f.labels, online, tgt, losses::PropWeights::icopro(lw)).total;
    };
    const double t0 = total(0.0), t1 = total(1.0);
    for (double wbar : {0.25, 0.5}) EXPECT_NEAR(total(wbar), (1.0 - wbar) * t0 + wbar * t1, 1e-12);
}

TEST(CombinedProp, EmptyLabelBatchContributesZero) {
    std::mt19937_64 rng(13);
    q::QNetConfig net;
    net.trunk_hidden = {8};
    net.head_hidden = {};
    auto online = q::QFunction::create(4, 3, net, 14);
    auto tgt = q::sync_target(online);
    auto f = random_fixture(rng, 4, 3, 8, 0);
    auto r = losses::combined_prop_loss(f.env, {}, online, tgt, losses::PropWeights::icopro({}));
    EXPECT_TRUE(r.terms.empty_labels);
    EXPECT_EQ(r.terms.label_margin, 0.0);
    EXPECT_NEAR(r.total, r.terms.td1 + r.terms.tdn + 0.5 * r.terms.pseudo_margin, 1e-12);
}

TEST(CombinedProp, ZeroRewardsIgnoresStoredRewards) {
    std::mt19937_64 rng(15);
    q::QNetConfig net;
    net.trunk_hidden = {8};
    net.head_hidden = {};
    auto online = q::QFunction::create(4, 3, net, 16);
    auto tgt = q::sync_target(online);
    auto f = random_fixture(rng, 4, 3, 8, 8);
    auto w = losses::PropWeights::pvp_variant({}, false);
    auto before = losses::combined_prop_loss(f.env, f.labels, online, tgt, w);
    for (auto& t : f.transitions) t.reward += 10.0;
    for (auto& s : f.env) s.nstep.discounted_return -= 4.0;
    auto after = losses::combined_prop_loss(f.env, f.labels, online, tgt, w);
    EXPECT_EQ(before.total, after.total);
    auto with_r = losses::combined_prop_loss(f.env, f.labels, online, tgt, losses::PropWeights::pvp_variant({}, true));
    EXPECT_NE(with_r.total, after.total);
}

TEST(CombinedProp, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(17);
    q::QNetConfig net;
    net.trunk_hidden = {6, 5};
    net.head_hidden = {5};
    net.activation = grad::Activation::Tanh;
    auto online = q::QFunction::create(4, 3, net, 18);
    auto tgt = q::sync_target(q::QFunction::create(4, 3, net, 19));
    auto f = random_fixture(rng, 4, 3, 12, 12);
    losses::LossWeights lw;
    std::vector<losses::PropWeights> variants{losses::PropWeights::icopro(lw), losses::PropWeights::dqfd(lw),
                                              losses::PropWeights::pvp_variant(lw, true),
                                              losses::PropWeights::pvp_variant(lw, false)};
    for (const auto& w : variants) {
        auto r = losses::combined_prop_loss(f.env, f.labels, online, tgt, w);
        auto params = q::parameter_blocks(online);
        auto grads = q::parameter_blocks(std::as_const(r.grads));
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto numeric = oracle::central_differences(
                params[k], [&] { return losses::combined_prop_loss(f.env, f.labels, online, tgt, w).total; }, 1e-6);
            EXPECT_LT(oracle::rel_error(grads[k], numeric), 1e-6) << "block " << k;
        }
    }
}

TEST(LabelMargin, GradientsMatchFiniteDifferencesAndAccuracy) {
    std::mt19937_64 rng(20);
    q::QNetConfig net;
    net.trunk_hidden = {6};
    net.head_hidden = {5};
    net.activation = grad::Activation::Tanh;
    auto online = q::QFunction::create(4, 3, net, 21);
    auto f = random_fixture(rng, 4, 3, 1, 20);
    auto r = losses::label_margin_loss(f.labels, online, 0.05);
    auto params = q::parameter_blocks(online);
    auto grads = q::parameter_blocks(std::as_const(r.grads));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto numeric = oracle::central_differences(
            params[k], [&] { return losses::label_margin_loss(f.labels, online, 0.05).total; }, 1e-6);
        EXPECT_LT(oracle::rel_error(grads[k], numeric), 1e-6) << "block " << k;
    }
    int hits = 0;
    for (const auto& l : f.labels) hits += q::greedy_action(q::q_values(online, *l.obs)) == l.label;
    EXPECT_DOUBLE_EQ(losses::label_accuracy(f.labels, online), hits / 20.0);
}
