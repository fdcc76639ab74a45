#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <thread>

#include "icopro/env/factory.hpp"
#include "icopro/errors.hpp"
#include "icopro/trainer/trainer.hpp"

using namespace icopro;
using trainer::TrainerConfig;

namespace {

TrainerConfig small_grid_config() {
    TrainerConfig c;
    c.iterations = 6;
    c.rollout_len = 64;
    c.queries_per_iter = 2;
    c.segment_len = 8;
    c.window_iters = 4;
    c.eval_episodes = 2;
    c.batch_size = 32;
    c.lr = 1e-3;
    c.epsilon = 0.1;
    c.n_step = 5;
    c.net.trunk_hidden = {32};
    c.net.head_hidden = {16};
    return c;
}

labelers::SimulatedLabeler grid_labeler(const env::Gridworld& g, int n_cf, std::uint64_t seed = 11) {
    return labelers::SimulatedLabeler(labelers::scripted_grid_q(g), 4, {0.0, n_cf, 0.0}, seed);
}

// Discounted return of the shortest safe path: reward 1 on the step into the goal.
double optimal_grid_return(const env::Gridworld& g, double gamma) {
    const auto d = g.distances_to_goal();
    const auto s = g.config().start;
    return std::pow(gamma, d[static_cast<std::size_t>(s.first * g.config().cols + s.second)] - 1);
}

} // namespace

TEST(TrainerConfig, JsonRoundTripAndErrors) {
    auto c = small_grid_config();
    c.net.activation = grad::Activation::Tanh;
    c.rainbow.warmup = 7;
    auto back = trainer::trainer_config_from_json(trainer::trainer_config_to_json(c));
    EXPECT_EQ(trainer::trainer_config_to_json(back), trainer::trainer_config_to_json(c));
    EXPECT_EQ(back.net, c.net);

    try {
        trainer::trainer_config_from_json({{"bogus", 1}});
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("$.trainer.bogus"), std::string::npos);
    }
    try {
        trainer::trainer_config_from_json({{"rainbow", {{"warmup", "x"}}}});
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("$.trainer.rainbow.warmup"), std::string::npos);
    }
    EXPECT_THROW(trainer::trainer_config_from_json({{"epsilon", 1.5}}), ConfigError);
    EXPECT_THROW(trainer::trainer_config_from_json({{"pseudo_weight", -0.1}}), ConfigError);
    EXPECT_THROW(trainer::trainer_config_from_json({{"iterations", 0}}), ConfigError);
    EXPECT_THROW(trainer::method_from_string("sac"), ConfigError);
    EXPECT_EQ(trainer::method_from_string("pvp_minus_r"), trainer::Method::PvpMinusR);
}

TEST(Csv, RowRoundTripsExactly) {
    trainer::RunRecord r;
    r.iter = 3;
    r.env_steps = 4000;
    r.labels_total = 37;
    r.align_acc = 0.9812345678901234;
    r.align_steps = 12;
    r.loss_td1 = 1.0 / 3.0;
    r.loss_tdn = 2e-17;
    r.loss_mg_label = 0.05;
    r.loss_mg_tgt = 0.1 + 0.2;
    r.eval.crash_rate.mean = 0.14;
    r.eval.distance.mean = 1234.5678;
    r.eval.speed.mean = 23.4;
    r.eval.lane_change_ratio.mean = 0.01;
    r.eval.lane_position.mean = 0.75;
    r.eval.steps.mean = 48.5;
    const auto line = trainer::csv_row(r);
    EXPECT_EQ(trainer::csv_row(trainer::parse_csv_row(line)), line);
    EXPECT_EQ(trainer::parse_csv_row(line).loss_mg_tgt, 0.1 + 0.2);
    const auto header = trainer::csv_header();
    EXPECT_EQ(std::count(header.begin(), header.end(), ','), 15);
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "0");
    EXPECT_THROW(trainer::parse_csv_row("1,2,3"), FormatError);
}

TEST(Seeds, TrainEvenEvalOddAndDistinct) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t e = 0; e < 200; ++e) {
        const auto t = trainer::train_episode_seed(9, e);
        const auto v = trainer::eval_episode_seed(9, e);
        EXPECT_EQ(t % 2, 0u);
        EXPECT_EQ(v % 2, 1u);
        EXPECT_TRUE(seen.insert(t).second);
        EXPECT_TRUE(seen.insert(v).second);
    }
}

TEST(Evaluate, DeterministicAndMatchesRandomAnchor) {
    env::EnvSpec spec;
    auto proto = env::make_environment(spec);
    std::mt19937_64 rng(1);
    auto idle = [](const env::Observation&) { return static_cast<int>(env::Idle); };
    auto a = trainer::evaluate_policy(idle, *proto, 10, 5, 0.99);
    auto b = trainer::evaluate_policy(idle, *proto, 10, 5, 0.99);
    EXPECT_EQ(a.crash_rate.mean, b.crash_rate.mean);
    EXPECT_EQ(a.distance.mean, b.distance.mean);
    EXPECT_EQ(a.episodes, 10);
    auto q = q::QFunction::create(proto->obs_dim(), proto->action_count(), {{16}, {8}}, 3);
    auto qa = trainer::evaluate(q, *proto, 5, 7, 0.99);
    auto qb = trainer::evaluate(q, *proto, 5, 7, 0.99);
    EXPECT_EQ(qa.speed.mean, qb.speed.mean);

    // A uniformly random driver crashes in a sizeable share of 50-step episodes.
    std::uniform_int_distribution<int> pick(0, 4);
    auto rnd = trainer::evaluate_policy([&](const env::Observation&) { return pick(rng); }, *proto, 100, 1, 0.99);
    EXPECT_GT(rnd.crash_rate.mean, 0.1);
    EXPECT_LE(rnd.crash_rate.mean, 1.0);
}

TEST(Icopro, DeterministicForFixedSeed) {
    env::Gridworld g;
    auto cfg = small_grid_config();
    auto run = [&] {
        auto lab = grid_labeler(g, 1);
        buffers::FeedbackBuffer fb;
        auto res = trainer::run_icopro(cfg, g, lab, fb, 42);
        std::string out;
        for (const auto& r : res.records) out += trainer::csv_row(r) + "\n";
        return out;
    };
    const auto a = run();
    EXPECT_EQ(a, run());
    EXPECT_FALSE(a.empty());
}

TEST(Icopro, LabelBudgetAndStepAccounting) {
    env::Gridworld g;
    auto cfg = small_grid_config();
    cfg.n_cf = 2;
    auto lab = grid_labeler(g, 2);
    buffers::FeedbackBuffer fb;
    std::vector<trainer::AlignRecord> aligns;
    trainer::Hooks hooks;
    hooks.on_align = [&](const trainer::AlignRecord& a) { aligns.push_back(a); };
    auto res = trainer::run_icopro(cfg, g, lab, fb, 1, hooks);
    ASSERT_EQ(res.records.size(), 6u);
    for (std::size_t i = 0; i < res.records.size(); ++i) {
        const auto& r = res.records[i];
        EXPECT_EQ(r.env_steps, static_cast<std::int64_t>((i + 1) * 64));
        EXPECT_LE(r.labels_total, (i + 1) * 2 * 2);
        if (i > 0) EXPECT_GE(r.labels_total, res.records[i - 1].labels_total);
        EXPECT_EQ(r.wall_s, 0.0);
    }
    EXPECT_EQ(aligns.size(), 6u);
    for (const auto& l : fb.labels()) {
        EXPECT_NE(l.label_action, l.executed_action);
        EXPECT_EQ(l.source, buffers::LabelSource::Simulated);
        EXPECT_LT(l.global_step, res.env_steps);
    }
}

TEST(Icopro, AlignExitsAreReported) {
    env::Gridworld g;
    auto cfg = small_grid_config();
    cfg.iterations = 2;
    cfg.queries_per_iter = 0;
    {
        auto lab = grid_labeler(g, 1);
        buffers::FeedbackBuffer fb;
        auto res = trainer::run_icopro(cfg, g, lab, fb, 2);
        for (const auto& a : res.aligns) EXPECT_EQ(a.exit, trainer::AlignExit::NoLabels);
    }
    // Contradictory labels on one state can never exceed 50% accuracy.
    buffers::FeedbackBuffer fb;
    const auto s = g.reset(0);
    fb.add({s, 0, 1, buffers::LabelSource::Simulated, 0, 0, 0});
    fb.add({s, 0, 2, buffers::LabelSource::Simulated, 1, 0, 1});
    cfg.align_max_epochs = 3;
    auto lab = grid_labeler(g, 1);
    auto res = trainer::run_interactive(trainer::Method::DAgger, cfg, g, lab, fb, 3);
    ASSERT_EQ(res.aligns.size(), 2u);
    EXPECT_EQ(res.aligns[0].exit, trainer::AlignExit::GuardCap);
    EXPECT_EQ(res.aligns[0].steps, 3);
    EXPECT_LE(res.aligns[0].accuracy, 0.5);
    // DAgger has no Prop phase.
    EXPECT_EQ(res.records[0].loss_td1, 0.0);

    // A single consistent label is fitted well before the cap.
    buffers::FeedbackBuffer one;
    one.add({s, 0, 3, buffers::LabelSource::Simulated, 0, 0, 0});
    cfg.align_max_epochs = 500;
    auto fit = trainer::run_interactive(trainer::Method::DAgger, cfg, g, lab, one, 3);
    EXPECT_EQ(fit.aligns[0].exit, trainer::AlignExit::Accuracy);
    EXPECT_GT(fit.aligns[0].accuracy, 0.98);
}

TEST(Icopro, PropLossesByMethod) {
    env::Gridworld g;
    auto cfg = small_grid_config();
    cfg.iterations = 2;
    auto losses_of = [&](trainer::Method m) {
        auto lab = grid_labeler(g, 1);
        buffers::FeedbackBuffer fb;
        return trainer::run_interactive(m, cfg, g, lab, fb, 4).records.back();
    };
    auto ic = losses_of(trainer::Method::ICoPro);
    EXPECT_GT(ic.loss_td1, 0.0);
    EXPECT_GT(ic.loss_tdn, 0.0);
    // DQfD has no Align phase; its pseudo-label column is still reported for diagnosis.
    auto dq = losses_of(trainer::Method::DQfD);
    EXPECT_EQ(dq.align_steps, 0);
    EXPECT_GT(dq.loss_mg_label, 0.0);
    cfg.prop_epochs = 0;
    auto none = losses_of(trainer::Method::ICoPro);
    EXPECT_EQ(none.loss_td1, 0.0);
    EXPECT_THROW(losses_of(trainer::Method::RainbowLite), ConfigError);
}

TEST(Icopro, SolvesCliffGridWithScriptedLabeler) {
    env::Gridworld g;
    auto cfg = small_grid_config();
    cfg.iterations = 20;
    cfg.rollout_len = 128;
    cfg.queries_per_iter = 4;
    cfg.window_iters = 20;
    cfg.eval_episodes = 1;
    cfg.net.trunk_hidden = {64, 64};
    cfg.net.head_hidden = {32};
    auto lab = grid_labeler(g, 1);
    buffers::FeedbackBuffer fb;
    auto res = trainer::run_icopro(cfg, g, lab, fb, 5);
    auto ev = trainer::evaluate(res.q, g, 1, 5, cfg.gamma);
    EXPECT_GE(ev.discounted_return.mean, 0.95 * optimal_grid_return(g, cfg.gamma));
}

TEST(RainbowLite, RecordsSnapshotsAndEpsilon) {
    env::Gridworld g;
    auto cfg = small_grid_config();
    cfg.iterations = 4;
    cfg.rainbow.warmup = 50;
    cfg.rainbow.target_update = 20;
    cfg.rainbow.epsilon_decay_steps = 100;
    std::vector<std::int64_t> snaps;
    trainer::Hooks hooks;
    hooks.snapshot_steps = {64, 200};
    hooks.on_snapshot = [&](std::int64_t s, const q::QFunction&) { snaps.push_back(s); };
    auto res = trainer::run_rainbow_lite(cfg, g, 6, hooks);
    ASSERT_EQ(res.records.size(), 4u);
    EXPECT_EQ(res.records.back().env_steps, 256);
    EXPECT_EQ(snaps, (std::vector<std::int64_t>{64, 200}));
    EXPECT_GT(res.records.back().loss_td1, 0.0);
    EXPECT_EQ(res.records.back().labels_total, 0u);
}

TEST(Bc, FitsLabelsOfSourceRun) {
    env::Gridworld g;
    auto cfg = small_grid_config();
    auto lab = grid_labeler(g, 1);
    buffers::FeedbackBuffer fb;
    auto src = trainer::run_icopro(cfg, g, lab, fb, 7);
    cfg.align_max_epochs = 200;
    auto bc = trainer::run_bc(cfg, g, fb, src.env_steps, 8);
    ASSERT_EQ(bc.records.size(), 1u);
    EXPECT_EQ(bc.records[0].env_steps, src.env_steps);
    EXPECT_EQ(bc.records[0].labels_total, fb.size());
    EXPECT_EQ(bc.aligns[0].exit, trainer::AlignExit::Accuracy);
}

TEST(HumanMode, FramesReachSessionAndLabelsAreTagged) {
    env::Gridworld g;
    auto cfg = small_grid_config();
    cfg.iterations = 2;
    cfg.segment_len = 1; // untrained agents often fall off the cliff at once
    auto session = std::make_shared<labelers::LabelSession>("s", g.action_names(), std::chrono::seconds(30));
    labelers::HumanLabeler human(session);
    std::atomic<bool> stop{false};
    std::size_t frames_seen = 0;
    std::thread answer([&] {
        while (!stop) {
            if (auto q = session->next_pending()) {
                frames_seen = q->frames.size();
                session->submit_label(q->segment_id, 0, (q->executed[0] + 1) % 4);
            } else {
                std::this_thread::sleep_for(std::chrono::milliseconds(1));
            }
        }
    });
    buffers::FeedbackBuffer fb;
    auto res = trainer::run_icopro(cfg, g, human, fb, 9);
    stop = true;
    answer.join();
    EXPECT_EQ(frames_seen, 1u);
    EXPECT_EQ(fb.size(), 4u);
    for (const auto& l : fb.labels()) EXPECT_EQ(l.source, buffers::LabelSource::Human);
    EXPECT_EQ(res.records.back().labels_total, 4u);
}

TEST(LabelerTraining, WritesCheckpointsAndMetrics) {
    env::Gridworld g;
    auto cfg = small_grid_config();
    cfg.rainbow.warmup = 32;
    const auto dir = std::filesystem::temp_directory_path() / "icopro_labeler_train";
    std::filesystem::remove_all(dir);
    auto art = trainer::train_labeler_checkpoint(g, cfg, 128, {64}, dir, 3);
    EXPECT_TRUE(std::filesystem::exists(art.checkpoint));
    EXPECT_TRUE(std::filesystem::exists(dir / "labeler_64.ckpt"));
    std::ifstream in(dir / "labeler_metrics.json");
    auto doc = nlohmann::json::parse(in);
    EXPECT_TRUE(doc["snapshots"].contains("64"));
    auto back = trainer::eval_summary_from_json(doc["final"]);
    EXPECT_EQ(back.discounted_return.mean, art.metrics.discounted_return.mean);
    EXPECT_THROW(trainer::train_labeler_checkpoint(g, cfg, 100, {}, dir, 3), ConfigError);
    std::filesystem::remove_all(dir);
}
