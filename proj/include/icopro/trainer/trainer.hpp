#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "icopro/buffers/buffers.hpp"
#include "icopro/env/environment.hpp"
#include "icopro/labelers/labelers.hpp"
#include "icopro/q/qfunction.hpp"

namespace icopro::trainer {

enum class Method { ICoPro, RainbowLite, BC, DAgger, DQfD, PvpPlusR, PvpMinusR, AblateAlign, AblateTgt };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct RainbowConfig {
    std::size_t replay_capacity = 1'000'000;
    std::size_t batch_size = 32;
    int target_update = 2000; // in updates
    int warmup = 1600;        // env steps before the first update
    double clip_norm = 10.0;
    double epsilon_start = 1.0;
    double epsilon_end = 0.01;
    int epsilon_decay_steps = 20000;
};

struct TrainerConfig {
    int iterations = 150;        // I
    int rollout_len = 1000;      // R
    int queries_per_iter = 10;   // M
    int segment_len = 10;        // T
    int n_cf = 1;
    double acc_target = 0.98;    // delta_acc
    int prop_epochs = 2;         // E
    int window_iters = 100;      // K
    double epsilon = 0.01;
    double margin = 0.05;        // C
    double pseudo_weight = 0.5;  // w-bar
    double gamma = 0.99;
    int n_step = 20;
    std::size_t batch_size = 128;
    double lr = 1e-4;
    int align_max_epochs = 50;
    int eval_episodes = 50;
    bool log_wall_time = false;
    RainbowConfig rainbow;
    q::QNetConfig net;

    void validate() const;
};

TrainerConfig trainer_config_from_json(const nlohmann::json& j, const std::string& path = "$.trainer");
nlohmann::json trainer_config_to_json(const TrainerConfig& c);

/// Mean and population standard deviation over evaluation episodes.
struct Stat {
    double mean = 0.0;
    double std = 0.0;
};

struct EvalSummary {
    int episodes = 0;
    Stat crash_rate;
    Stat distance;
    Stat speed;
    Stat lane_change_ratio;
    Stat lane_position;
    Stat steps;
    Stat proxy_return;
    Stat discounted_return;
    Stat goal_rate;
};

enum class AlignExit { Accuracy, GuardCap, NoLabels };
std::string to_string(AlignExit e);

struct AlignRecord {
    int iteration = 0;
    AlignExit exit = AlignExit::NoLabels;
    double accuracy = 0.0;
    int steps = 0;
};

/// One row per completed iteration.
struct RunRecord {
    int iter = 0;
    std::int64_t env_steps = 0;
    std::size_t labels_total = 0;
    double align_acc = 0.0;
    int align_steps = 0;
    double loss_td1 = 0.0;
    double loss_tdn = 0.0;
    double loss_mg_label = 0.0;
    double loss_mg_tgt = 0.0;
    EvalSummary eval;
    double wall_s = 0.0;
};

std::string csv_header();
std::string csv_row(const RunRecord& r);
RunRecord parse_csv_row(const std::string& line);

struct Hooks {
    std::function<void(const RunRecord&)> on_record;
    std::function<void(const AlignRecord&)> on_align;
    std::function<void(int, const q::QFunction&)> on_iteration;
    // Called with the global env step count for configured snapshot steps.
    std::function<void(std::int64_t, const q::QFunction&)> on_snapshot;
    std::vector<std::int64_t> snapshot_steps;
};

struct RunResult {
    std::vector<RunRecord> records;
    std::vector<AlignRecord> aligns;
    q::QFunction q;
    std::int64_t env_steps = 0;
};

/// Seeds: training episodes use even seeds, evaluation episodes odd ones.
std::uint64_t train_episode_seed(std::uint64_t run_seed, std::uint64_t episode);
std::uint64_t eval_episode_seed(std::uint64_t run_seed, std::uint64_t episode);

using Policy = std::function<int(const env::Observation&)>;

EvalSummary evaluate_policy(const Policy& policy, const env::Environment& proto, int episodes, std::uint64_t seed,
                            double gamma);
EvalSummary evaluate(const q::QFunction& q, const env::Environment& proto, int episodes, std::uint64_t seed,
                     double gamma);

/// ICoPro and the Align/Prop baselines (dagger, dqfd, pvp_*, ablate_*).
/// `feedback` receives every accepted label; attach a log to it beforehand to persist labels.
RunResult run_interactive(Method method, const TrainerConfig& config, const env::Environment& proto,
                          labelers::Labeler& labeler, buffers::FeedbackBuffer& feedback, std::uint64_t seed,
                          const Hooks& hooks = {});

RunResult run_icopro(const TrainerConfig& config, const env::Environment& proto, labelers::Labeler& labeler,
                     buffers::FeedbackBuffer& feedback, std::uint64_t seed, const Hooks& hooks = {});

/// Dueling 1-step + N-step DQN with uniform replay and epsilon-greedy exploration,
/// I*R env steps, one record every R steps.
RunResult run_rainbow_lite(const TrainerConfig& config, const env::Environment& proto, std::uint64_t seed,
                           const Hooks& hooks = {});

/// Behaviour cloning on the labels of a finished run, fresh network, trained to acc_target.
/// The single record carries the source run's env-step count.
RunResult run_bc(const TrainerConfig& config, const env::Environment& proto, const buffers::FeedbackBuffer& labels,
                 std::int64_t source_env_steps, std::uint64_t seed, const Hooks& hooks = {});

struct LabelerArtifact {
    std::filesystem::path checkpoint;
    EvalSummary metrics;
    std::vector<std::pair<std::int64_t, std::filesystem::path>> snapshots;
};

/// Trains a rainbow_lite labeler for `steps` env steps and writes
/// `<dir>/labeler.ckpt`, one `<dir>/labeler_<step>.ckpt` per snapshot step and
/// `<dir>/labeler_metrics.json` with the evaluated metrics of each checkpoint.
LabelerArtifact train_labeler_checkpoint(const env::Environment& proto, const TrainerConfig& config, std::int64_t steps,
                                         const std::vector<std::int64_t>& snapshot_steps,
                                         const std::filesystem::path& dir, std::uint64_t seed);

nlohmann::json eval_summary_to_json(const EvalSummary& s);
/// FNV-1a over the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);
EvalSummary eval_summary_from_json(const nlohmann::json& j);

} // namespace icopro::trainer
