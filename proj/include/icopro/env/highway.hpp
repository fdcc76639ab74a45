#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "icopro/env/environment.hpp"
#include "icopro/env/proxy_reward.hpp"

namespace icopro::env {

enum HighwayAction : int { LaneLeft = 0, LaneRight = 1, Faster = 2, Slower = 3, Idle = 4 };
inline constexpr int kHighwayActionCount = 5;

struct HighwayConfig {
    int lanes = 5;
    int vehicles = 40;
    int time_limit = 50;           // decision steps
    double policy_frequency = 1.0; // Hz
    double speed_min = 19.0;
    double speed_max = 30.0;
    double high_speed_threshold = 21.0;
    double traffic_speed_min = 19.0;
    double traffic_speed_max = 27.0;
    double crash_gap = 10.0; // m, same-lane longitudinal distance that counts as a crash
    double speed_step = 2.0; // m/s per FASTER / SLOWER
    int observed_rows = 5;   // ego + nearest neighbours; 6 gives 42-dim observations
    double obs_range = 100.0;
    double spawn_offset = 25.0;   // first traffic vehicle this far ahead of ego
    double spawn_gap_min = 6.0;   // longitudinal spacing between consecutive spawns
    double spawn_gap_max = 18.0;
    double same_lane_spacing = 20.0;

    // Throws ConfigError on invalid values.
    void validate() const;
};

HighwayConfig highway_config_from_json(const nlohmann::json& j, const std::string& path = "$.env");
nlohmann::json highway_config_to_json(const HighwayConfig& c);

/// Straight multi-lane road with constant-speed, lane-keeping traffic.
/// Observation: observed_rows x [presence, x, y, vx, vy, cos_h, sin_h], row 0 is ego.
class HighwayEnv final : public Environment {
public:
    static constexpr int kFeatures = 7;

    HighwayEnv(HighwayConfig config, ProxyRewardConfig reward);

    std::size_t obs_dim() const override;
    int action_count() const override { return kHighwayActionCount; }
    std::vector<std::string> action_names() const override;

    Observation reset(std::uint64_t seed) override;
    StepResult step(int action) override;
    bool done() const override { return done_; }

    EpisodeMetrics metrics() const override { return metrics_; }
    WorldFrame frame() const override;
    std::unique_ptr<Environment> clone() const override;

    /// Replaces the world with a hand-built scene (ego at x = 0). Used for scripted checks.
    Observation reset_scenario(int ego_lane, double ego_speed, std::vector<VehicleView> traffic);

    const HighwayConfig& config() const noexcept { return config_; }
    const ProxyRewardConfig& reward_config() const noexcept { return reward_; }
    int ego_lane() const noexcept { return ego_.lane; }
    double ego_speed() const noexcept { return ego_.speed; }
    int step_index() const noexcept { return steps_; }

private:
    Observation observe() const;
    bool collides() const;
    void begin_episode();

    HighwayConfig config_;
    ProxyRewardConfig reward_;
    VehicleView ego_;
    std::vector<VehicleView> traffic_;
    int steps_ = 0;
    bool done_ = true;
    int lane_change_actions_ = 0;
    double lane_position_sum_ = 0.0;
    EpisodeMetrics metrics_;
};

std::string highway_action_name(int action);

} // namespace icopro::env
