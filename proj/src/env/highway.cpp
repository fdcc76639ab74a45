#include "icopro/env/highway.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icopro/errors.hpp"

namespace icopro::env {
namespace {

const std::vector<std::string>& names() {
    static const std::vector<std::string> n{"LANE_LEFT", "LANE_RIGHT", "FASTER", "SLOWER", "IDLE"};
    return n;
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& path) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number()) throw ConfigError(path + "." + key + ": expected number");
    out = v.get<T>();
}

} // namespace

std::string highway_action_name(int action) {
    if (action < 0 || action >= kHighwayActionCount) throw ConfigError("unknown highway action");
    return names()[static_cast<std::size_t>(action)];
}

void HighwayConfig::validate() const {
    if (lanes < 2) throw ConfigError("highway: lanes must be >= 2");
    if (vehicles < 0) throw ConfigError("highway: vehicles must be >= 0");
    if (time_limit < 1) throw ConfigError("highway: time_limit must be >= 1");
    if (policy_frequency <= 0.0) throw ConfigError("highway: policy_frequency must be positive");
    if (!(speed_min < speed_max)) throw ConfigError("highway: speed range min must be < max");
    if (!(traffic_speed_min <= traffic_speed_max)) throw ConfigError("highway: bad traffic speed range");
    if (observed_rows < 1) throw ConfigError("highway: observed_rows must be >= 1");
    if (crash_gap <= 0.0 || obs_range <= 0.0) throw ConfigError("highway: crash_gap/obs_range must be positive");
    if (spawn_gap_min < 0.0 || spawn_gap_max < spawn_gap_min) throw ConfigError("highway: bad spawn gaps");
}

HighwayConfig highway_config_from_json(const nlohmann::json& j, const std::string& path) {
    static const std::vector<std::string> known{"type",
                                                "lanes",
                                                "vehicles",
                                                "time_limit",
                                                "policy_frequency",
                                                "speed_min",
                                                "speed_max",
                                                "high_speed_threshold",
                                                "traffic_speed_min",
                                                "traffic_speed_max",
                                                "crash_gap",
                                                "speed_step",
                                                "observed_rows",
                                                "obs_range",
                                                "spawn_offset",
                                                "spawn_gap_min",
                                                "spawn_gap_max",
                                                "same_lane_spacing"};
    if (!j.is_object()) throw ConfigError(path + ": expected object");
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError(path + "." + key + ": unknown key");
        }
    }
    HighwayConfig c;
    read_field(j, "lanes", c.lanes, path);
    read_field(j, "vehicles", c.vehicles, path);
    read_field(j, "time_limit", c.time_limit, path);
    read_field(j, "policy_frequency", c.policy_frequency, path);
    read_field(j, "speed_min", c.speed_min, path);
    read_field(j, "speed_max", c.speed_max, path);
    read_field(j, "high_speed_threshold", c.high_speed_threshold, path);
    read_field(j, "traffic_speed_min", c.traffic_speed_min, path);
    read_field(j, "traffic_speed_max", c.traffic_speed_max, path);
    read_field(j, "crash_gap", c.crash_gap, path);
    read_field(j, "speed_step", c.speed_step, path);
    read_field(j, "observed_rows", c.observed_rows, path);
    read_field(j, "obs_range", c.obs_range, path);
    read_field(j, "spawn_offset", c.spawn_offset, path);
    read_field(j, "spawn_gap_min", c.spawn_gap_min, path);
    read_field(j, "spawn_gap_max", c.spawn_gap_max, path);
    read_field(j, "same_lane_spacing", c.same_lane_spacing, path);
    c.validate();
    return c;
}

nlohmann::json highway_config_to_json(const HighwayConfig& c) {
    return {{"type", "highway"},
            {"lanes", c.lanes},
            {"vehicles", c.vehicles},
            {"time_limit", c.time_limit},
            {"policy_frequency", c.policy_frequency},
            {"speed_min", c.speed_min},
            {"speed_max", c.speed_max},
            {"high_speed_threshold", c.high_speed_threshold},
            {"traffic_speed_min", c.traffic_speed_min},
            {"traffic_speed_max", c.traffic_speed_max},
            {"crash_gap", c.crash_gap},
            {"speed_step", c.speed_step},
            {"observed_rows", c.observed_rows},
            {"obs_range", c.obs_range},
            {"spawn_offset", c.spawn_offset},
            {"spawn_gap_min", c.spawn_gap_min},
            {"spawn_gap_max", c.spawn_gap_max},
            {"same_lane_spacing", c.same_lane_spacing}};
}

HighwayEnv::HighwayEnv(HighwayConfig config, ProxyRewardConfig reward)
    : config_(config), reward_(reward) {
    config_.validate();
}

std::size_t HighwayEnv::obs_dim() const {
    return static_cast<std::size_t>(config_.observed_rows * kFeatures);
}

std::vector<std::string> HighwayEnv::action_names() const {
    return names();
}

void HighwayEnv::begin_episode() {
    steps_ = 0;
    done_ = false;
    lane_change_actions_ = 0;
    lane_position_sum_ = 0.0;
    metrics_ = EpisodeMetrics{};
}

Observation HighwayEnv::reset(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> lane_dist(0, config_.lanes - 1);
    std::uniform_real_distribution<double> speed_dist(config_.traffic_speed_min, config_.traffic_speed_max);
    std::uniform_real_distribution<double> gap_dist(config_.spawn_gap_min, config_.spawn_gap_max);

    ego_ = VehicleView{lane_dist(rng), 0.0, config_.speed_min + 2.0};
    traffic_.clear();
    traffic_.reserve(static_cast<std::size_t>(config_.vehicles));
    std::vector<double> last_in_lane(static_cast<std::size_t>(config_.lanes), -1e18);
    double cursor = config_.spawn_offset;
    for (int k = 0; k < config_.vehicles; ++k) {
        if (k > 0) cursor += gap_dist(rng);
        const int lane = lane_dist(rng);
        auto& last = last_in_lane[static_cast<std::size_t>(lane)];
        const double x = std::max(cursor, last + config_.same_lane_spacing);
        last = x;
        traffic_.push_back(VehicleView{lane, x, speed_dist(rng)});
    }
    begin_episode();
    return observe();
}

Observation HighwayEnv::reset_scenario(int ego_lane, double ego_speed, std::vector<VehicleView> traffic) {
    if (ego_lane < 0 || ego_lane >= config_.lanes) throw ConfigError("scenario ego lane out of range");
    for (const auto& v : traffic) {
        if (v.lane < 0 || v.lane >= config_.lanes) throw ConfigError("scenario vehicle lane out of range");
    }
    ego_ = VehicleView{ego_lane, 0.0, std::clamp(ego_speed, config_.speed_min, config_.speed_max)};
    traffic_ = std::move(traffic);
    begin_episode();
    return observe();
}

bool HighwayEnv::collides() const {
    return std::any_of(traffic_.begin(), traffic_.end(), [&](const VehicleView& v) {
        return v.lane == ego_.lane && std::abs(v.x - ego_.x) < config_.crash_gap;
    });
}

StepResult HighwayEnv::step(int action) {
    if (done_) throw UsageError("step called on a finished episode");
    if (action < 0 || action >= kHighwayActionCount) throw ConfigError("highway action out of range");

    StepEvents ev;
    const int lane_before = ego_.lane;
    switch (action) {
    case LaneLeft:
        ego_.lane = std::max(0, ego_.lane - 1);
        break;
    case LaneRight:
        ego_.lane = std::min(config_.lanes - 1, ego_.lane + 1);
        break;
    case Faster:
        ego_.speed = std::min(config_.speed_max, ego_.speed + config_.speed_step);
        break;
    case Slower:
        ego_.speed = std::max(config_.speed_min, ego_.speed - config_.speed_step);
        break;
    default:
        break;
    }
    ev.changed_lane = ego_.lane != lane_before;

    const double dt = 1.0 / config_.policy_frequency;
    ego_.x += ego_.speed * dt;
    for (auto& v : traffic_) v.x += v.speed * dt;

    ev.crashed = collides();
    ev.high_speed = ego_.speed >= config_.high_speed_threshold;
    ev.low_speed = !ev.high_speed;
    ev.lane_position = static_cast<double>(ego_.lane) / static_cast<double>(config_.lanes - 1);

    ++steps_;
    if (action == LaneLeft || action == LaneRight) ++lane_change_actions_;
    lane_position_sum_ += ev.lane_position;
    done_ = ev.crashed || steps_ >= config_.time_limit;

    StepResult out;
    out.reward = proxy_reward(ev, reward_);
    out.events = ev;
    out.done = done_;

    metrics_.steps = steps_;
    metrics_.crashed = metrics_.crashed || ev.crashed;
    metrics_.distance += ego_.speed * dt;
    metrics_.mean_speed = metrics_.distance / (steps_ * dt);
    metrics_.lane_change_ratio = static_cast<double>(lane_change_actions_) / steps_;
    metrics_.mean_lane_position = lane_position_sum_ / steps_;
    metrics_.proxy_return += out.reward;

    out.obs = observe();
    return out;
}

Observation HighwayEnv::observe() const {
    Observation obs(obs_dim(), 0.0);
    const double lane_span = static_cast<double>(config_.lanes - 1);
    const double speed_span = config_.speed_max - config_.speed_min;

    obs[0] = 1.0;
    obs[1] = 0.0;
    obs[2] = 2.0 * ego_.lane / lane_span - 1.0;
    obs[3] = ego_.speed / config_.speed_max;
    obs[4] = 0.0;
    obs[5] = 1.0;
    obs[6] = 0.0;

    std::vector<std::size_t> near;
    for (std::size_t i = 0; i < traffic_.size(); ++i) {
        if (std::abs(traffic_[i].x - ego_.x) <= config_.obs_range) near.push_back(i);
    }
    std::stable_sort(near.begin(), near.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(traffic_[a].x - ego_.x) < std::abs(traffic_[b].x - ego_.x);
    });
    const std::size_t rows = std::min(near.size(), static_cast<std::size_t>(config_.observed_rows - 1));
    for (std::size_t r = 0; r < rows; ++r) {
        const auto& v = traffic_[near[r]];
        double* row = obs.data() + (r + 1) * kFeatures;
        row[0] = 1.0;
        row[1] = std::clamp((v.x - ego_.x) / config_.obs_range, -1.0, 1.0);
        row[2] = (v.lane - ego_.lane) / lane_span;
        row[3] = std::clamp((v.speed - ego_.speed) / speed_span, -1.0, 1.0);
        row[4] = 0.0;
        row[5] = 1.0;
        row[6] = 0.0;
    }
    return obs;
}

WorldFrame HighwayEnv::frame() const {
    WorldFrame f;
    f.lanes = config_.lanes;
    f.ego = ego_;
    for (const auto& v : traffic_) {
        if (std::abs(v.x - ego_.x) <= 1.5 * config_.obs_range) {
            f.vehicles.push_back(VehicleView{v.lane, v.x - ego_.x, v.speed});
        }
    }
    f.ego.x = 0.0;
    return f;
}

std::unique_ptr<Environment> HighwayEnv::clone() const {
    return std::make_unique<HighwayEnv>(*this);
}

} // namespace icopro::env
