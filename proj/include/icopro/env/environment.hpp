#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace icopro::env {

using Observation = std::vector<double>;

/// Per-step event flags fed to the proxy reward.
struct StepEvents {
    bool changed_lane = false;
    bool high_speed = false;
    bool low_speed = false;
    bool crashed = false;
    // Lane index scaled to [0, 1]; 1 is the rightmost lane.
    double lane_position = 0.0;
    // Gridworld only.
    bool reached_goal = false;
    bool fell_off_cliff = false;
};

struct StepResult {
    Observation obs;
    double reward = 0.0;
    bool done = false;
    StepEvents events;
};

/// Behavioural summary of one episode.
struct EpisodeMetrics {
    bool crashed = false;
    int steps = 0;
    double distance = 0.0;           // meters
    double mean_speed = 0.0;         // m/s
    double lane_change_ratio = 0.0;  // fraction of steps taking a lane-change action
    double mean_lane_position = 0.0; // normalized lane index, 0 leftmost .. 1 rightmost
    double proxy_return = 0.0;       // undiscounted sum of proxy rewards
    bool reached_goal = false;
};

struct VehicleView {
    int lane = 0;
    double x = 0.0;
    double speed = 0.0;
};

/// Structured snapshot for rendering a step in the labeling console.
struct WorldFrame {
    int lanes = 0;
    VehicleView ego;
    std::vector<VehicleView> vehicles;
};

class Environment {
public:
    virtual ~Environment() = default;

    virtual std::size_t obs_dim() const = 0;
    virtual int action_count() const = 0;
    virtual std::vector<std::string> action_names() const = 0;

    virtual Observation reset(std::uint64_t seed) = 0;
    // Throws UsageError if the episode is already over.
    virtual StepResult step(int action) = 0;
    virtual bool done() const = 0;

    virtual EpisodeMetrics metrics() const = 0;
    virtual WorldFrame frame() const = 0;

    virtual std::unique_ptr<Environment> clone() const = 0;
};

} // namespace icopro::env
