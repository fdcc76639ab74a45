#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "icopro/env/environment.hpp"

namespace icopro::env {

enum GridAction : int { Up = 0, Down = 1, Left = 2, Right = 3 };

using Cell = std::pair<int, int>; // (row, col)

struct GridworldConfig {
    int rows = 8;
    int cols = 8;
    Cell start{7, 0};
    Cell goal{7, 7};
    std::vector<Cell> cliff{{7, 1}, {7, 2}, {7, 3}, {7, 4}, {7, 5}, {7, 6}};
    std::vector<Cell> walls;
    int max_steps = 64;

    void validate() const;
};

GridworldConfig gridworld_config_from_json(const nlohmann::json& j, const std::string& path = "$.env");
nlohmann::json gridworld_config_to_json(const GridworldConfig& c);

/// Cliff-walk grid. Sparse proxy reward: +1 at the goal, -1 on the cliff (both terminal), 0 otherwise.
/// Observation is a one-hot encoding of the agent cell.
class Gridworld final : public Environment {
public:
    explicit Gridworld(GridworldConfig config = {});

    std::size_t obs_dim() const override;
    int action_count() const override { return 4; }
    std::vector<std::string> action_names() const override;

    // Seed is ignored: the start cell is fixed.
    Observation reset(std::uint64_t seed) override;
    StepResult step(int action) override;
    bool done() const override { return done_; }
    EpisodeMetrics metrics() const override { return metrics_; }
    WorldFrame frame() const override;
    std::unique_ptr<Environment> clone() const override;

    const GridworldConfig& config() const noexcept { return config_; }
    Cell position() const noexcept { return pos_; }

    // Cell reached from `from` by `action`; walls and borders leave the position unchanged.
    Cell move(Cell from, int action) const;
    bool is_cliff(Cell c) const;
    bool is_wall(Cell c) const;

    // Cell encoded by a one-hot observation.
    Cell decode(const Observation& obs) const;

    // Moves-to-goal for every cell avoiding the cliff; -1 where unreachable. Index row * cols + col.
    std::vector<int> distances_to_goal() const;

private:
    Observation encode(Cell c) const;

    GridworldConfig config_;
    Cell pos_;
    int steps_ = 0;
    bool done_ = true;
    EpisodeMetrics metrics_;
};

} // namespace icopro::env
