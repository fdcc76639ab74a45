#include "icopro/env/gridworld.hpp"

#include <algorithm>
#include <deque>

#include "icopro/errors.hpp"

namespace icopro::env {
namespace {

bool in_bounds(const GridworldConfig& c, Cell cell) {
    return cell.first >= 0 && cell.first < c.rows && cell.second >= 0 && cell.second < c.cols;
}

Cell cell_from_json(const nlohmann::json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
        throw ConfigError(path + ": expected [row, col]");
    }
    return {j[0].get<int>(), j[1].get<int>()};
}

std::vector<Cell> cells_from_json(const nlohmann::json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path + ": expected array of [row, col]");
    std::vector<Cell> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(cell_from_json(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

} // namespace

void GridworldConfig::validate() const {
    if (rows < 2 || cols < 2) throw ConfigError("gridworld: grid must be at least 2x2");
    if (max_steps < 1) throw ConfigError("gridworld: max_steps must be >= 1");
    if (!in_bounds(*this, start) || !in_bounds(*this, goal)) throw ConfigError("gridworld: start/goal out of grid");
    if (start == goal) throw ConfigError("gridworld: start equals goal");
    for (const auto& c : cliff) {
        if (!in_bounds(*this, c)) throw ConfigError("gridworld: cliff cell out of grid");
        if (c == start || c == goal) throw ConfigError("gridworld: cliff overlaps start/goal");
    }
    for (const auto& c : walls) {
        if (!in_bounds(*this, c)) throw ConfigError("gridworld: wall cell out of grid");
        if (c == start || c == goal) throw ConfigError("gridworld: wall overlaps start/goal");
    }
}

GridworldConfig gridworld_config_from_json(const nlohmann::json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path + ": expected object");
    GridworldConfig c;
    for (const auto& [key, value] : j.items()) {
        const std::string p = path + "." + key;
        if (key == "type") continue;
        if (key == "rows" || key == "cols" || key == "max_steps") {
            if (!value.is_number_integer()) throw ConfigError(p + ": expected integer");
            (key == "rows" ? c.rows : key == "cols" ? c.cols : c.max_steps) = value.get<int>();
        } else if (key == "start") {
            c.start = cell_from_json(value, p);
        } else if (key == "goal") {
            c.goal = cell_from_json(value, p);
        } else if (key == "cliff") {
            c.cliff = cells_from_json(value, p);
        } else if (key == "walls") {
            c.walls = cells_from_json(value, p);
        } else {
            throw ConfigError(p + ": unknown key");
        }
    }
    c.validate();
    return c;
}

nlohmann::json gridworld_config_to_json(const GridworldConfig& c) {
    auto cells = [](const std::vector<Cell>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& [r, col] : v) a.push_back({r, col});
        return a;
    };
    return {{"type", "gridworld"},
            {"rows", c.rows},
            {"cols", c.cols},
            {"start", {c.start.first, c.start.second}},
            {"goal", {c.goal.first, c.goal.second}},
            {"cliff", cells(c.cliff)},
            {"walls", cells(c.walls)},
            {"max_steps", c.max_steps}};
}

Gridworld::Gridworld(GridworldConfig config) : config_(std::move(config)), pos_(config_.start) {
    config_.validate();
}

std::size_t Gridworld::obs_dim() const {
    return static_cast<std::size_t>(config_.rows * config_.cols);
}

std::vector<std::string> Gridworld::action_names() const {
    return {"UP", "DOWN", "LEFT", "RIGHT"};
}

bool Gridworld::is_cliff(Cell c) const {
    return std::find(config_.cliff.begin(), config_.cliff.end(), c) != config_.cliff.end();
}

bool Gridworld::is_wall(Cell c) const {
    return std::find(config_.walls.begin(), config_.walls.end(), c) != config_.walls.end();
}

Cell Gridworld::move(Cell from, int action) const {
    Cell to = from;
    switch (action) {
    case Up: --to.first; break;
    case Down: ++to.first; break;
    case Left: --to.second; break;
    case Right: ++to.second; break;
    default: throw ConfigError("gridworld action out of range");
    }
    if (!in_bounds(config_, to) || is_wall(to)) return from;
    return to;
}

Observation Gridworld::encode(Cell c) const {
    Observation obs(obs_dim(), 0.0);
    obs[static_cast<std::size_t>(c.first * config_.cols + c.second)] = 1.0;
    return obs;
}

Cell Gridworld::decode(const Observation& obs) const {
    if (obs.size() != obs_dim()) throw ConfigError("gridworld observation has wrong size");
    auto it = std::max_element(obs.begin(), obs.end());
    const int idx = static_cast<int>(it - obs.begin());
    return {idx / config_.cols, idx % config_.cols};
}

Observation Gridworld::reset(std::uint64_t) {
    pos_ = config_.start;
    steps_ = 0;
    done_ = false;
    metrics_ = EpisodeMetrics{};
    return encode(pos_);
}

StepResult Gridworld::step(int action) {
    if (done_) throw UsageError("step called on a finished episode");
    pos_ = move(pos_, action);
    ++steps_;
    StepResult out;
    if (pos_ == config_.goal) {
        out.reward = 1.0;
        out.events.reached_goal = true;
    } else if (is_cliff(pos_)) {
        out.reward = -1.0;
        out.events.fell_off_cliff = true;
        out.events.crashed = true;
    }
    done_ = out.events.reached_goal || out.events.fell_off_cliff || steps_ >= config_.max_steps;
    out.done = done_;
    out.obs = encode(pos_);

    metrics_.steps = steps_;
    metrics_.crashed = metrics_.crashed || out.events.fell_off_cliff;
    metrics_.reached_goal = metrics_.reached_goal || out.events.reached_goal;
    metrics_.proxy_return += out.reward;
    return out;
}

WorldFrame Gridworld::frame() const {
    WorldFrame f;
    f.lanes = config_.rows;
    f.ego = VehicleView{pos_.first, static_cast<double>(pos_.second), 0.0};
    return f;
}

std::unique_ptr<Environment> Gridworld::clone() const {
    return std::make_unique<Gridworld>(*this);
}

std::vector<int> Gridworld::distances_to_goal() const {
    const auto n = static_cast<std::size_t>(config_.rows * config_.cols);
    std::vector<int> dist(n, -1);
    auto index = [&](Cell c) { return static_cast<std::size_t>(c.first * config_.cols + c.second); };
    // Reverse search from the goal over cells that can step into the current frontier.
    std::deque<Cell> frontier{config_.goal};
    dist[index(config_.goal)] = 0;
    while (!frontier.empty()) {
        const Cell cur = frontier.front();
        frontier.pop_front();
        for (int r = 0; r < config_.rows; ++r) {
            for (int c = 0; c < config_.cols; ++c) {
                const Cell from{r, c};
                if (dist[index(from)] >= 0 || is_cliff(from) || is_wall(from)) continue;
                for (int a = 0; a < 4; ++a) {
                    if (move(from, a) == cur) {
                        dist[index(from)] = dist[index(cur)] + 1;
                        frontier.push_back(from);
                        break;
                    }
                }
            }
        }
    }
    return dist;
}

} // namespace icopro::env
