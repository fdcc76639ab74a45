#pragma once

#include <cstdint>

#include "icopro/env/environment.hpp"

namespace icopro::buffers {

/// One environment step. `terminal` is set on the last step of an episode,
/// whether it ended by crash, goal or time limit.
struct Transition {
    env::Observation obs;
    int action = 0;
    double reward = 0.0;
    env::Observation next_obs;
    bool terminal = false;
    std::uint64_t episode_id = 0;
    int timestep = 0;
    int iteration = 0;
};

} // namespace icopro::buffers
