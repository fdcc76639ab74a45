#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "icopro/env/gridworld.hpp"
#include "icopro/env/highway.hpp"
#include "icopro/env/proxy_reward.hpp"

namespace icopro::env {

enum class EnvKind { Highway, Gridworld };

struct EnvSpec {
    EnvKind kind = EnvKind::Highway;
    HighwayConfig highway;
    GridworldConfig grid;
    ProxyRewardConfig reward = builtin_proxy_reward("PR4");
    std::string reward_name = "PR4";
};

std::unique_ptr<Environment> make_environment(const EnvSpec& spec);

// `env` is the env section of a run config ({"type": "highway" | "gridworld", ...}).
EnvSpec env_spec_from_json(const nlohmann::json& env, const std::string& path = "$.env");
nlohmann::json env_spec_to_json(const EnvSpec& spec);

} // namespace icopro::env
