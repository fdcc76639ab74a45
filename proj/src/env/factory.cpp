#include "icopro/env/factory.hpp"

#include "icopro/errors.hpp"

namespace icopro::env {

std::unique_ptr<Environment> make_environment(const EnvSpec& spec) {
    if (spec.kind == EnvKind::Gridworld) return std::make_unique<Gridworld>(spec.grid);
    return std::make_unique<HighwayEnv>(spec.highway, spec.reward);
}

EnvSpec env_spec_from_json(const nlohmann::json& env, const std::string& path) {
    if (!env.is_object()) throw ConfigError(path + ": expected object");
    const std::string type = env.value("type", "highway");
    EnvSpec spec;
    if (type == "highway") {
        spec.kind = EnvKind::Highway;
        spec.highway = highway_config_from_json(env, path);
    } else if (type == "gridworld") {
        spec.kind = EnvKind::Gridworld;
        spec.grid = gridworld_config_from_json(env, path);
    } else {
        throw ConfigError(path + ".type: expected \"highway\" or \"gridworld\"");
    }
    return spec;
}

nlohmann::json env_spec_to_json(const EnvSpec& spec) {
    if (spec.kind == EnvKind::Gridworld) return gridworld_config_to_json(spec.grid);
    return highway_config_to_json(spec.highway);
}

} // namespace icopro::env
