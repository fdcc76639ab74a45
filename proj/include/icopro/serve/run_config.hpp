#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "icopro/env/factory.hpp"
#include "icopro/labelers/labelers.hpp"
#include "icopro/trainer/trainer.hpp"

namespace icopro::serve {

enum class LabelerType { Simulated, Scripted, DiffRand, Human };

std::string to_string(LabelerType t);

struct LabelerSpec {
    LabelerType type = LabelerType::Simulated;
    std::filesystem::path checkpoint; // simulated / diffrand; diffrand on gridworld may omit it
    std::optional<int> n_cf;          // must equal trainer.n_cf when present
    double epsilon = 0.01;            // the labeler's own epsilon-greedy
    double p = 0.0;                   // diffrand corruption probability
    double pass_threshold = 0.0;
};

struct RunConfig {
    trainer::Method method = trainer::Method::ICoPro;
    std::uint64_t seed = 0;
    env::EnvSpec env;
    nlohmann::json custom_rewards = nlohmann::json::object(); // extra named proxy rewards
    LabelerSpec labeler;
    trainer::TrainerConfig trainer;
    std::filesystem::path bc_source; // run directory whose labels a bc run clones
};

/// Relative paths are resolved against `base_dir`. Throws ConfigError naming the offending path.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& c);

/// Labeler seed is derived from the run seed so labeler noise differs from the agent's.
std::unique_ptr<labelers::Labeler> make_labeler(const RunConfig& c);

std::uint64_t labeler_seed(std::uint64_t run_seed);

} // namespace icopro::serve
