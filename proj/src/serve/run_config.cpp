#include "icopro/serve/run_config.hpp"

#include <fstream>

#include "icopro/errors.hpp"

namespace icopro::serve {
namespace {

// Errors raised by lower layers name paths relative to their own document root.
[[noreturn]] void rethrow_under(const std::string& root, const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind("$.", 0) == 0 && msg.rfind(root, 0) != 0) throw ConfigError(root + msg.substr(1));
    if (msg.rfind("$", 0) == 0) throw ConfigError(msg);
    throw ConfigError(root + ": " + msg);
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

double read_number(const nlohmann::json& j, const char* key, double fallback, const std::string& path) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) throw ConfigError(path + "." + key + ": expected number");
    return j.at(key).get<double>();
}

LabelerSpec labeler_from_json(const nlohmann::json& j, const std::filesystem::path& base) {
    const std::string path = "$.labeler";
    if (!j.is_object()) throw ConfigError(path + ": expected object");
    static const std::vector<std::string> known{"type", "checkpoint", "n_cf", "epsilon", "p", "pass_threshold"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError(path + "." + key + ": unknown key");
        }
    }
    LabelerSpec s;
    const std::string type = j.value("type", "simulated");
    if (type == "simulated") {
        s.type = LabelerType::Simulated;
    } else if (type == "scripted") {
        s.type = LabelerType::Scripted;
    } else if (type == "diffrand") {
        s.type = LabelerType::DiffRand;
    } else if (type == "human") {
        s.type = LabelerType::Human;
    } else {
        throw ConfigError(path + ".type: expected one of simulated, scripted, diffrand, human");
    }
    if (j.contains("checkpoint")) {
        if (!j.at("checkpoint").is_string()) throw ConfigError(path + ".checkpoint: expected string");
        s.checkpoint = resolve(j.at("checkpoint").get<std::string>(), base);
    }
    if (j.contains("n_cf")) {
        if (!j.at("n_cf").is_number_integer()) throw ConfigError(path + ".n_cf: expected integer");
        s.n_cf = j.at("n_cf").get<int>();
    }
    s.epsilon = read_number(j, "epsilon", s.epsilon, path);
    s.p = read_number(j, "p", s.p, path);
    s.pass_threshold = read_number(j, "pass_threshold", s.pass_threshold, path);
    if (s.epsilon < 0.0 || s.epsilon > 1.0) throw ConfigError(path + ".epsilon: must lie in [0, 1]");
    if (s.p < 0.0 || s.p > 1.0) throw ConfigError(path + ".p: must lie in [0, 1]");
    if (s.p != 0.0 && s.type != LabelerType::DiffRand) throw ConfigError(path + ".p: only valid for diffrand");
    return s;
}

nlohmann::json labeler_to_json(const LabelerSpec& s) {
    nlohmann::json j{{"type", to_string(s.type)},
                     {"epsilon", s.epsilon},
                     {"pass_threshold", s.pass_threshold}};
    if (!s.checkpoint.empty()) j["checkpoint"] = s.checkpoint.string();
    if (s.n_cf) j["n_cf"] = *s.n_cf;
    if (s.type == LabelerType::DiffRand) j["p"] = s.p;
    return j;
}

} // namespace

std::string to_string(LabelerType t) {
    switch (t) {
    case LabelerType::Simulated: return "simulated";
    case LabelerType::Scripted: return "scripted";
    case LabelerType::DiffRand: return "diffrand";
    case LabelerType::Human: return "human";
    }
    return "simulated";
}

std::uint64_t labeler_seed(std::uint64_t run_seed) {
    return run_seed * 0x9e3779b97f4a7c15ULL + 0x1abe1ULL;
}

RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw ConfigError("$: expected object");
    static const std::vector<std::string> known{"method", "seed", "env", "rewards", "labeler", "trainer", "bc_source"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError("$." + key + ": unknown key");
        }
    }
    RunConfig c;
    if (j.contains("method")) {
        if (!j.at("method").is_string()) throw ConfigError("$.method: expected string");
        try {
            c.method = trainer::method_from_string(j.at("method").get<std::string>());
        } catch (const ConfigError&) {
            throw ConfigError("$.method: unknown method '" + j.at("method").get<std::string>() + "'");
        }
    }
    if (j.contains("seed")) {
        const auto& v = j.at("seed");
        if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
            throw ConfigError("$.seed: expected non-negative integer");
        }
        c.seed = v.get<std::uint64_t>();
    }

    env::ProxyRewardRegistry registry;
    if (j.contains("rewards")) {
        try {
            registry.load(j.at("rewards"));
        } catch (const ConfigError& e) {
            rethrow_under("$.rewards", e);
        }
        c.custom_rewards = j.at("rewards");
    }
    nlohmann::json env_j = j.value("env", nlohmann::json::object());
    if (!env_j.is_object()) throw ConfigError("$.env: expected object");
    std::string reward = "PR4";
    if (env_j.contains("reward")) {
        if (!env_j.at("reward").is_string()) throw ConfigError("$.env.reward: expected string");
        reward = env_j.at("reward").get<std::string>();
        env_j.erase("reward");
    }
    try {
        c.env = env::env_spec_from_json(env_j, "$.env");
    } catch (const ConfigError& e) {
        rethrow_under("$.env", e);
    }
    if (!registry.contains(reward)) throw ConfigError("$.env.reward: unknown proxy reward '" + reward + "'");
    c.env.reward = registry.get(reward);
    c.env.reward_name = reward;

    try {
        c.trainer = trainer::trainer_config_from_json(j.value("trainer", nlohmann::json::object()), "$.trainer");
    } catch (const ConfigError& e) {
        rethrow_under("$.trainer", e);
    }
    if (j.contains("labeler")) c.labeler = labeler_from_json(j.at("labeler"), base_dir);
    if (c.labeler.n_cf && *c.labeler.n_cf != c.trainer.n_cf) {
        throw ConfigError("$.labeler.n_cf: must equal $.trainer.n_cf (" + std::to_string(c.trainer.n_cf) + ")");
    }
    if (j.contains("bc_source")) {
        if (!j.at("bc_source").is_string()) throw ConfigError("$.bc_source: expected string");
        c.bc_source = resolve(j.at("bc_source").get<std::string>(), base_dir);
    }

    const bool gridworld = c.env.kind == env::EnvKind::Gridworld;
    const bool needs_labeler = c.method != trainer::Method::RainbowLite && c.method != trainer::Method::BC;
    if (needs_labeler) {
        const auto t = c.labeler.type;
        if (t == LabelerType::Scripted && !gridworld) {
            throw ConfigError("$.labeler.type: scripted labelers exist only for the gridworld");
        }
        if ((t == LabelerType::Simulated || (t == LabelerType::DiffRand && !gridworld)) &&
            c.labeler.checkpoint.empty()) {
            throw ConfigError("$.labeler.checkpoint: required for a " + to_string(t) + " labeler");
        }
    }
    if (c.method == trainer::Method::BC && c.bc_source.empty()) {
        throw ConfigError("$.bc_source: required for method bc");
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("$: cannot open config file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("$: invalid JSON: ") + e.what());
    }
    return run_config_from_json(j, path.parent_path());
}

nlohmann::json run_config_to_json(const RunConfig& c) {
    auto env_j = env::env_spec_to_json(c.env);
    env_j["reward"] = c.env.reward_name;
    nlohmann::json j{{"method", trainer::to_string(c.method)},
                     {"seed", c.seed},
                     {"env", env_j},
                     {"labeler", labeler_to_json(c.labeler)},
                     {"trainer", trainer::trainer_config_to_json(c.trainer)}};
    if (!c.custom_rewards.empty()) j["rewards"] = c.custom_rewards;
    if (!c.bc_source.empty()) j["bc_source"] = c.bc_source.string();
    return j;
}

std::unique_ptr<labelers::Labeler> make_labeler(const RunConfig& c) {
    const auto& s = c.labeler;
    const int actions = c.env.kind == env::EnvKind::Gridworld ? 4 : env::kHighwayActionCount;
    labelers::SimulatedLabelerConfig sim{s.epsilon, c.trainer.n_cf, s.pass_threshold};
    auto q_row = [&]() -> labelers::QRowFn {
        if (s.checkpoint.empty()) {
            if (c.env.kind != env::EnvKind::Gridworld) throw ConfigError("$.labeler.checkpoint: required");
            return labelers::scripted_grid_q(env::Gridworld(c.env.grid));
        }
        auto q = std::make_shared<const q::QFunction>(q::load_checkpoint(s.checkpoint));
        if (q->action_count != actions) throw ConfigError("$.labeler.checkpoint: action count does not match env");
        return labelers::q_row_from(std::move(q));
    };
    const auto seed = labeler_seed(c.seed);
    switch (s.type) {
    case LabelerType::Simulated:
    case LabelerType::Scripted:
        return std::make_unique<labelers::SimulatedLabeler>(q_row(), actions, sim, seed);
    case LabelerType::DiffRand:
        return std::make_unique<labelers::DiffRandLabeler>(
            std::make_unique<labelers::SimulatedLabeler>(q_row(), actions, sim, seed), s.p, actions, seed + 1);
    case LabelerType::Human:
        throw ConfigError("$.labeler.type: human labelers are driven by label-serve");
    }
    throw ConfigError("$.labeler.type: unsupported");
}

} // namespace icopro::serve
