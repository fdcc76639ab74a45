#include "icopro/env/proxy_reward.hpp"

#include <set>

#include "icopro/errors.hpp"

namespace icopro::env {
namespace {

double negative_part(double w) { return w < 0.0 ? w : 0.0; }
double positive_part(double w) { return w > 0.0 ? w : 0.0; }

ProxyRewardConfig make(double change, double high, double low, double crash, Normalization norm) {
    ProxyRewardConfig c;
    c.change_lane = change;
    c.high_speed = high;
    c.low_speed = low;
    c.crash = crash;
    c.normalization = norm;
    return c;
}

const std::map<std::string, ProxyRewardConfig>& builtins() {
    static const std::map<std::string, ProxyRewardConfig> table{
        {"PRExp", make(0.2, 1.5, -0.5, -1.7, Normalization::MinMaxToUnit)},
        {"PR1", make(0.0, 2.0, -1.0, -1.0, Normalization::MinMaxToUnit)},
        {"PR2", make(0.2, 0.8, 0.0, -1.0, Normalization::MinMaxToUnit)},
        {"PR3", make(0.0, 0.0, 0.0, -1.0, Normalization::MinMaxToUnit)},
        {"PR4", make(0.0, 0.0, 0.0, -1.0, Normalization::None)},
    };
    return table;
}

} // namespace

double ProxyRewardConfig::min_raw() const {
    return negative_part(change_lane) + negative_part(high_speed) + negative_part(low_speed) +
           negative_part(crash) + negative_part(normalized_lane_index);
}

double ProxyRewardConfig::max_raw() const {
    return positive_part(change_lane) + positive_part(high_speed) + positive_part(low_speed) +
           positive_part(crash) + positive_part(normalized_lane_index);
}

double raw_reward(const StepEvents& events, const ProxyRewardConfig& config) {
    double r = 0.0;
    if (events.changed_lane) r += config.change_lane;
    if (events.high_speed) r += config.high_speed;
    if (events.low_speed) r += config.low_speed;
    if (events.crashed) r += config.crash;
    r += config.normalized_lane_index * events.lane_position;
    return r;
}

double proxy_reward(const StepEvents& events, const ProxyRewardConfig& config) {
    const double raw = raw_reward(events, config);
    if (config.normalization == Normalization::None) return raw;
    const double lo = config.min_raw();
    const double hi = config.max_raw();
    if (hi == lo) throw ConfigError("min-max normalization needs distinct min and max rewards");
    return 2.0 * (raw - lo) / (hi - lo) - 1.0;
}

ProxyRewardConfig builtin_proxy_reward(const std::string& name) {
    auto it = builtins().find(name);
    if (it == builtins().end()) throw ConfigError("unknown proxy reward '" + name + "'");
    return it->second;
}

bool is_builtin_proxy_reward(const std::string& name) {
    return builtins().contains(name);
}

ProxyRewardConfig proxy_reward_from_json(const nlohmann::json& entry, const std::string& path) {
    if (!entry.is_object()) throw ConfigError(path + ": proxy reward entry must be an object");
    static const std::set<std::string> weights{"change_lane", "high_speed", "low_speed", "crash",
                                               "normalized_lane_index"};
    ProxyRewardConfig c;
    for (const auto& [key, value] : entry.items()) {
        if (key == "normalization") {
            if (!value.is_string()) throw ConfigError(path + ".normalization: expected string");
            const auto s = value.get<std::string>();
            if (s == "minmax") {
                c.normalization = Normalization::MinMaxToUnit;
            } else if (s == "none") {
                c.normalization = Normalization::None;
            } else {
                throw ConfigError(path + ".normalization: expected \"minmax\" or \"none\"");
            }
            continue;
        }
        if (!weights.contains(key)) throw ConfigError(path + "." + key + ": unknown key");
        if (!value.is_number()) throw ConfigError(path + "." + key + ": expected number");
        const double w = value.get<double>();
        if (key == "change_lane") c.change_lane = w;
        if (key == "high_speed") c.high_speed = w;
        if (key == "low_speed") c.low_speed = w;
        if (key == "crash") c.crash = w;
        if (key == "normalized_lane_index") c.normalized_lane_index = w;
    }
    if (c.normalization == Normalization::MinMaxToUnit && c.max_raw() == c.min_raw()) {
        throw ConfigError(path + ": min-max normalization needs distinct min and max rewards");
    }
    return c;
}

nlohmann::json proxy_reward_to_json(const ProxyRewardConfig& c) {
    return {{"change_lane", c.change_lane},
            {"high_speed", c.high_speed},
            {"low_speed", c.low_speed},
            {"crash", c.crash},
            {"normalized_lane_index", c.normalized_lane_index},
            {"normalization", c.normalization == Normalization::MinMaxToUnit ? "minmax" : "none"}};
}

ProxyRewardRegistry::ProxyRewardRegistry() : entries_(builtins()) {}

void ProxyRewardRegistry::load(const nlohmann::json& document) {
    if (!document.is_object()) throw ConfigError("$: proxy reward document must be an object");
    for (const auto& [name, entry] : document.items()) {
        if (is_builtin_proxy_reward(name)) {
            throw ConfigError("$." + name + ": built-in proxy reward cannot be redefined");
        }
        entries_[name] = proxy_reward_from_json(entry, "$." + name);
    }
}

const ProxyRewardConfig& ProxyRewardRegistry::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown proxy reward '" + name + "'");
    return it->second;
}

} // namespace icopro::env
