#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "icopro/env/environment.hpp"

namespace icopro::env {

enum class Normalization { None, MinMaxToUnit };

struct ProxyRewardConfig {
    double change_lane = 0.0;
    double high_speed = 0.0;
    double low_speed = 0.0;
    double crash = 0.0;
    double normalized_lane_index = 0.0;
    Normalization normalization = Normalization::None;

    // Sum of negative / positive event weights.
    double min_raw() const;
    double max_raw() const;

    friend bool operator==(const ProxyRewardConfig&, const ProxyRewardConfig&) = default;
};

double raw_reward(const StepEvents& events, const ProxyRewardConfig& config);

/// Weighted event sum, min-max scaled to [-1, 1] when normalization is on.
/// Throws ConfigError if normalization is requested and max == min.
double proxy_reward(const StepEvents& events, const ProxyRewardConfig& config);

// Engineered highway rewards: PRExp, PR1, PR2, PR3, PR4.
ProxyRewardConfig builtin_proxy_reward(const std::string& name);
bool is_builtin_proxy_reward(const std::string& name);

/// Entry schema: {"change_lane", "high_speed", "low_speed", "crash", "normalized_lane_index"
/// (numbers, default 0), "normalization": "minmax" | "none"}. Unknown keys are rejected.
ProxyRewardConfig proxy_reward_from_json(const nlohmann::json& entry, const std::string& path = "$");
nlohmann::json proxy_reward_to_json(const ProxyRewardConfig& config);

/// Named reward table. Starts with the built-ins; a JSON document of
/// {name: entry} adds custom entries. Built-in names cannot be redefined.
class ProxyRewardRegistry {
public:
    ProxyRewardRegistry();

    void load(const nlohmann::json& document);
    const ProxyRewardConfig& get(const std::string& name) const;
    bool contains(const std::string& name) const { return entries_.contains(name); }
    const std::map<std::string, ProxyRewardConfig>& entries() const { return entries_; }

private:
    std::map<std::string, ProxyRewardConfig> entries_;
};

} // namespace icopro::env
