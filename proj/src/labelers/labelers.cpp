#include "icopro/labelers/labelers.hpp"

#include <algorithm>
#include <numeric>

#include <spdlog/spdlog.h>

#include "icopro/errors.hpp"

namespace icopro::labelers {

std::vector<std::vector<LabelChoice>> Labeler::label_batch(const std::vector<Query>& queries) {
    std::vector<std::vector<LabelChoice>> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(label(q));
    return out;
}

SimulatedLabeler::SimulatedLabeler(QRowFn q_row, int action_count, SimulatedLabelerConfig config, std::uint64_t seed)
    : q_row_(std::move(q_row)), action_count_(action_count), config_(config), rng_(seed) {
    if (config_.n_cf < 1) throw ConfigError("n_cf must be >= 1");
    if (config_.epsilon < 0.0 || config_.epsilon > 1.0) throw ConfigError("labeler epsilon must lie in [0, 1]");
    if (action_count_ < 1) throw ConfigError("labeler needs at least one action");
}

int SimulatedLabeler::suggest(const env::Observation& obs) {
    return q::epsilon_greedy(q_row_(obs), config_.epsilon, rng_);
}

std::vector<LabelChoice> SimulatedLabeler::label(const Query& query) {
    if (query.states.empty()) throw UsageError("empty query segment");
    if (query.executed.size() != query.states.size()) throw UsageError("query states and actions differ in length");
    const std::size_t T = query.length();
    std::vector<double> diff(T);
    std::vector<int> suggested(T);
    for (std::size_t t = 0; t < T; ++t) {
        const auto row = q_row_(query.states[t]);
        const int a_l = q::epsilon_greedy(row, config_.epsilon, rng_);
        suggested[t] = a_l;
        diff[t] = row[static_cast<std::size_t>(a_l)] - row[static_cast<std::size_t>(query.executed[t])];
    }
    std::vector<std::size_t> order(T);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return diff[a] > diff[b]; });
    std::vector<LabelChoice> out;
    for (std::size_t k = 0; k < order.size() && out.size() < static_cast<std::size_t>(config_.n_cf); ++k) {
        const std::size_t t = order[k];
        if (!(diff[t] > config_.pass_threshold)) break;
        out.push_back({static_cast<int>(t), suggested[t], false});
    }
    return out;
}

QRowFn q_row_from(std::shared_ptr<const q::QFunction> q) {
    return [q = std::move(q)](const env::Observation& obs) { return q::q_values(*q, obs); };
}

QRowFn scripted_grid_q(const env::Gridworld& grid) {
    const auto dist = grid.distances_to_goal();
    const auto cfg = grid.config();
    auto copy = std::make_shared<env::Gridworld>(cfg);
    return [copy, dist, cols = cfg.cols](const env::Observation& obs) {
        const auto cell = copy->decode(obs);
        std::vector<double> row(4);
        for (int a = 0; a < 4; ++a) {
            const auto next = copy->move(cell, a);
            const int d = dist[static_cast<std::size_t>(next.first * cols + next.second)];
            row[static_cast<std::size_t>(a)] = copy->is_cliff(next) || d < 0 ? -1000.0 : -(1.0 + d);
        }
        return row;
    };
}

DiffRandLabeler::DiffRandLabeler(std::unique_ptr<Labeler> inner, double p, int action_count, std::uint64_t seed)
    : inner_(std::move(inner)), p_(p), action_count_(action_count), rng_(seed) {
    if (!inner_) throw ConfigError("diffrand needs an inner labeler");
    if (p_ < 0.0 || p_ > 1.0) throw ConfigError("diffrand p must lie in [0, 1]");
}

std::vector<LabelChoice> DiffRandLabeler::label(const Query& query) {
    auto out = inner_->label(query);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<int> pick(0, action_count_ - 1);
    for (auto& choice : out) {
        ++emitted_;
        if (coin(rng_) < p_) {
            choice.action = pick(rng_);
            choice.corrupted = true;
            ++replaced_;
        }
    }
    return out;
}

LabelSession::LabelSession(std::string session_id, std::vector<std::string> action_names,
                           std::chrono::milliseconds timeout)
    : session_id_(std::move(session_id)), action_names_(std::move(action_names)), timeout_(timeout) {}

std::vector<std::vector<LabelChoice>> LabelSession::request(std::vector<Query> batch, int iteration) {
    std::unique_lock lock(mu_);
    if (done_) throw UsageError("label session is closed");
    if (active_) throw UsageError("a query batch is already outstanding");
    batch_.clear();
    for (auto& q : batch) batch_.push_back({std::move(q), std::nullopt});
    iteration_ = iteration;
    active_ = true;
    cv_.notify_all();
    const bool all_done = cv_.wait_for(lock, timeout_, [&] {
        return done_ || std::all_of(batch_.begin(), batch_.end(), [](const Slot& s) { return s.outcome.has_value(); });
    });
    std::vector<std::vector<LabelChoice>> out;
    std::size_t expired = 0;
    for (auto& slot : batch_) {
        if (slot.outcome) {
            out.push_back(*slot.outcome);
        } else {
            out.emplace_back();
            ++expired;
        }
        closed_ids_.push_back(slot.query.segment_id);
    }
    if (!all_done && expired > 0) {
        spdlog::warn("label session timed out with {} unanswered queries; treating them as passes", expired);
    }
    batch_.clear();
    active_ = false;
    return out;
}

void LabelSession::close() {
    std::lock_guard lock(mu_);
    done_ = true;
    cv_.notify_all();
}

std::optional<Query> LabelSession::next_pending() const {
    std::lock_guard lock(mu_);
    for (const auto& slot : batch_) {
        if (!slot.outcome) return slot.query;
    }
    return std::nullopt;
}

SubmitResult LabelSession::resolve(std::uint64_t segment_id, std::vector<LabelChoice> outcome) {
    std::lock_guard lock(mu_);
    for (auto& slot : batch_) {
        if (slot.query.segment_id != segment_id) continue;
        if (slot.outcome) return {SubmitStatus::Conflict, "segment already has an outcome"};
        for (const auto& c : outcome) {
            if (c.index < 0 || static_cast<std::size_t>(c.index) >= slot.query.length()) {
                return {SubmitStatus::Invalid, "t must lie in [0, " + std::to_string(slot.query.length()) + ")"};
            }
            if (c.action < 0 || static_cast<std::size_t>(c.action) >= action_names_.size()) {
                return {SubmitStatus::Invalid, "unknown action " + std::to_string(c.action)};
            }
        }
        labels_total_ += outcome.size();
        ++resolved_total_;
        slot.outcome = std::move(outcome);
        cv_.notify_all();
        return {};
    }
    if (std::find(closed_ids_.begin(), closed_ids_.end(), segment_id) != closed_ids_.end()) {
        return {SubmitStatus::Conflict, "segment is no longer pending"};
    }
    return {SubmitStatus::NotFound, "unknown segment " + std::to_string(segment_id)};
}

SubmitResult LabelSession::submit_label(std::uint64_t segment_id, int t, int action) {
    return resolve(segment_id, {LabelChoice{t, action, false}});
}

SubmitResult LabelSession::submit_pass(std::uint64_t segment_id) {
    return resolve(segment_id, {});
}

SessionSnapshot LabelSession::snapshot() const {
    std::lock_guard lock(mu_);
    SessionSnapshot s;
    s.session_id = session_id_;
    s.status = done_ ? "done" : active_ ? "active" : "waiting";
    for (const auto& slot : batch_) s.pending += !slot.outcome;
    s.resolved_total = resolved_total_;
    s.labels_total = labels_total_;
    s.iteration = iteration_;
    return s;
}

std::vector<LabelChoice> HumanLabeler::label(const Query& query) {
    return session_->request({query}, iteration_).front();
}

std::vector<std::vector<LabelChoice>> HumanLabeler::label_batch(const std::vector<Query>& queries) {
    return session_->request(queries, iteration_);
}

} // namespace icopro::labelers
