#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "icopro/env/environment.hpp"
#include "icopro/env/gridworld.hpp"
#include "icopro/q/qfunction.hpp"

namespace icopro::labelers {

/// T consecutive steps of the agent's rollout shown to a labeler.
struct Query {
    std::uint64_t segment_id = 0;
    std::vector<env::Observation> states;
    std::vector<int> executed;
    std::vector<env::WorldFrame> frames; // filled only when a human is labeling

    std::size_t length() const noexcept { return states.size(); }
};

struct LabelChoice {
    int index = 0;  // position inside the segment
    int action = 0;
    bool corrupted = false;

    friend bool operator==(const LabelChoice&, const LabelChoice&) = default;
};

class Labeler {
public:
    virtual ~Labeler() = default;
    virtual std::vector<LabelChoice> label(const Query& query) = 0;
    /// Default labels queries one at a time.
    virtual std::vector<std::vector<LabelChoice>> label_batch(const std::vector<Query>& queries);
    virtual std::string kind() const = 0;
    virtual void begin_iteration(int /*iteration*/) {}
};

using QRowFn = std::function<std::vector<double>(const env::Observation&)>;

struct SimulatedLabelerConfig {
    double epsilon = 0.01;
    int n_cf = 1;
    double pass_threshold = 0.0;
};

/// Labels the n_cf steps with the largest Q^L(s, a^L) - Q^L(s, a_exec) above
/// the pass threshold, where a^L is epsilon-greedy over Q^L.
class SimulatedLabeler final : public Labeler {
public:
    SimulatedLabeler(QRowFn q_row, int action_count, SimulatedLabelerConfig config, std::uint64_t seed);

    std::vector<LabelChoice> label(const Query& query) override;
    std::string kind() const override { return "simulated"; }

    /// The labeler's own epsilon-greedy action, as used for labels.
    int suggest(const env::Observation& obs);
    const SimulatedLabelerConfig& config() const noexcept { return config_; }

private:
    QRowFn q_row_;
    int action_count_;
    SimulatedLabelerConfig config_;
    std::mt19937_64 rng_;
};

QRowFn q_row_from(std::shared_ptr<const q::QFunction> q);

/// Q^L(s, a) = -(1 + moves to goal from the cell reached by a); the cliff is far below.
QRowFn scripted_grid_q(const env::Gridworld& grid);

/// Replaces each emitted label's action, independently with probability p, by
/// a uniform random action. Indices are kept.
class DiffRandLabeler final : public Labeler {
public:
    DiffRandLabeler(std::unique_ptr<Labeler> inner, double p, int action_count, std::uint64_t seed);

    std::vector<LabelChoice> label(const Query& query) override;
    std::string kind() const override { return "diffrand"; }
    void begin_iteration(int iteration) override { inner_->begin_iteration(iteration); }

    std::uint64_t emitted() const noexcept { return emitted_; }
    std::uint64_t replaced() const noexcept { return replaced_; }

private:
    std::unique_ptr<Labeler> inner_;
    double p_;
    int action_count_;
    std::mt19937_64 rng_;
    std::uint64_t emitted_ = 0;
    std::uint64_t replaced_ = 0;
};

enum class SubmitStatus { Ok, NotFound, Conflict, Invalid };

struct SubmitResult {
    SubmitStatus status = SubmitStatus::Ok;
    std::string reason;
};

struct SessionSnapshot {
    std::string session_id;
    std::string status; // waiting | active | done
    std::size_t pending = 0;
    std::size_t resolved_total = 0;
    std::size_t labels_total = 0;
    int iteration = 0;
};

/// Hand-off point between the trainer thread and the labeling service. At most
/// one batch of queries is outstanding at a time.
class LabelSession {
public:
    LabelSession(std::string session_id, std::vector<std::string> action_names,
                 std::chrono::milliseconds timeout = std::chrono::seconds(600));

    // Trainer side. Blocks until every query is resolved or the timeout expires;
    // unresolved queries come back empty.
    std::vector<std::vector<LabelChoice>> request(std::vector<Query> batch, int iteration);
    void close();

    // Service side.
    std::optional<Query> next_pending() const;
    SubmitResult submit_label(std::uint64_t segment_id, int t, int action);
    SubmitResult submit_pass(std::uint64_t segment_id);
    SessionSnapshot snapshot() const;
    const std::vector<std::string>& action_names() const noexcept { return action_names_; }

private:
    struct Slot {
        Query query;
        std::optional<std::vector<LabelChoice>> outcome;
    };
    SubmitResult resolve(std::uint64_t segment_id, std::vector<LabelChoice> outcome);

    const std::string session_id_;
    const std::vector<std::string> action_names_;
    const std::chrono::milliseconds timeout_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::vector<Slot> batch_;
    std::vector<std::uint64_t> closed_ids_;
    std::size_t resolved_total_ = 0;
    std::size_t labels_total_ = 0;
    int iteration_ = 0;
    bool active_ = false;
    bool done_ = false;
};

/// Labeler that forwards each batch to a human through a LabelSession.
class HumanLabeler final : public Labeler {
public:
    explicit HumanLabeler(std::shared_ptr<LabelSession> session) : session_(std::move(session)) {}

    std::vector<LabelChoice> label(const Query& query) override;
    std::vector<std::vector<LabelChoice>> label_batch(const std::vector<Query>& queries) override;
    std::string kind() const override { return "human"; }

    void begin_iteration(int iteration) override { iteration_ = iteration; }

private:
    std::shared_ptr<LabelSession> session_;
    int iteration_ = 0;
};

} // namespace icopro::labelers
