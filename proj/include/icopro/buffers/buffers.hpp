#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "icopro/buffers/transition.hpp"
#include "icopro/losses/losses.hpp"

namespace icopro::buffers {

/// Transition store D. Oldest transitions are dropped once the size exceeds
/// `capacity`. Iteration tags must be non-decreasing.
class TransitionBuffer {
public:
    explicit TransitionBuffer(std::size_t capacity);

    void add(Transition t);
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }
    bool empty() const noexcept { return data_.empty(); }
    const Transition& operator[](std::size_t i) const { return data_[i]; }
    std::span<const Transition> all() const noexcept { return data_; }

    /// Transitions tagged with the last K iterations, current_iter - K + 1 .. current_iter.
    std::span<const Transition> recent_window(int current_iter, int K) const;
    /// Offset of the recent window inside all().
    std::size_t window_offset(int current_iter, int K) const;

    /// N-step target for the transition at `index`; the window runs to the end of the buffer at most.
    losses::NStepTarget nstep_at(std::size_t index, double gamma, int n) const;

private:
    std::size_t capacity_;
    std::vector<Transition> data_;
};

enum class LabelSource { Simulated, Human, RandomCorrupted };
std::string to_string(LabelSource s);
LabelSource label_source_from_string(const std::string& s);

struct CorrectiveLabel {
    env::Observation state;
    int executed_action = 0;
    int label_action = 0;
    LabelSource source = LabelSource::Simulated;
    std::int64_t global_step = 0;
    std::uint64_t episode_id = 0;
    int timestep = 0;

    friend bool operator==(const CorrectiveLabel&, const CorrectiveLabel&) = default;
};

/// Feedback store D^L. Append-only, one label per (episode, timestep).
class FeedbackBuffer {
public:
    FeedbackBuffer() = default;

    /// Returns false (and stores nothing) if the slot already holds a label.
    bool add(CorrectiveLabel label);
    bool is_labeled(std::uint64_t episode_id, int timestep) const;
    std::size_t size() const noexcept { return labels_.size(); }
    bool empty() const noexcept { return labels_.empty(); }
    const std::vector<CorrectiveLabel>& labels() const noexcept { return labels_; }

    std::vector<losses::LabelSample> samples() const;

    /// Every accepted label from now on is appended as one JSON line to `path`.
    void attach_log(const std::filesystem::path& path);
    static FeedbackBuffer replay(const std::filesystem::path& path);

private:
    static std::uint64_t slot_key(std::uint64_t episode_id, int timestep);

    std::vector<CorrectiveLabel> labels_;
    std::unordered_set<std::uint64_t> slots_;
    std::unique_ptr<std::ofstream> log_;
};

std::string label_to_jsonl(const CorrectiveLabel& label);
CorrectiveLabel label_from_jsonl(const std::string& line);

struct Segment {
    std::size_t start = 0;  // index into the rollout
    std::size_t length = 0;
};

/// M pairwise-disjoint T-segments, uniform over all valid placements, that
/// never span an episode boundary. Returns fewer (with a warning) when M
/// segments do not fit. Segments come back sorted by start.
std::vector<Segment> sample_query_segments(std::span<const Transition> rollout, int M, int T, std::mt19937_64& rng);

/// Shuffled sweep of [0, window_size) in batches of batch_size, dropping the
/// partial tail. A window smaller than one batch yields a single short batch.
std::vector<std::vector<std::size_t>> epoch_minibatches(std::size_t window_size, std::size_t batch_size,
                                                        std::mt19937_64& rng);

/// `count` indices drawn uniformly with replacement from [0, population).
std::vector<std::size_t> sample_with_replacement(std::size_t population, std::size_t count, std::mt19937_64& rng);

std::vector<bool> unlabeled_mask(std::span<const Transition* const> batch, const FeedbackBuffer& feedback);

} // namespace icopro::buffers
