#include "icopro/buffers/buffers.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "icopro/errors.hpp"

namespace icopro::buffers {

TransitionBuffer::TransitionBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("transition buffer capacity must be positive");
}

void TransitionBuffer::add(Transition t) {
    if (!data_.empty() && t.iteration < data_.back().iteration) {
        throw UsageError("transition iteration tags must be non-decreasing");
    }
    data_.push_back(std::move(t));
    // Evict in chunks so the amortized cost stays constant.
    const std::size_t slack = std::max<std::size_t>(1, capacity_ / 8);
    if (data_.size() >= capacity_ + slack) {
        data_.erase(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(data_.size() - capacity_));
    }
}

std::size_t TransitionBuffer::window_offset(int current_iter, int K) const {
    if (K < 1) throw ConfigError("window length K must be >= 1");
    const int oldest = current_iter - K + 1;
    auto it = std::lower_bound(data_.begin(), data_.end(), oldest,
                               [](const Transition& t, int tag) { return t.iteration < tag; });
    return static_cast<std::size_t>(it - data_.begin());
}

std::span<const Transition> TransitionBuffer::recent_window(int current_iter, int K) const {
    const std::size_t off = window_offset(current_iter, K);
    auto it = std::upper_bound(data_.begin(), data_.end(), current_iter,
                               [](int tag, const Transition& t) { return tag < t.iteration; });
    const std::size_t end = static_cast<std::size_t>(it - data_.begin());
    return std::span<const Transition>(data_).subspan(off, end - off);
}

losses::NStepTarget TransitionBuffer::nstep_at(std::size_t index, double gamma, int n) const {
    if (index >= data_.size()) throw UsageError("N-step index out of range");
    const std::size_t len = std::min(data_.size() - index, static_cast<std::size_t>(n));
    return losses::nstep_target(std::span<const Transition>(data_).subspan(index, len), gamma, n);
}

std::string to_string(LabelSource s) {
    switch (s) {
    case LabelSource::Simulated: return "simulated";
    case LabelSource::Human: return "human";
    case LabelSource::RandomCorrupted: return "random_corrupted";
    }
    return "simulated";
}

LabelSource label_source_from_string(const std::string& s) {
    if (s == "simulated") return LabelSource::Simulated;
    if (s == "human") return LabelSource::Human;
    if (s == "random_corrupted") return LabelSource::RandomCorrupted;
    throw FormatError("unknown label source: " + s);
}

std::uint64_t FeedbackBuffer::slot_key(std::uint64_t episode_id, int timestep) {
    return (episode_id << 20) | static_cast<std::uint64_t>(timestep);
}

bool FeedbackBuffer::is_labeled(std::uint64_t episode_id, int timestep) const {
    return slots_.contains(slot_key(episode_id, timestep));
}

bool FeedbackBuffer::add(CorrectiveLabel label) {
    if (label.timestep < 0 || label.timestep >= (1 << 20)) throw UsageError("label timestep out of range");
    if (!slots_.insert(slot_key(label.episode_id, label.timestep)).second) return false;
    if (log_) {
        *log_ << label_to_jsonl(label) << '\n';
        log_->flush();
    }
    labels_.push_back(std::move(label));
    return true;
}

std::vector<losses::LabelSample> FeedbackBuffer::samples() const {
    std::vector<losses::LabelSample> out;
    out.reserve(labels_.size());
    for (const auto& l : labels_) out.push_back({&l.state, l.executed_action, l.label_action});
    return out;
}

void FeedbackBuffer::attach_log(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    log_ = std::make_unique<std::ofstream>(path, std::ios::app);
    if (!*log_) throw FormatError("cannot open label log: " + path.string());
}

FeedbackBuffer FeedbackBuffer::replay(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open label log: " + path.string());
    FeedbackBuffer out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.add(label_from_jsonl(line));
        } catch (const FormatError& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::string label_to_jsonl(const CorrectiveLabel& label) {
    nlohmann::json j{{"state", label.state},
                     {"executed", label.executed_action},
                     {"label", label.label_action},
                     {"source", to_string(label.source)},
                     {"step", label.global_step},
                     {"episode", label.episode_id},
                     {"timestep", label.timestep}};
    return j.dump();
}

CorrectiveLabel label_from_jsonl(const std::string& line) {
    try {
        const auto j = nlohmann::json::parse(line);
        CorrectiveLabel l;
        l.state = j.at("state").get<std::vector<double>>();
        l.executed_action = j.at("executed").get<int>();
        l.label_action = j.at("label").get<int>();
        l.source = label_source_from_string(j.at("source").get<std::string>());
        l.global_step = j.at("step").get<std::int64_t>();
        l.episode_id = j.at("episode").get<std::uint64_t>();
        l.timestep = j.at("timestep").get<int>();
        return l;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad label line: ") + e.what());
    }
}

std::vector<Segment> sample_query_segments(std::span<const Transition> rollout, int M, int T, std::mt19937_64& rng) {
    if (M < 0 || T < 1) throw ConfigError("segment count must be >= 0 and length >= 1");
    const std::size_t R = rollout.size();
    const std::size_t len = static_cast<std::size_t>(T);
    const std::size_t m_max = static_cast<std::size_t>(M);

    // valid[i]: a segment starting at i stays inside one episode.
    std::vector<char> valid(R, 0);
    for (std::size_t i = 0; i + len <= R; ++i) {
        bool ok = true;
        for (std::size_t k = 0; k + 1 < len && ok; ++k) {
            const auto& a = rollout[i + k];
            const auto& b = rollout[i + k + 1];
            ok = !a.terminal && a.episode_id == b.episode_id;
        }
        valid[i] = ok;
    }

    // ways[i][m]: number of placements of m disjoint segments inside [i, R).
    std::vector<std::vector<long double>> ways(R + len + 1, std::vector<long double>(m_max + 1, 0.0L));
    for (std::size_t i = R + len + 1; i-- > 0;) {
        ways[i][0] = 1.0L;
        if (i >= R) continue;
        for (std::size_t m = 1; m <= m_max; ++m) {
            ways[i][m] = ways[i + 1][m] + (valid[i] ? ways[i + len][m - 1] : 0.0L);
        }
    }

    std::size_t m = m_max;
    while (m > 0 && ways[0][m] == 0.0L) --m;
    if (m < m_max) {
        spdlog::warn("only {} of {} query segments of length {} fit in a rollout of {} steps", m, M, T, R);
    }

    std::vector<Segment> out;
    std::uniform_real_distribution<long double> coin(0.0L, 1.0L);
    std::size_t i = 0;
    while (m > 0) {
        const long double take = valid[i] ? ways[i + len][m - 1] : 0.0L;
        if (take > 0.0L && coin(rng) * ways[i][m] < take) {
            out.push_back({i, len});
            i += len;
            --m;
        } else {
            ++i;
        }
    }
    return out;
}

std::vector<std::vector<std::size_t>> epoch_minibatches(std::size_t window_size, std::size_t batch_size,
                                                        std::mt19937_64& rng) {
    if (window_size == 0) throw UsageError("cannot sample minibatches from an empty window");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    std::vector<std::size_t> order(window_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    if (window_size < batch_size) {
        out.push_back(std::move(order));
        return out;
    }
    for (std::size_t start = 0; start + batch_size <= window_size; start += batch_size) {
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + batch_size));
    }
    return out;
}

std::vector<std::size_t> sample_with_replacement(std::size_t population, std::size_t count, std::mt19937_64& rng) {
    std::vector<std::size_t> out;
    if (population == 0) return out;
    std::uniform_int_distribution<std::size_t> pick(0, population - 1);
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(pick(rng));
    return out;
}

std::vector<bool> unlabeled_mask(std::span<const Transition* const> batch, const FeedbackBuffer& feedback) {
    std::vector<bool> mask;
    mask.reserve(batch.size());
    for (const auto* t : batch) mask.push_back(!feedback.is_labeled(t->episode_id, t->timestep));
    return mask;
}

} // namespace icopro::buffers
