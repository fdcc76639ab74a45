#include "icopro/trainer/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "icopro/errors.hpp"
#include "icopro/grad/adam.hpp"
#include "icopro/losses/losses.hpp"

namespace icopro::trainer {
namespace {

using buffers::Transition;
using Clock = std::chrono::steady_clock;

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Stat stat_of(const std::vector<double>& xs) {
    Stat s;
    if (xs.empty()) return s;
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(var / static_cast<double>(xs.size()));
    return s;
}

// Steps the training environment, starting a new episode after every terminal step.
class Collector {
public:
    Collector(std::unique_ptr<env::Environment> env, std::uint64_t run_seed)
        : env_(std::move(env)), run_seed_(run_seed) {
        start();
    }

    const env::Observation& obs() const noexcept { return obs_; }
    env::WorldFrame frame() const { return env_->frame(); }

    Transition step(int action, int iteration) {
        auto res = env_->step(action);
        Transition t;
        t.obs = std::move(obs_);
        t.action = action;
        t.reward = res.reward;
        t.next_obs = res.obs;
        t.terminal = res.done;
        t.episode_id = episode_;
        t.timestep = timestep_;
        t.iteration = iteration;
        ++timestep_;
        if (res.done) {
            ++episode_;
            start();
        } else {
            obs_ = std::move(res.obs);
        }
        return t;
    }

private:
    void start() {
        obs_ = env_->reset(train_episode_seed(run_seed_, episode_));
        timestep_ = 0;
    }

    std::unique_ptr<env::Environment> env_;
    std::uint64_t run_seed_;
    std::uint64_t episode_ = 0;
    int timestep_ = 0;
    env::Observation obs_;
};

void adam_step(grad::AdamState& adam, q::QFunction& q, const q::QGradients& g) {
    auto params = q::parameter_blocks(q);
    auto grads = q::parameter_blocks(g);
    adam.step(params, grads);
}

[[noreturn]] void diverged(const std::string& phase, int iteration, const losses::PropTerms& t, const std::string& why) {
    std::ostringstream ss;
    ss << "training diverged in " << phase << " phase at iteration " << iteration << " (td1=" << t.td1
       << " tdn=" << t.tdn << " mg_label=" << t.label_margin << " mg_tgt=" << t.pseudo_margin << " pvp=" << t.pvp
       << "): " << why;
    throw NumericalError(ss.str(), 0);
}

AlignRecord align_phase(q::QFunction& q, grad::AdamState& adam, const buffers::FeedbackBuffer& fb,
                        const TrainerConfig& cfg, std::mt19937_64& rng, int iteration) {
    AlignRecord rec;
    rec.iteration = iteration;
    adam.reset_moments();
    const auto samples = fb.samples();
    if (samples.empty()) {
        rec.exit = AlignExit::NoLabels;
        return rec;
    }
    rec.accuracy = losses::label_accuracy(samples, q);
    if (rec.accuracy > cfg.acc_target) {
        rec.exit = AlignExit::Accuracy;
        return rec;
    }
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<losses::LabelSample> batch;
    for (int epoch = 0; epoch < cfg.align_max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(samples[order[i]]);
            auto r = losses::label_margin_loss(batch, q, cfg.margin);
            if (!std::isfinite(r.total)) diverged("align", iteration, r.terms, "non-finite margin loss");
            try {
                adam_step(adam, q, r.grads);
            } catch (const NumericalError& e) {
                diverged("align", iteration, r.terms, e.what());
            }
            ++rec.steps;
            rec.accuracy = losses::label_accuracy(samples, q);
            if (rec.accuracy > cfg.acc_target) {
                rec.exit = AlignExit::Accuracy;
                return rec;
            }
        }
    }
    rec.exit = AlignExit::GuardCap;
    spdlog::warn("align phase at iteration {} hit the guard cap of {} epochs with accuracy {:.4f}", iteration,
                 cfg.align_max_epochs, rec.accuracy);
    return rec;
}

struct PropMeans {
    double td1 = 0.0;
    double tdn = 0.0;
    double mg_label = 0.0;
    double mg_tgt = 0.0;
    std::size_t steps = 0;

    void add(const losses::PropTerms& t) {
        td1 += t.td1;
        tdn += t.tdn;
        mg_label += t.label_margin;
        mg_tgt += t.pseudo_margin;
        ++steps;
    }
    void finish() {
        if (steps == 0) return;
        const double n = static_cast<double>(steps);
        td1 /= n;
        tdn /= n;
        mg_label /= n;
        mg_tgt /= n;
    }
};

losses::EnvSample env_sample(const buffers::TransitionBuffer& buffer, std::size_t index, const TrainerConfig& cfg,
                             const buffers::FeedbackBuffer* fb) {
    losses::EnvSample s;
    s.transition = &buffer[index];
    s.nstep = buffer.nstep_at(index, cfg.gamma, cfg.n_step);
    s.nstep_obs = &buffer[index + s.nstep.bootstrap_index].next_obs;
    s.labeled = fb ? fb->is_labeled(s.transition->episode_id, s.transition->timestep) : true;
    return s;
}

PropMeans prop_phase(q::QFunction& q, grad::AdamState& adam, const buffers::TransitionBuffer& buffer,
                     const buffers::FeedbackBuffer& fb, const TrainerConfig& cfg, const losses::PropWeights& weights,
                     std::mt19937_64& rng, int iteration) {
    adam.reset_moments();
    PropMeans means;
    const std::size_t offset = buffer.window_offset(iteration, cfg.window_iters);
    const std::size_t window = buffer.recent_window(iteration, cfg.window_iters).size();
    if (window == 0) return means;
    const auto label_samples = fb.samples();
    std::vector<losses::EnvSample> env_batch;
    std::vector<losses::LabelSample> label_batch;
    for (int epoch = 0; epoch < cfg.prop_epochs; ++epoch) {
        const auto tgt = q::sync_target(q);
        for (const auto& batch : buffers::epoch_minibatches(window, cfg.batch_size, rng)) {
            env_batch.clear();
            for (std::size_t i : batch) env_batch.push_back(env_sample(buffer, offset + i, cfg, &fb));
            label_batch.clear();
            for (std::size_t i : buffers::sample_with_replacement(label_samples.size(), batch.size(), rng)) {
                label_batch.push_back(label_samples[i]);
            }
            auto r = losses::combined_prop_loss(env_batch, label_batch, q, tgt, weights);
            if (!std::isfinite(r.total)) diverged("prop", iteration, r.terms, "non-finite loss");
            try {
                adam_step(adam, q, r.grads);
            } catch (const NumericalError& e) {
                diverged("prop", iteration, r.terms, e.what());
            }
            means.add(r.terms);
        }
    }
    means.finish();
    return means;
}

double elapsed(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

template <typename T>
void read_num(const nlohmann::json& j, const char* key, T& out, const std::string& path) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(path + "." + key + ": expected boolean");
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(path + "." + key + ": expected integer");
    } else {
        if (!v.is_number()) throw ConfigError(path + "." + key + ": expected number");
    }
    out = v.get<T>();
}

void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path + ": expected object");
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError(path + "." + key + ": unknown key");
        }
    }
}

losses::LossWeights loss_weights(const TrainerConfig& cfg) {
    losses::LossWeights w;
    w.margin = cfg.margin;
    w.pseudo_weight = cfg.pseudo_weight;
    w.gamma = cfg.gamma;
    w.n_step = cfg.n_step;
    return w;
}

} // namespace

std::string to_string(Method m) {
    switch (m) {
    case Method::ICoPro: return "icopro";
    case Method::RainbowLite: return "rainbow_lite";
    case Method::BC: return "bc";
    case Method::DAgger: return "dagger";
    case Method::DQfD: return "dqfd";
    case Method::PvpPlusR: return "pvp_plus_r";
    case Method::PvpMinusR: return "pvp_minus_r";
    case Method::AblateAlign: return "ablate_align";
    case Method::AblateTgt: return "ablate_tgt";
    }
    return "icopro";
}

Method method_from_string(const std::string& s) {
    for (auto m : {Method::ICoPro, Method::RainbowLite, Method::BC, Method::DAgger, Method::DQfD, Method::PvpPlusR,
                   Method::PvpMinusR, Method::AblateAlign, Method::AblateTgt}) {
        if (to_string(m) == s) return m;
    }
    throw ConfigError("unknown method: " + s);
}

std::string to_string(AlignExit e) {
    switch (e) {
    case AlignExit::Accuracy: return "accuracy";
    case AlignExit::GuardCap: return "guard_cap";
    case AlignExit::NoLabels: return "no_labels";
    }
    return "no_labels";
}

void TrainerConfig::validate() const {
    if (iterations < 1) throw ConfigError("$.trainer.iterations: must be >= 1");
    if (rollout_len < 1) throw ConfigError("$.trainer.rollout_len: must be >= 1");
    if (queries_per_iter < 0) throw ConfigError("$.trainer.queries_per_iter: must be >= 0");
    if (segment_len < 1) throw ConfigError("$.trainer.segment_len: must be >= 1");
    if (n_cf < 1) throw ConfigError("$.trainer.n_cf: must be >= 1");
    if (!(acc_target > 0.0 && acc_target <= 1.0)) throw ConfigError("$.trainer.acc_target: must lie in (0, 1]");
    if (prop_epochs < 0) throw ConfigError("$.trainer.prop_epochs: must be >= 0");
    if (window_iters < 1) throw ConfigError("$.trainer.window_iters: must be >= 1");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("$.trainer.epsilon: must lie in [0, 1]");
    if (batch_size < 1) throw ConfigError("$.trainer.batch_size: must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("$.trainer.lr: must be positive");
    if (align_max_epochs < 1) throw ConfigError("$.trainer.align_max_epochs: must be >= 1");
    if (eval_episodes < 1) throw ConfigError("$.trainer.eval_episodes: must be >= 1");
    if (rainbow.batch_size < 1 || rainbow.target_update < 1 || rainbow.replay_capacity < 1) {
        throw ConfigError("$.trainer.rainbow: batch_size, target_update and replay_capacity must be positive");
    }
    loss_weights(*this).validate();
}

TrainerConfig trainer_config_from_json(const nlohmann::json& j, const std::string& path) {
    reject_unknown(j,
                   {"iterations", "rollout_len", "queries_per_iter", "segment_len", "n_cf", "acc_target",
                    "prop_epochs", "window_iters", "epsilon", "margin", "pseudo_weight", "gamma", "n_step",
                    "batch_size", "lr", "align_max_epochs", "eval_episodes", "log_wall_time", "rainbow", "net"},
                   path);
    TrainerConfig c;
    read_num(j, "iterations", c.iterations, path);
    read_num(j, "rollout_len", c.rollout_len, path);
    read_num(j, "queries_per_iter", c.queries_per_iter, path);
    read_num(j, "segment_len", c.segment_len, path);
    read_num(j, "n_cf", c.n_cf, path);
    read_num(j, "acc_target", c.acc_target, path);
    read_num(j, "prop_epochs", c.prop_epochs, path);
    read_num(j, "window_iters", c.window_iters, path);
    read_num(j, "epsilon", c.epsilon, path);
    read_num(j, "margin", c.margin, path);
    read_num(j, "pseudo_weight", c.pseudo_weight, path);
    read_num(j, "gamma", c.gamma, path);
    read_num(j, "n_step", c.n_step, path);
    read_num(j, "batch_size", c.batch_size, path);
    read_num(j, "lr", c.lr, path);
    read_num(j, "align_max_epochs", c.align_max_epochs, path);
    read_num(j, "eval_episodes", c.eval_episodes, path);
    read_num(j, "log_wall_time", c.log_wall_time, path);
    if (j.contains("rainbow")) {
        const auto& r = j.at("rainbow");
        const std::string rp = path + ".rainbow";
        reject_unknown(r,
                       {"replay_capacity", "batch_size", "target_update", "warmup", "clip_norm", "epsilon_start",
                        "epsilon_end", "epsilon_decay_steps"},
                       rp);
        read_num(r, "replay_capacity", c.rainbow.replay_capacity, rp);
        read_num(r, "batch_size", c.rainbow.batch_size, rp);
        read_num(r, "target_update", c.rainbow.target_update, rp);
        read_num(r, "warmup", c.rainbow.warmup, rp);
        read_num(r, "clip_norm", c.rainbow.clip_norm, rp);
        read_num(r, "epsilon_start", c.rainbow.epsilon_start, rp);
        read_num(r, "epsilon_end", c.rainbow.epsilon_end, rp);
        read_num(r, "epsilon_decay_steps", c.rainbow.epsilon_decay_steps, rp);
    }
    if (j.contains("net")) {
        const auto& n = j.at("net");
        const std::string np = path + ".net";
        reject_unknown(n, {"trunk_hidden", "head_hidden", "activation"}, np);
        try {
            if (n.contains("trunk_hidden")) c.net.trunk_hidden = n.at("trunk_hidden").get<std::vector<std::size_t>>();
            if (n.contains("head_hidden")) c.net.head_hidden = n.at("head_hidden").get<std::vector<std::size_t>>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(np + ": hidden sizes must be arrays of positive integers");
        }
        if (n.contains("activation")) {
            const auto a = n.at("activation");
            if (a == "relu") {
                c.net.activation = grad::Activation::Relu;
            } else if (a == "tanh") {
                c.net.activation = grad::Activation::Tanh;
            } else {
                throw ConfigError(np + ".activation: expected \"relu\" or \"tanh\"");
            }
        }
    }
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(e.what());
    }
    return c;
}

nlohmann::json trainer_config_to_json(const TrainerConfig& c) {
    return {{"iterations", c.iterations},
            {"rollout_len", c.rollout_len},
            {"queries_per_iter", c.queries_per_iter},
            {"segment_len", c.segment_len},
            {"n_cf", c.n_cf},
            {"acc_target", c.acc_target},
            {"prop_epochs", c.prop_epochs},
            {"window_iters", c.window_iters},
            {"epsilon", c.epsilon},
            {"margin", c.margin},
            {"pseudo_weight", c.pseudo_weight},
            {"gamma", c.gamma},
            {"n_step", c.n_step},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"align_max_epochs", c.align_max_epochs},
            {"eval_episodes", c.eval_episodes},
            {"log_wall_time", c.log_wall_time},
            {"rainbow",
             {{"replay_capacity", c.rainbow.replay_capacity},
              {"batch_size", c.rainbow.batch_size},
              {"target_update", c.rainbow.target_update},
              {"warmup", c.rainbow.warmup},
              {"clip_norm", c.rainbow.clip_norm},
              {"epsilon_start", c.rainbow.epsilon_start},
              {"epsilon_end", c.rainbow.epsilon_end},
              {"epsilon_decay_steps", c.rainbow.epsilon_decay_steps}}},
            {"net",
             {{"trunk_hidden", c.net.trunk_hidden},
              {"head_hidden", c.net.head_hidden},
              {"activation", c.net.activation == grad::Activation::Relu ? "relu" : "tanh"}}}};
}

std::string csv_header() {
    return "iter,env_steps,labels_total,align_acc,align_steps,loss_td1,loss_tdn,loss_mg_label,loss_mg_tgt,"
           "crash_rate,distance_avg,speed_avg,lane_change_ratio,lane_pos_avg,steps_avg,wall_s";
}

std::string csv_row(const RunRecord& r) {
    std::ostringstream ss;
    ss << r.iter << ',' << r.env_steps << ',' << r.labels_total << ',' << fmt_double(r.align_acc) << ','
       << r.align_steps << ',' << fmt_double(r.loss_td1) << ',' << fmt_double(r.loss_tdn) << ','
       << fmt_double(r.loss_mg_label) << ',' << fmt_double(r.loss_mg_tgt) << ','
       << fmt_double(r.eval.crash_rate.mean) << ',' << fmt_double(r.eval.distance.mean) << ','
       << fmt_double(r.eval.speed.mean) << ',' << fmt_double(r.eval.lane_change_ratio.mean) << ','
       << fmt_double(r.eval.lane_position.mean) << ',' << fmt_double(r.eval.steps.mean) << ','
       << fmt_double(r.wall_s);
    return ss.str();
}

RunRecord parse_csv_row(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 16) throw FormatError("metrics row has " + std::to_string(cells.size()) + " columns");
    auto num = [&](std::size_t i) {
        double v = 0.0;
        const auto& c = cells[i];
        auto res = std::from_chars(c.data(), c.data() + c.size(), v);
        if (res.ec != std::errc() || res.ptr != c.data() + c.size()) throw FormatError("bad number: " + c);
        return v;
    };
    RunRecord r;
    r.iter = static_cast<int>(num(0));
    r.env_steps = static_cast<std::int64_t>(num(1));
    r.labels_total = static_cast<std::size_t>(num(2));
    r.align_acc = num(3);
    r.align_steps = static_cast<int>(num(4));
    r.loss_td1 = num(5);
    r.loss_tdn = num(6);
    r.loss_mg_label = num(7);
    r.loss_mg_tgt = num(8);
    r.eval.crash_rate.mean = num(9);
    r.eval.distance.mean = num(10);
    r.eval.speed.mean = num(11);
    r.eval.lane_change_ratio.mean = num(12);
    r.eval.lane_position.mean = num(13);
    r.eval.steps.mean = num(14);
    r.wall_s = num(15);
    return r;
}

std::uint64_t train_episode_seed(std::uint64_t run_seed, std::uint64_t episode) {
    return splitmix(splitmix(run_seed) + episode) & ~std::uint64_t{1};
}

std::uint64_t eval_episode_seed(std::uint64_t run_seed, std::uint64_t episode) {
    return splitmix(splitmix(run_seed ^ 0x5eedULL) + episode) | std::uint64_t{1};
}

EvalSummary evaluate_policy(const Policy& policy, const env::Environment& proto, int episodes, std::uint64_t seed,
                            double gamma) {
    if (episodes < 1) throw ConfigError("evaluation needs at least one episode");
    std::vector<double> crash, distance, speed, lane_change, lane_pos, steps, proxy, discounted, goal;
    auto env = proto.clone();
    for (int e = 0; e < episodes; ++e) {
        auto obs = env->reset(eval_episode_seed(seed, static_cast<std::uint64_t>(e)));
        double disc = 0.0;
        double scale = 1.0;
        while (!env->done()) {
            auto res = env->step(policy(obs));
            disc += scale * res.reward;
            scale *= gamma;
            obs = std::move(res.obs);
        }
        const auto m = env->metrics();
        crash.push_back(m.crashed ? 1.0 : 0.0);
        distance.push_back(m.distance);
        speed.push_back(m.mean_speed);
        lane_change.push_back(m.lane_change_ratio);
        lane_pos.push_back(m.mean_lane_position);
        steps.push_back(m.steps);
        proxy.push_back(m.proxy_return);
        discounted.push_back(disc);
        goal.push_back(m.reached_goal ? 1.0 : 0.0);
    }
    EvalSummary s;
    s.episodes = episodes;
    s.crash_rate = stat_of(crash);
    s.distance = stat_of(distance);
    s.speed = stat_of(speed);
    s.lane_change_ratio = stat_of(lane_change);
    s.lane_position = stat_of(lane_pos);
    s.steps = stat_of(steps);
    s.proxy_return = stat_of(proxy);
    s.discounted_return = stat_of(discounted);
    s.goal_rate = stat_of(goal);
    return s;
}

EvalSummary evaluate(const q::QFunction& q, const env::Environment& proto, int episodes, std::uint64_t seed,
                     double gamma) {
    return evaluate_policy([&](const env::Observation& obs) { return q::greedy_action(q::q_values(q, obs)); }, proto,
                           episodes, seed, gamma);
}

RunResult run_interactive(Method method, const TrainerConfig& cfg, const env::Environment& proto,
                          labelers::Labeler& labeler, buffers::FeedbackBuffer& feedback, std::uint64_t seed,
                          const Hooks& hooks) {
    cfg.validate();
    const auto lw = loss_weights(cfg);
    bool align = false;
    std::optional<losses::PropWeights> prop;
    switch (method) {
    case Method::ICoPro: align = true; prop = losses::PropWeights::icopro(lw); break;
    case Method::AblateAlign: prop = losses::PropWeights::icopro(lw); break;
    case Method::AblateTgt: align = true; prop = losses::PropWeights::dqfd(lw); break;
    case Method::DQfD: prop = losses::PropWeights::dqfd(lw); break;
    case Method::PvpPlusR: prop = losses::PropWeights::pvp_variant(lw, true); break;
    case Method::PvpMinusR: prop = losses::PropWeights::pvp_variant(lw, false); break;
    case Method::DAgger: align = true; break;
    default: throw ConfigError("method " + to_string(method) + " is not an interactive trainer");
    }

    const auto start = Clock::now();
    std::mt19937_64 master(splitmix(seed));
    RunResult out;
    out.q = q::QFunction::create(proto.obs_dim(), proto.action_count(), cfg.net, master());
    std::mt19937_64 act_rng(master()), seg_rng(master()), batch_rng(master()), align_rng(master());
    grad::AdamState adam(grad::AdamConfig::for_batch(cfg.batch_size, cfg.lr), q::block_sizes(out.q));
    buffers::TransitionBuffer buffer(static_cast<std::size_t>(cfg.window_iters) *
                                     static_cast<std::size_t>(cfg.rollout_len));
    Collector collector(proto.clone(), seed);
    const bool want_frames = labeler.kind() == "human";
    std::uint64_t segment_id = 0;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        labeler.begin_iteration(iter);
        const std::int64_t step_base = out.env_steps;

        // Collect.
        std::vector<Transition> rollout;
        std::vector<env::WorldFrame> frames;
        rollout.reserve(static_cast<std::size_t>(cfg.rollout_len));
        for (int k = 0; k < cfg.rollout_len; ++k) {
            if (want_frames) frames.push_back(collector.frame());
            const int a = q::select_action(out.q, collector.obs(), cfg.epsilon, act_rng);
            rollout.push_back(collector.step(a, iter));
        }
        out.env_steps += cfg.rollout_len;

        const auto segments = buffers::sample_query_segments(rollout, cfg.queries_per_iter, cfg.segment_len, seg_rng);
        std::vector<labelers::Query> queries;
        for (const auto& seg : segments) {
            labelers::Query qy;
            qy.segment_id = segment_id++;
            for (std::size_t k = seg.start; k < seg.start + seg.length; ++k) {
                qy.states.push_back(rollout[k].obs);
                qy.executed.push_back(rollout[k].action);
                if (want_frames) qy.frames.push_back(frames[k]);
            }
            queries.push_back(std::move(qy));
        }
        const auto outcomes = queries.empty() ? std::vector<std::vector<labelers::LabelChoice>>{}
                                              : labeler.label_batch(queries);
        for (std::size_t s = 0; s < segments.size(); ++s) {
            const auto& choices = outcomes[s];
            if (choices.size() > static_cast<std::size_t>(cfg.n_cf)) {
                spdlog::warn("labeler returned {} labels for one segment; keeping the first {}", choices.size(),
                             cfg.n_cf);
            }
            for (std::size_t c = 0; c < choices.size() && c < static_cast<std::size_t>(cfg.n_cf); ++c) {
                const auto& choice = choices[c];
                if (choice.index < 0 || static_cast<std::size_t>(choice.index) >= segments[s].length ||
                    choice.action < 0 || choice.action >= proto.action_count()) {
                    throw UsageError("labeler returned an out-of-range label");
                }
                const auto& t = rollout[segments[s].start + static_cast<std::size_t>(choice.index)];
                buffers::CorrectiveLabel label;
                label.state = t.obs;
                label.executed_action = t.action;
                label.label_action = choice.action;
                label.source = choice.corrupted ? buffers::LabelSource::RandomCorrupted
                               : want_frames    ? buffers::LabelSource::Human
                                                : buffers::LabelSource::Simulated;
                label.global_step = step_base + static_cast<std::int64_t>(segments[s].start) + choice.index;
                label.episode_id = t.episode_id;
                label.timestep = t.timestep;
                feedback.add(std::move(label));
            }
        }
        for (auto& t : rollout) buffer.add(std::move(t));

        RunRecord rec;
        rec.iter = iter;
        rec.env_steps = out.env_steps;

        if (align) {
            auto ar = align_phase(out.q, adam, feedback, cfg, align_rng, iter);
            rec.align_acc = ar.accuracy;
            rec.align_steps = ar.steps;
            if (ar.exit == AlignExit::NoLabels) spdlog::info("align phase at iteration {}: no labels yet", iter);
            if (hooks.on_align) hooks.on_align(ar);
            out.aligns.push_back(ar);
        }
        if (prop) {
            if (feedback.empty() && (prop->label_margin != 0.0 || prop->pvp != 0.0)) {
                spdlog::info("prop phase at iteration {}: empty feedback buffer, label terms contribute 0", iter);
            }
            auto m = prop_phase(out.q, adam, buffer, feedback, cfg, *prop, batch_rng, iter);
            rec.loss_td1 = m.td1;
            rec.loss_tdn = m.tdn;
            rec.loss_mg_label = m.mg_label;
            rec.loss_mg_tgt = m.mg_tgt;
        }

        rec.labels_total = feedback.size();
        rec.eval = evaluate(out.q, proto, cfg.eval_episodes, seed, cfg.gamma);
        rec.wall_s = cfg.log_wall_time ? elapsed(start) : 0.0;
        spdlog::info("{} iter {} steps {} labels {} crash {:.3f} speed {:.2f} return {:.3f}", to_string(method), iter,
                     rec.env_steps, rec.labels_total, rec.eval.crash_rate.mean, rec.eval.speed.mean,
                     rec.eval.discounted_return.mean);
        if (hooks.on_record) hooks.on_record(rec);
        if (hooks.on_iteration) hooks.on_iteration(iter, out.q);
        out.records.push_back(rec);
    }
    return out;
}

RunResult run_icopro(const TrainerConfig& config, const env::Environment& proto, labelers::Labeler& labeler,
                     buffers::FeedbackBuffer& feedback, std::uint64_t seed, const Hooks& hooks) {
    return run_interactive(Method::ICoPro, config, proto, labeler, feedback, seed, hooks);
}

RunResult run_rainbow_lite(const TrainerConfig& cfg, const env::Environment& proto, std::uint64_t seed,
                           const Hooks& hooks) {
    cfg.validate();
    const auto& rb = cfg.rainbow;
    const auto start = Clock::now();
    std::mt19937_64 master(splitmix(seed));
    RunResult out;
    out.q = q::QFunction::create(proto.obs_dim(), proto.action_count(), cfg.net, master());
    std::mt19937_64 act_rng(master()), batch_rng(master());
    auto tgt = q::sync_target(out.q);
    grad::AdamState adam(grad::AdamConfig::for_batch(rb.batch_size, cfg.lr), q::block_sizes(out.q));
    buffers::TransitionBuffer buffer(rb.replay_capacity);
    Collector collector(proto.clone(), seed);
    const auto weights = losses::PropWeights::td_only(loss_weights(cfg));
    const std::int64_t total = static_cast<std::int64_t>(cfg.iterations) * cfg.rollout_len;
    std::int64_t updates = 0;
    PropMeans means;
    std::vector<losses::EnvSample> batch;

    for (std::int64_t step = 0; step < total; ++step) {
        const int iter = static_cast<int>(step / cfg.rollout_len);
        const double frac =
            rb.epsilon_decay_steps > 0 ? std::min(1.0, static_cast<double>(step) / rb.epsilon_decay_steps) : 1.0;
        const double eps = rb.epsilon_start + frac * (rb.epsilon_end - rb.epsilon_start);
        const int a = q::select_action(out.q, collector.obs(), eps, act_rng);
        buffer.add(collector.step(a, iter));
        ++out.env_steps;

        if (out.env_steps >= rb.warmup) {
            batch.clear();
            for (std::size_t i : buffers::sample_with_replacement(buffer.size(), rb.batch_size, batch_rng)) {
                batch.push_back(env_sample(buffer, i, cfg, nullptr));
            }
            auto r = losses::combined_prop_loss(batch, {}, out.q, tgt, weights);
            if (!std::isfinite(r.total)) diverged("rainbow", iter, r.terms, "non-finite loss");
            auto grads = q::parameter_blocks(r.grads);
            grad::clip_grad_norm(grads, rb.clip_norm);
            try {
                adam_step(adam, out.q, r.grads);
            } catch (const NumericalError& e) {
                diverged("rainbow", iter, r.terms, e.what());
            }
            means.add(r.terms);
            if (++updates % rb.target_update == 0) tgt = q::sync_target(out.q);
        }

        if (hooks.on_snapshot &&
            std::find(hooks.snapshot_steps.begin(), hooks.snapshot_steps.end(), out.env_steps) !=
                hooks.snapshot_steps.end()) {
            hooks.on_snapshot(out.env_steps, out.q);
        }

        if (out.env_steps % cfg.rollout_len == 0) {
            means.finish();
            RunRecord rec;
            rec.iter = iter;
            rec.env_steps = out.env_steps;
            rec.loss_td1 = means.td1;
            rec.loss_tdn = means.tdn;
            rec.eval = evaluate(out.q, proto, cfg.eval_episodes, seed, cfg.gamma);
            rec.wall_s = cfg.log_wall_time ? elapsed(start) : 0.0;
            spdlog::info("rainbow_lite iter {} steps {} eps {:.3f} crash {:.3f} speed {:.2f} return {:.3f}", iter,
                         rec.env_steps, eps, rec.eval.crash_rate.mean, rec.eval.speed.mean,
                         rec.eval.discounted_return.mean);
            if (hooks.on_record) hooks.on_record(rec);
            if (hooks.on_iteration) hooks.on_iteration(iter, out.q);
            out.records.push_back(rec);
            means = PropMeans{};
        }
    }
    return out;
}

RunResult run_bc(const TrainerConfig& cfg, const env::Environment& proto, const buffers::FeedbackBuffer& labels,
                 std::int64_t source_env_steps, std::uint64_t seed, const Hooks& hooks) {
    cfg.validate();
    const auto start = Clock::now();
    std::mt19937_64 master(splitmix(seed));
    RunResult out;
    out.q = q::QFunction::create(proto.obs_dim(), proto.action_count(), cfg.net, master());
    std::mt19937_64 align_rng(master());
    grad::AdamState adam(grad::AdamConfig::for_batch(cfg.batch_size, cfg.lr), q::block_sizes(out.q));
    const int iter = cfg.iterations - 1;
    auto ar = align_phase(out.q, adam, labels, cfg, align_rng, iter);
    if (hooks.on_align) hooks.on_align(ar);
    out.aligns.push_back(ar);
    out.env_steps = source_env_steps;

    RunRecord rec;
    rec.iter = iter;
    rec.env_steps = source_env_steps;
    rec.labels_total = labels.size();
    rec.align_acc = ar.accuracy;
    rec.align_steps = ar.steps;
    rec.eval = evaluate(out.q, proto, cfg.eval_episodes, seed, cfg.gamma);
    rec.wall_s = cfg.log_wall_time ? elapsed(start) : 0.0;
    if (hooks.on_record) hooks.on_record(rec);
    if (hooks.on_iteration) hooks.on_iteration(iter, out.q);
    out.records.push_back(rec);
    return out;
}

nlohmann::json eval_summary_to_json(const EvalSummary& s) {
    auto st = [](const Stat& x) { return nlohmann::json{{"mean", x.mean}, {"std", x.std}}; };
    return {{"episodes", s.episodes},
            {"crash_rate", st(s.crash_rate)},
            {"distance", st(s.distance)},
            {"speed", st(s.speed)},
            {"lane_change_ratio", st(s.lane_change_ratio)},
            {"lane_position", st(s.lane_position)},
            {"steps", st(s.steps)},
            {"proxy_return", st(s.proxy_return)},
            {"discounted_return", st(s.discounted_return)},
            {"goal_rate", st(s.goal_rate)}};
}

EvalSummary eval_summary_from_json(const nlohmann::json& j) {
    auto st = [&](const char* key) {
        Stat x;
        x.mean = j.at(key).at("mean").get<double>();
        x.std = j.at(key).at("std").get<double>();
        return x;
    };
    try {
        EvalSummary s;
        s.episodes = j.at("episodes").get<int>();
        s.crash_rate = st("crash_rate");
        s.distance = st("distance");
        s.speed = st("speed");
        s.lane_change_ratio = st("lane_change_ratio");
        s.lane_position = st("lane_position");
        s.steps = st("steps");
        s.proxy_return = st("proxy_return");
        s.discounted_return = st("discounted_return");
        s.goal_rate = st("goal_rate");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad metrics document: ") + e.what());
    }
}

std::string config_hash(const nlohmann::json& j) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : j.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

LabelerArtifact train_labeler_checkpoint(const env::Environment& proto, const TrainerConfig& cfg, std::int64_t steps,
                                         const std::vector<std::int64_t>& snapshot_steps,
                                         const std::filesystem::path& dir, std::uint64_t seed) {
    if (steps <= 0 || steps % cfg.rollout_len != 0) {
        throw ConfigError("labeler steps must be a positive multiple of rollout_len");
    }
    TrainerConfig c = cfg;
    c.iterations = static_cast<int>(steps / cfg.rollout_len);
    std::filesystem::create_directories(dir);
    const auto hash = config_hash(trainer_config_to_json(c));

    LabelerArtifact art;
    std::ofstream csv(dir / "labeler_metrics.csv", std::ios::trunc);
    csv << csv_header() << '\n';
    Hooks hooks;
    hooks.snapshot_steps = snapshot_steps;
    hooks.on_snapshot = [&](std::int64_t step, const q::QFunction& q) {
        const auto path = dir / ("labeler_" + std::to_string(step) + ".ckpt");
        q::save_checkpoint(q, path, hash);
        art.snapshots.emplace_back(step, path);
    };
    hooks.on_record = [&](const RunRecord& r) { csv << csv_row(r) << '\n' << std::flush; };
    auto result = run_rainbow_lite(c, proto, seed, hooks);

    art.checkpoint = dir / "labeler.ckpt";
    q::save_checkpoint(result.q, art.checkpoint, hash);
    // Metrics are measured on evaluation seeds derived from a fixed seed so all checkpoints share episodes.
    art.metrics = evaluate(result.q, proto, cfg.eval_episodes, seed, cfg.gamma);
    nlohmann::json doc{{"steps", steps}, {"seed", seed}, {"final", eval_summary_to_json(art.metrics)}};
    nlohmann::json snaps = nlohmann::json::object();
    for (const auto& [step, path] : art.snapshots) {
        snaps[std::to_string(step)] =
            eval_summary_to_json(evaluate(q::load_checkpoint(path), proto, cfg.eval_episodes, seed, cfg.gamma));
    }
    doc["snapshots"] = snaps;
    std::ofstream(dir / "labeler_metrics.json", std::ios::trunc) << doc.dump(2) << '\n';
    return art;
}

} // namespace icopro::trainer
