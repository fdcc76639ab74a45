#include "icopro/serve/commands.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "icopro/errors.hpp"
#include "icopro/serve/service.hpp"

namespace icopro::serve {
namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("$: cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("$: invalid JSON in " + path.string() + ": " + e.what());
    }
}

std::filesystem::path default_out(const RunConfig& c) {
    return std::filesystem::path("runs") / (trainer::to_string(c.method) + "_seed" + std::to_string(c.seed));
}

RunConfig load_with_seed(const std::filesystem::path& path, std::optional<std::uint64_t> seed) {
    auto c = load_run_config(path);
    if (seed) c.seed = *seed;
    return c;
}

struct MetricColumn {
    const char* name;
    double (*get)(const trainer::EvalSummary&);
    double (*get_std)(const trainer::EvalSummary&);
};

const std::vector<MetricColumn>& metric_columns() {
    static const std::vector<MetricColumn> cols{
        {"crash_rate", [](const trainer::EvalSummary& s) { return s.crash_rate.mean; },
         [](const trainer::EvalSummary& s) { return s.crash_rate.std; }},
        {"distance_avg", [](const trainer::EvalSummary& s) { return s.distance.mean; },
         [](const trainer::EvalSummary& s) { return s.distance.std; }},
        {"speed_avg", [](const trainer::EvalSummary& s) { return s.speed.mean; },
         [](const trainer::EvalSummary& s) { return s.speed.std; }},
        {"lane_change_ratio", [](const trainer::EvalSummary& s) { return s.lane_change_ratio.mean; },
         [](const trainer::EvalSummary& s) { return s.lane_change_ratio.std; }},
        {"lane_pos_avg", [](const trainer::EvalSummary& s) { return s.lane_position.mean; },
         [](const trainer::EvalSummary& s) { return s.lane_position.std; }},
        {"steps_avg", [](const trainer::EvalSummary& s) { return s.steps.mean; },
         [](const trainer::EvalSummary& s) { return s.steps.std; }},
    };
    return cols;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {m, 0.0};
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    return {m, std::sqrt(v / static_cast<double>(xs.size() - 1))};
}

} // namespace

std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

trainer::RunResult execute_run(const RunConfig& config, const std::filesystem::path& out, labelers::Labeler* labeler,
                               int checkpoint_every) {
    const RunPaths paths{out};
    std::filesystem::create_directories(paths.checkpoints());
    const auto config_json = run_config_to_json(config);
    std::ofstream(paths.config(), std::ios::trunc) << config_json.dump(2) << '\n';
    const auto hash = trainer::config_hash(config_json);

    std::ofstream metrics(paths.metrics(), std::ios::trunc);
    metrics << trainer::csv_header() << '\n' << std::flush;
    std::ofstream aligns(paths.aligns(), std::ios::trunc);
    aligns << "iter,exit,accuracy,steps\n" << std::flush;
    std::filesystem::remove(paths.labels());

    trainer::Hooks hooks;
    hooks.on_record = [&](const trainer::RunRecord& r) { metrics << trainer::csv_row(r) << '\n' << std::flush; };
    hooks.on_align = [&](const trainer::AlignRecord& a) {
        aligns << a.iteration << ',' << trainer::to_string(a.exit) << ',' << format_number(a.accuracy) << ','
               << a.steps << '\n'
               << std::flush;
    };
    if (checkpoint_every > 0) {
        hooks.on_iteration = [&](int iter, const q::QFunction& q) {
            if ((iter + 1) % checkpoint_every == 0) {
                q::save_checkpoint(q, paths.checkpoints() / ("iter_" + std::to_string(iter) + ".ckpt"), hash);
            }
        };
    }

    auto proto = env::make_environment(config.env);
    buffers::FeedbackBuffer feedback;
    feedback.attach_log(paths.labels());
    trainer::RunResult result;
    switch (config.method) {
    case trainer::Method::RainbowLite:
        result = trainer::run_rainbow_lite(config.trainer, *proto, config.seed, hooks);
        break;
    case trainer::Method::BC: {
        const RunPaths source{config.bc_source};
        const auto labels = buffers::FeedbackBuffer::replay(source.labels());
        const auto rows = read_metrics(source.metrics());
        if (rows.empty()) throw ConfigError("$.bc_source: source run has no metrics rows");
        for (const auto& l : labels.labels()) feedback.add(l);
        result = trainer::run_bc(config.trainer, *proto, feedback, rows.back().env_steps, config.seed, hooks);
        break;
    }
    default: {
        std::unique_ptr<labelers::Labeler> owned;
        if (!labeler) {
            owned = make_labeler(config);
            labeler = owned.get();
        }
        result = trainer::run_interactive(config.method, config.trainer, *proto, *labeler, feedback, config.seed,
                                          hooks);
    }
    }
    q::save_checkpoint(result.q, paths.final_checkpoint(), hash);
    return result;
}

std::vector<trainer::RunRecord> read_metrics(const std::filesystem::path& csv) {
    std::ifstream in(csv);
    if (!in) throw FormatError("cannot open " + csv.string());
    std::string line;
    if (!std::getline(in, line) || line != trainer::csv_header()) {
        throw FormatError(csv.string() + ": missing or unexpected header");
    }
    std::vector<trainer::RunRecord> rows;
    while (std::getline(in, line)) {
        if (!line.empty()) rows.push_back(trainer::parse_csv_row(line));
    }
    return rows;
}

int cmd_train(const TrainOptions& o, std::ostream& out) {
    const auto config = load_with_seed(o.config, o.seed);
    if (config.labeler.type == LabelerType::Human && config.method != trainer::Method::RainbowLite &&
        config.method != trainer::Method::BC) {
        throw ConfigError("$.labeler.type: human labelers need the label-serve command");
    }
    const auto dir = o.out.empty() ? default_out(config) : o.out;
    const auto result = execute_run(config, dir, nullptr, o.checkpoint_every);
    const auto& last = result.records.back();
    out << "run directory: " << dir.string() << '\n'
        << "iterations: " << result.records.size() << "  env_steps: " << result.env_steps
        << "  labels: " << last.labels_total << '\n'
        << "final crash_rate " << format_number(last.eval.crash_rate.mean) << "  speed_avg "
        << format_number(last.eval.speed.mean) << '\n';
    return 0;
}

int cmd_train_labeler(const TrainLabelerOptions& o, std::ostream& out) {
    nlohmann::json j = o.config.empty() ? nlohmann::json::object() : read_json(o.config);
    if (!j.is_object()) throw ConfigError("$: expected object");
    auto& env_j = j["env"];
    if (env_j.is_null()) env_j = nlohmann::json::object();
    if (env_j.is_object() && !env_j.contains("reward")) env_j["reward"] = "PRExp";
    j["method"] = "rainbow_lite";
    auto config = run_config_from_json(j, o.config.empty() ? std::filesystem::path{} : o.config.parent_path());
    if (o.seed) config.seed = *o.seed;
    std::filesystem::create_directories(o.out);
    std::ofstream(o.out / "config.json", std::ios::trunc) << run_config_to_json(config).dump(2) << '\n';
    auto proto = env::make_environment(config.env);
    const auto art = trainer::train_labeler_checkpoint(*proto, config.trainer, o.steps, o.snapshots, o.out,
                                                       config.seed);
    out << "labeler checkpoint: " << art.checkpoint.string() << '\n'
        << "crash_rate " << format_number(art.metrics.crash_rate.mean) << "  speed_avg "
        << format_number(art.metrics.speed.mean) << '\n';
    for (const auto& [step, path] : art.snapshots) out << "snapshot " << step << ": " << path.string() << '\n';
    return 0;
}

int cmd_eval(const EvalOptions& o, std::ostream& out) {
    RunConfig config;
    std::filesystem::path ckpt = o.checkpoint;
    if (!o.run.empty()) {
        config = load_run_config(RunPaths{o.run}.config());
        if (ckpt.empty()) ckpt = RunPaths{o.run}.final_checkpoint();
    } else if (!o.config.empty()) {
        config = load_run_config(o.config);
    }
    if (ckpt.empty()) throw ConfigError("$: eval needs --checkpoint or --run");
    if (o.seed) config.seed = *o.seed;
    const int episodes = o.episodes.value_or(o.run.empty() ? 50 : config.trainer.eval_episodes);
    if (episodes < 1) throw ConfigError("$.episodes: must be >= 1");
    const auto q = q::load_checkpoint(ckpt);
    auto proto = env::make_environment(config.env);
    if (q.obs_dim != proto->obs_dim() || q.action_count != proto->action_count()) {
        throw ConfigError("$.env: checkpoint does not match the environment's observation or action size");
    }
    const auto s = trainer::evaluate(q, *proto, episodes, config.seed, config.trainer.gamma);
    if (o.json) {
        out << trainer::eval_summary_to_json(s).dump(2) << '\n';
        return 0;
    }
    out << "episodes " << s.episodes << '\n';
    for (const auto& col : metric_columns()) {
        out << std::left << std::setw(18) << col.name << format_number(col.get(s)) << " ± "
            << format_number(col.get_std(s)) << '\n';
    }
    return 0;
}

int cmd_label_serve(const ServeOptions& o, std::ostream& out) {
    auto config = load_with_seed(o.config, o.seed);
    config.labeler.type = LabelerType::Human;
    if (config.method == trainer::Method::RainbowLite || config.method == trainer::Method::BC) {
        throw ConfigError("$.method: " + trainer::to_string(config.method) + " takes no labels");
    }
    if (o.timeout_s < 1) throw ConfigError("$.timeout: must be >= 1 second");
    auto proto = env::make_environment(config.env);
    auto session = std::make_shared<labelers::LabelSession>(
        trainer::to_string(config.method) + "-" + std::to_string(config.seed), proto->action_names(),
        std::chrono::seconds(o.timeout_s));
    LabelService service(session, config.trainer.iterations, o.static_dir);
    const int port = service.start(o.host, o.port);
    out << "labeling console: http://" << o.host << ':' << port << '\n' << std::flush;
    if (o.on_ready) o.on_ready(port);
    labelers::HumanLabeler human(session);
    const auto dir = o.out.empty() ? default_out(config) : o.out;
    try {
        execute_run(config, dir, &human);
    } catch (...) {
        session->close();
        service.stop();
        throw;
    }
    session->close();
    service.stop();
    out << "run directory: " << dir.string() << '\n';
    return 0;
}

int cmd_replay_labels(const ReplayOptions& o, std::ostream& out) {
    const auto fb = buffers::FeedbackBuffer::replay(o.labels);
    std::map<std::string, std::size_t> by_source;
    for (const auto& l : fb.labels()) ++by_source[buffers::to_string(l.source)];
    out << "labels " << fb.size() << '\n';
    for (const auto& [source, n] : by_source) out << "  " << source << ' ' << n << '\n';
    if (!o.out.empty()) {
        std::filesystem::remove(o.out);
        buffers::FeedbackBuffer copy;
        copy.attach_log(o.out);
        for (const auto& l : fb.labels()) copy.add(l);
        out << "written " << o.out.string() << '\n';
    }
    return 0;
}

int cmd_compare(const CompareOptions& o, std::ostream& out) {
    if (o.runs.empty()) throw ConfigError("$.runs: compare needs at least one run directory");
    struct Run {
        RunConfig config;
        std::vector<trainer::RunRecord> rows;
        std::filesystem::path dir;
    };
    std::vector<Run> runs;
    for (const auto& dir : o.runs) {
        const RunPaths p{dir};
        runs.push_back({load_run_config(p.config()), read_metrics(p.metrics()), dir});
        if (runs.back().rows.empty()) throw FormatError(p.metrics().string() + ": no rows");
    }

    std::vector<std::string> violations;
    const auto& ref = runs.front().config.trainer;
    for (const auto& run : runs) {
        const auto& t = run.config.trainer;
        const auto name = run.dir.string();
        if (t.iterations != ref.iterations || t.rollout_len != ref.rollout_len ||
            t.queries_per_iter != ref.queries_per_iter || t.n_cf != ref.n_cf) {
            violations.push_back(name + ": schedule (I, R, M, n_cf) differs from " + runs.front().dir.string());
        }
        const auto step_budget = static_cast<std::int64_t>(t.iterations) * t.rollout_len;
        const auto label_budget =
            static_cast<std::size_t>(t.iterations) * static_cast<std::size_t>(t.queries_per_iter * t.n_cf);
        const auto& last = run.rows.back();
        if (last.env_steps != step_budget) {
            violations.push_back(name + ": env steps " + std::to_string(last.env_steps) + " != I*R " +
                                 std::to_string(step_budget));
        }
        if (run.config.method != trainer::Method::BC) {
            if (run.rows.size() != static_cast<std::size_t>(t.iterations)) {
                violations.push_back(name + ": " + std::to_string(run.rows.size()) + " rows for " +
                                     std::to_string(t.iterations) + " iterations");
            }
            for (std::size_t i = 0; i < run.rows.size(); ++i) {
                const auto& r = run.rows[i];
                const auto per_iter = static_cast<std::size_t>(t.queries_per_iter * t.n_cf);
                if (r.env_steps != static_cast<std::int64_t>(i + 1) * t.rollout_len ||
                    r.labels_total > (i + 1) * per_iter) {
                    violations.push_back(name + ": row " + std::to_string(i) + " exceeds its per-iteration budget");
                    break;
                }
            }
        }
        if (last.labels_total > label_budget) {
            violations.push_back(name + ": " + std::to_string(last.labels_total) + " labels > I*M*n_cf " +
                                 std::to_string(label_budget));
        }
    }

    std::map<std::string, std::vector<const Run*>> by_method;
    for (const auto& run : runs) by_method[trainer::to_string(run.config.method)].push_back(&run);
    out << std::left << std::setw(14) << "method" << std::setw(7) << "runs";
    for (const auto& col : metric_columns()) out << std::setw(24) << col.name;
    out << std::setw(12) << "labels" << "env_steps\n";
    for (const auto& [method, group] : by_method) {
        out << std::setw(14) << method << std::setw(7) << group.size();
        for (const auto& col : metric_columns()) {
            std::vector<double> xs;
            for (const auto* r : group) xs.push_back(col.get(r->rows.back().eval));
            const auto [m, s] = mean_std(xs);
            std::ostringstream cell;
            cell << std::fixed << std::setprecision(3) << m << " ± " << s;
            out << std::setw(24 + 1) << cell.str(); // "±" is two bytes in UTF-8
        }
        std::vector<double> labels, steps;
        for (const auto* r : group) {
            labels.push_back(static_cast<double>(r->rows.back().labels_total));
            steps.push_back(static_cast<double>(r->rows.back().env_steps));
        }
        out << std::setw(12) << format_number(mean_std(labels).first) << format_number(mean_std(steps).first)
            << '\n';
    }
    if (violations.empty()) {
        out << "budget parity: ok\n";
        return 0;
    }
    out << "budget parity: violated\n";
    for (const auto& v : violations) out << "  " << v << '\n';
    return 1;
}

int run_guarded(const std::function<int()>& fn, std::ostream& err) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace icopro::serve
