#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "icopro/serve/run_config.hpp"
#include "icopro/trainer/trainer.hpp"

namespace icopro::serve {

/// Files of a run directory.
struct RunPaths {
    std::filesystem::path root;

    std::filesystem::path config() const { return root / "config.json"; }
    std::filesystem::path metrics() const { return root / "metrics.csv"; }
    std::filesystem::path aligns() const { return root / "align.csv"; }
    std::filesystem::path labels() const { return root / "labels.jsonl"; }
    std::filesystem::path checkpoints() const { return root / "checkpoints"; }
    std::filesystem::path final_checkpoint() const { return checkpoints() / "final.ckpt"; }
};

/// Runs `config` and writes config.json, metrics.csv, align.csv, labels.jsonl and
/// checkpoints/final.ckpt under `out`. A non-null `labeler` replaces the configured one.
/// `checkpoint_every` > 0 also keeps checkpoints/iter_<i>.ckpt.
trainer::RunResult execute_run(const RunConfig& config, const std::filesystem::path& out,
                               labelers::Labeler* labeler = nullptr, int checkpoint_every = 0);

std::vector<trainer::RunRecord> read_metrics(const std::filesystem::path& csv);

struct TrainOptions {
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out; // default runs/<method>_seed<seed>
    int checkpoint_every = 0;
};

struct TrainLabelerOptions {
    std::filesystem::path config; // optional; env.reward defaults to PRExp
    std::int64_t steps = 330'000;
    std::vector<std::int64_t> snapshots;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out = "labeler";
};

struct EvalOptions {
    std::filesystem::path checkpoint; // default <run>/checkpoints/final.ckpt
    std::filesystem::path run;        // run directory supplying env, seed and gamma
    std::filesystem::path config;     // alternative source of the env
    std::optional<int> episodes;
    std::optional<std::uint64_t> seed;
    bool json = false;
};

struct ServeOptions {
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path static_dir;
    int timeout_s = 600;
    std::function<void(int)> on_ready; // receives the bound port
};

struct ReplayOptions {
    std::filesystem::path labels;
    std::filesystem::path out; // optional normalized copy
};

struct CompareOptions {
    std::vector<std::filesystem::path> runs;
};

int cmd_train(const TrainOptions& o, std::ostream& out);
int cmd_train_labeler(const TrainLabelerOptions& o, std::ostream& out);
int cmd_eval(const EvalOptions& o, std::ostream& out);
int cmd_label_serve(const ServeOptions& o, std::ostream& out);
int cmd_replay_labels(const ReplayOptions& o, std::ostream& out);
/// Prints mean ± std of the final row per method and the budget-parity verdict; returns 1 on a violation.
int cmd_compare(const CompareOptions& o, std::ostream& out);

/// Maps ConfigError to exit code 2 and any other failure to 1, reporting on `err`.
int run_guarded(const std::function<int()>& fn, std::ostream& err);

/// Shortest decimal form that parses back to the same double.
std::string format_number(double v);

} // namespace icopro::serve
