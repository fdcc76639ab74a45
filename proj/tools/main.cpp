#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "icopro/serve/commands.hpp"

using namespace icopro::serve;

int main(int argc, char** argv) {
    CLI::App app{"icopro: interactive corrective-feedback RL with proxy rewards"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

    TrainOptions train;
    std::uint64_t train_seed = 0;
    auto* train_cmd = app.add_subcommand("train", "run ICoPro or a baseline from a run config");
    train_cmd->add_option("--config", train.config, "run config JSON")->required()->check(CLI::ExistingFile);
    auto* train_seed_opt = train_cmd->add_option("--seed", train_seed, "overrides the config seed");
    train_cmd->add_option("--out", train.out, "run directory (default runs/<method>_seed<seed>)");
    train_cmd->add_option("--checkpoint-every", train.checkpoint_every, "also keep every n-th iteration's weights");

    TrainLabelerOptions labeler;
    std::uint64_t labeler_seed = 0;
    auto* labeler_cmd = app.add_subcommand("train-labeler", "train a rainbow_lite labeler checkpoint (PRExp by default)");
    labeler_cmd->add_option("--config", labeler.config, "config JSON for env and trainer")->check(CLI::ExistingFile);
    labeler_cmd->add_option("--steps", labeler.steps, "env steps")->capture_default_str();
    labeler_cmd->add_option("--snapshot", labeler.snapshots, "extra checkpoint at this step (repeatable)");
    auto* labeler_seed_opt = labeler_cmd->add_option("--seed", labeler_seed);
    labeler_cmd->add_option("--out", labeler.out, "output directory")->capture_default_str();

    EvalOptions eval;
    int eval_episodes = 50;
    std::uint64_t eval_seed = 0;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint greedily");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file");
    eval_cmd->add_option("--run", eval.run, "run directory: env, seed and final checkpoint")->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--config", eval.config, "run config supplying the env")->check(CLI::ExistingFile);
    auto* eval_episodes_opt = eval_cmd->add_option("--episodes", eval_episodes);
    auto* eval_seed_opt = eval_cmd->add_option("--seed", eval_seed);
    eval_cmd->add_flag("--json", eval.json, "print the full summary as JSON");

    ServeOptions serve;
    std::uint64_t serve_seed = 0;
    auto* serve_cmd = app.add_subcommand("label-serve", "run training with a human labeler behind the HTTP service");
    serve_cmd->add_option("--config", serve.config, "run config JSON")->required()->check(CLI::ExistingFile);
    auto* serve_seed_opt = serve_cmd->add_option("--seed", serve_seed);
    serve_cmd->add_option("--out", serve.out, "run directory");
    serve_cmd->add_option("--host", serve.host)->capture_default_str();
    serve_cmd->add_option("--port", serve.port)->capture_default_str();
    serve_cmd->add_option("--static", serve.static_dir, "serve the labeling console from this directory");
    serve_cmd->add_option("--timeout", serve.timeout_s, "seconds to wait for a query batch")->capture_default_str();

    ReplayOptions replay;
    auto* replay_cmd = app.add_subcommand("replay-labels", "rebuild the feedback buffer from a labels.jsonl");
    replay_cmd->add_option("labels", replay.labels, "labels.jsonl")->required()->check(CLI::ExistingFile);
    replay_cmd->add_option("--out", replay.out, "write a normalized copy");

    CompareOptions compare;
    auto* compare_cmd = app.add_subcommand("compare", "summarize runs per method and check budget parity");
    compare_cmd->add_option("runs", compare.runs, "run directories")->required()->check(CLI::ExistingDirectory);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }
    spdlog::set_level(spdlog::level::from_str(log_level));

    return run_guarded(
        [&] {
            if (*train_cmd) {
                if (*train_seed_opt) train.seed = train_seed;
                return cmd_train(train, std::cout);
            }
            if (*labeler_cmd) {
                if (*labeler_seed_opt) labeler.seed = labeler_seed;
                return cmd_train_labeler(labeler, std::cout);
            }
            if (*eval_cmd) {
                if (*eval_episodes_opt) eval.episodes = eval_episodes;
                if (*eval_seed_opt) eval.seed = eval_seed;
                return cmd_eval(eval, std::cout);
            }
            if (*serve_cmd) {
                if (*serve_seed_opt) serve.seed = serve_seed;
                return cmd_label_serve(serve, std::cout);
            }
            if (*replay_cmd) return cmd_replay_labels(replay, std::cout);
            return cmd_compare(compare, std::cout);
        },
        std::cerr);
}
