// flow4dsr CLI: orchestrates the synthetic 4D-flow super-resolution pipeline
// over F4D1 containers.
//
//   flow4dsr <generate|build-dataset|train|predict|evaluate> --config <path> ...
//
// Exit codes: 0 success, 2 config/validation error, 3 data-format error,
// 4 numeric failure.

#include "flow4dsr/errors.hpp"
#include "flow4dsr/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <optional>

using namespace flow4dsr;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "pipeline config JSON")->required();
    cmd->add_option("--seed", args.seed, "override the config seed");
    cmd->add_option("--out", args.out, "override the output directory");
}

PipelineConfig load(const CommonArgs& args) {
    std::optional<std::filesystem::path> out;
    if (args.out) out = *args.out;
    return load_config(args.config_path, args.seed, out);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic 4D-flow MRI super-resolution pipeline"};
    app.require_subcommand(1);

    CommonArgs gen_args, build_args, train_args, predict_args, eval_args;

    CLI::App* gen = app.add_subcommand("generate", "synthesize HR frame containers");
    add_common(gen, gen_args);

    CLI::App* build =
        app.add_subcommand("build-dataset", "build train/val patch sets and test volumes");
    add_common(build, build_args);

    CLI::App* train = app.add_subcommand("train", "train the super-resolution network");
    add_common(train, train_args);

    CLI::App* predict = app.add_subcommand("predict", "super-resolve an LR volume container");
    add_common(predict, predict_args);
    std::string predict_in, predict_ckpt, predict_out;
    predict->add_option("--in", predict_in, "LR volume container (test_lr.f4d1)");
    predict->add_option("--checkpoint", predict_ckpt, "checkpoint file (.f4dw)");
    predict->add_option("--output", predict_out, "output container path");

    CLI::App* evaluate = app.add_subcommand("evaluate", "compare predictions against truth");
    add_common(evaluate, eval_args);
    std::string eval_pred, eval_truth, eval_lr, eval_report;
    evaluate->add_option("--pred", eval_pred, "predicted container");
    evaluate->add_option("--truth", eval_truth, "ground-truth container (test_hr.f4d1)");
    evaluate->add_option("--lr", eval_lr, "LR container for interpolation baselines");
    evaluate->add_option("--report-dir", eval_report, "report output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            auto paths = run_generate(load(gen_args));
            for (const auto& p : paths) std::printf("wrote %s\n", p.string().c_str());
        } else if (build->parsed()) {
            auto res = run_build_dataset(load(build_args));
            for (const auto& [split, count] : res.manifest.counts)
                std::printf("%s: %llu records\n", split.c_str(),
                            static_cast<unsigned long long>(count));
        } else if (train->parsed()) {
            auto res = run_train(load(train_args));
            std::printf("trained %lld iterations; best val rel err %.6f at iteration %lld\n",
                        static_cast<long long>(res.result.iterations_run),
                        res.result.best_val_metric,
                        static_cast<long long>(res.result.best_iteration));
            std::printf("checkpoint: %s\n", res.checkpoint_path.string().c_str());
        } else if (predict->parsed()) {
            PipelineConfig cfg = load(predict_args);
            std::filesystem::path in =
                predict_in.empty() ? cfg.out_dir / "test_lr.f4d1" : predict_in;
            std::filesystem::path ckpt =
                predict_ckpt.empty() ? cfg.out_dir / "checkpoint.f4dw" : predict_ckpt;
            std::filesystem::path out =
                predict_out.empty() ? cfg.out_dir / "pred.f4d1" : predict_out;
            run_predict(cfg, in, ckpt, out);
            std::printf("wrote %s\n", out.string().c_str());
        } else if (evaluate->parsed()) {
            PipelineConfig cfg = load(eval_args);
            std::filesystem::path pred =
                eval_pred.empty() ? cfg.out_dir / "pred.f4d1" : eval_pred;
            std::filesystem::path truth =
                eval_truth.empty() ? cfg.out_dir / "test_hr.f4d1" : eval_truth;
            std::optional<std::filesystem::path> lr;
            if (!eval_lr.empty()) lr = eval_lr;
            std::filesystem::path report =
                eval_report.empty() ? cfg.out_dir / "reports" : eval_report;
            auto reports = run_evaluate(cfg, pred, truth, lr, report);
            std::printf("wrote %zu reports to %s\n", reports.size(), report.string().c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
