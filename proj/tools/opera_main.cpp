// The `opera` command line: verify | train | eval | compare.

#include <CLI11.hpp>

#include "opera/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical-supervision similarity learning at desk scale"};
    app.require_subcommand(1);

    opera::cli::VerifyOptions verify_opt;
    auto* verify =
        app.add_subcommand("verify", "Run the theory and gradient-identity checks (JSON per check)");
    verify->add_option("--trials", verify_opt.trials, "Random trials per check (default 100)");
    verify->add_option("--seed", verify_opt.seed, "Base seed (default 0)");
    verify->add_flag("--inject-fault", verify_opt.inject_fault,
                     "Test hook: perturb one gradient so the identity check fails");

    opera::cli::TrainOptions train_opt;
    auto* train = app.add_subcommand("train", "Pretrain from a config file");
    train->add_option("config", train_opt.config_path, "Path to a key = value config file")
        ->required();

    opera::cli::EvalOptions eval_opt;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint (JSON result on stdout)");
    eval->add_option("--checkpoint", eval_opt.checkpoint_path, "Checkpoint file")->required();
    eval->add_option("--protocol", eval_opt.protocol, "probe | knn | ordering (default probe)");
    eval->add_option("--csv", eval_opt.csv_path, "Dataset CSV (default: generated blobs)");
    eval->add_option("--blob-classes", eval_opt.blob_classes, "Blob classes (default 8)");
    eval->add_option("--blob-per-class", eval_opt.blob_per_class, "Samples per class (default 100)");
    eval->add_option("--blob-dim", eval_opt.blob_dim, "Feature dimension (default 32)");
    eval->add_option("--blob-spread", eval_opt.blob_spread, "Blob spread (default 0.1)");
    eval->add_option("--data-seed", eval_opt.data_seed, "Blob generation seed (default 0)");
    eval->add_option("--probe-epochs", eval_opt.probe_epochs, "Probe epochs (default 100)");
    eval->add_option("--k", eval_opt.k, "Neighbors for knn (default 5)");
    eval->add_option("--split-fraction", eval_opt.split_fraction, "Test fraction (default 0.25)");
    eval->add_option("--split-seed", eval_opt.split_seed, "Split seed (default 0)");
    eval->add_option("--samples", eval_opt.samples, "Ordering pair samples (default 200)");
    eval->add_option("--noise-sigma", eval_opt.noise_sigma, "Ordering view noise (default 0.1)");
    eval->add_option("--scale-lo", eval_opt.scale_lo, "Ordering view scale low (default 0.9)");
    eval->add_option("--scale-hi", eval_opt.scale_hi, "Ordering view scale high (default 1.1)");
    eval->add_option("--mask-prob", eval_opt.mask_prob, "Ordering view mask prob (default 0)");
    eval->add_option("--seed", eval_opt.seed, "Probe/ordering seed (default 0)");

    opera::cli::CompareOptions compare_opt;
    auto* compare =
        app.add_subcommand("compare", "Train each config, probe and diagnose; CSV on stdout");
    compare->add_option("configs", compare_opt.config_paths, "Config files (two or more)")
        ->expected(-1);
    compare->add_option("--probe-epochs", compare_opt.probe_epochs, "Probe epochs (default 100)");
    compare->add_option("--split-fraction", compare_opt.split_fraction,
                        "Probe test fraction (default 0.25)");
    compare->add_option("--samples", compare_opt.ordering_samples,
                        "Ordering pair samples (default 200)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : opera::cli::kExitUsage;
    }

    if (*verify) return opera::cli::cmd_verify(verify_opt);
    if (*train) return opera::cli::cmd_train(train_opt);
    if (*eval) return opera::cli::cmd_eval(eval_opt);
    return opera::cli::cmd_compare(compare_opt);
}
