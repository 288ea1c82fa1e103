#pragma once

// Command implementations behind the `opera` binary. Each cmd_* function
// takes an options struct and returns a process exit code, so the test
// suites drive the exact surface the binary exposes.
//
// Exit codes: 0 ok, 1 verification failure, 2 usage/config error,
// 3 numeric divergence. OPERA_OUT overrides the output directory.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "opera/checkpoint.hpp"
#include "opera/config.hpp"
#include "opera/data.hpp"
#include "opera/errors.hpp"
#include "opera/evaluation.hpp"
#include "opera/gradcheck.hpp"
#include "opera/objectives.hpp"
#include "opera/rng.hpp"
#include "opera/theory.hpp"
#include "opera/training.hpp"
#include "opera/weights.hpp"

namespace opera::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDivergence = 3;

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const DivergenceError*>(&e)) return kExitDivergence;
    if (dynamic_cast<const NumericError*>(&e)) return kExitDivergence;
    return kExitUsage;
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

inline std::string effective_out_dir(const RunConfig& cfg) {
    if (const char* env = std::getenv("OPERA_OUT"); env && *env) return env;
    return cfg.out_dir;
}

// Blob data derives its stream from the run seed so a config pins the
// dataset as well as the training trajectory.
inline Dataset dataset_for(const RunConfig& cfg) {
    if (!cfg.data_csv.empty()) return load_csv(cfg.data_csv);
    Rng rng(Rng::derive_seed(cfg.seed, 1000));
    return make_blobs(cfg.blob_classes, cfg.blob_per_class, cfg.blob_dim, cfg.blob_spread, rng);
}

struct DatasetSplit {
    Dataset train;
    Dataset test;
};

inline DatasetSplit split_dataset(const Dataset& data, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0) || !(test_fraction < 1.0))
        throw ConfigError("split fraction must be in (0, 1)");
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(Rng::derive_seed(seed, 13));
    rng.shuffle(order);
    const std::size_t test_n = static_cast<std::size_t>(
        std::max(1.0, std::floor(test_fraction * static_cast<double>(data.size()))));
    if (test_n >= data.size()) throw ConfigError("split leaves an empty training set");

    DatasetSplit split;
    split.test.features = Matrix(test_n, data.dim());
    split.train.features = Matrix(data.size() - test_n, data.dim());
    split.test.num_classes = split.train.num_classes = data.num_classes;
    for (std::size_t i = 0; i < data.size(); ++i) {
        Dataset& dst = i < test_n ? split.test : split.train;
        const std::size_t row = i < test_n ? i : i - test_n;
        dst.features.set_row(row, data.features.row(order[i]));
        dst.labels.push_back(data.labels[order[i]]);
    }
    return split;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct VerifyOptions {
    std::size_t trials = 100;
    std::uint64_t seed = 0;
    bool inject_fault = false;  // test hook: perturbs one gradient to force a failure
    std::ostream* out = &std::cout;
};

namespace detail {

inline SimilarityRow random_verify_row(Rng& rng, Level level) {
    SimilarityRow row;
    const std::size_t n = 2 + rng.below(4);  // up to 5 prototypes
    const std::size_t pos = rng.below(n);
    for (std::size_t j = 0; j < n; ++j) {
        row.sims.push_back(rng.gauss());
        if (level == Level::Full)
            row.relations.push_back({false, j == pos});
        else
            row.relations.push_back(j == pos ? PairRelation{true, true}
                                             : PairRelation{false, false});
    }
    return row;
}

inline std::size_t row_positive(const SimilarityRow& row, Level level) {
    for (std::size_t j = 0; j < row.relations.size(); ++j)
        if (is_positive(row.relations[j], level)) return j;
    throw DegenerateError("verify row without positive");
}

}  // namespace detail

inline int cmd_verify(const VerifyOptions& opt) {
    if (opt.trials == 0) {
        std::cerr << "verify: --trials must be >= 1\n";
        return kExitUsage;
    }
    std::ostream& out = *opt.out;
    bool all_pass = true;
    const auto emit = [&out, &all_pass](nlohmann::json j, bool pass) {
        j["pass"] = pass;
        out << j.dump() << "\n";
        all_pass = all_pass && pass;
    };

    // dJ/ds of the unified objective with softmax weights vs the
    // cross-entropy gradient derived independently.
    {
        Rng rng(Rng::derive_seed(opt.seed, 1));
        double max_err = 0.0;
        for (std::size_t t = 0; t < opt.trials; ++t) {
            const auto row = detail::random_verify_row(rng, Level::Full);
            const auto report = unified_loss({row}, WeightScheme::softmax(), Level::Full);
            auto oracle = softmax_ce_grad_reference(row.sims, detail::row_positive(row, Level::Full));
            if (opt.inject_fault && t == 0) oracle[0] += 1e-6;
            for (std::size_t j = 0; j < row.sims.size(); ++j)
                max_err = std::max(max_err, rel_err(report.grad_sims[0][j], oracle[j], 1e-12));
        }
        emit({{"check", "softmax_gradient_identity"},
              {"trials", opt.trials},
              {"max_rel_err", max_err},
              {"tolerance", 1e-12}},
             max_err < 1e-12);
    }

    for (const double tau : {0.2, 0.5, 1.0}) {
        Rng rng(Rng::derive_seed(opt.seed, 2 + static_cast<std::uint64_t>(tau * 10)));
        double max_err = 0.0;
        for (std::size_t t = 0; t < opt.trials; ++t) {
            const auto row = detail::random_verify_row(rng, Level::Self);
            const auto report = unified_loss({row}, WeightScheme::infonce(tau), Level::Self);
            const auto oracle =
                infonce_grad_reference(row.sims, detail::row_positive(row, Level::Self), tau);
            for (std::size_t j = 0; j < row.sims.size(); ++j)
                max_err = std::max(max_err, rel_err(report.grad_sims[0][j], oracle[j], 1e-12));
        }
        emit({{"check", "infonce_gradient_identity"},
              {"tau", tau},
              {"trials", opt.trials},
              {"max_rel_err", max_err},
              {"tolerance", 1e-12}},
             max_err < 1e-12);
    }

    {
        Rng rng(Rng::derive_seed(opt.seed, 20));
        const auto report = verify_proposition1_random(rng, opt.trials, 8);
        emit({{"check", "proposition1_equivalence"},
              {"trials", report.trials},
              {"max_rel_discrepancy", report.max_rel_discrepancy},
              {"relation_coefficients", report.relation_coefficients},
              {"tolerance", 1e-8}},
             report.max_rel_discrepancy < 1e-8);
    }

    {
        Rng rng(Rng::derive_seed(opt.seed, 21));
        const std::size_t trials = opt.trials * 10;
        const auto violation = verify_corollary1_random(rng, trials, 8);
        nlohmann::json j{{"check", "corollary1_ordering"}, {"trials", trials}, {"violations", violation ? 1 : 0}};
        if (violation) {
            j["counterexample"] = {{"trial", violation->trial},
                                   {"alpha", violation->alpha},
                                   {"beta", violation->beta},
                                   {"coefficients", violation->coefficients}};
        }
        emit(std::move(j), !violation.has_value());
    }

    {
        // sign behavior of the adaptive weight in the conflict case
        const LinearHierarchy identity(Matrix::identity(2), Matrix::identity(2));
        const LinearHierarchy widened(Matrix::identity(2), scale(Matrix::identity(2), 2.0));
        const LinearHierarchy zero_head(Matrix::identity(2), Matrix(2, 2));
        const double neutral = verify_corollary2(identity, 0.5, 0.5, {1, 0});
        const double attract = verify_corollary2(widened, 0.5, 0.3, {1, 0});
        const double repel = verify_corollary2(zero_head, 0.5, 0.9, {1, 0});
        const bool pass = neutral == 0.0 && rel_err(attract, -0.7, 1e-12) < 1e-12 && repel > 0.0;
        emit({{"check", "corollary2_sign"},
              {"neutral", neutral},
              {"attract", attract},
              {"repel", repel}},
             pass);
    }

    {
        Rng rng(Rng::derive_seed(opt.seed, 22));
        double max_err = 0.0;
        for (std::size_t t = 0; t < opt.trials; ++t) {
            const std::size_t d = 1 + rng.below(6), k = 1 + rng.below(6), m = 1 + rng.below(6);
            const LinearHierarchy hier(Matrix(k, d, rng.gauss_vector(k * d)),
                                       Matrix(m, k, rng.gauss_vector(m * k)));
            const Vector p = rng.gauss_vector(d);
            const double c = 0.25 + rng.uniform() * 3.0;
            const auto base = alpha_beta(hier, p);
            const auto scaled = alpha_beta(LinearHierarchy(scale(hier.w_g, c), hier.w_h), p);
            max_err = std::max(max_err, rel_err(scaled.alpha, c * c * base.alpha, 1e-12));
            max_err = std::max(max_err, rel_err(scaled.beta, c * c * base.beta, 1e-12));
        }
        emit({{"check", "alpha_beta_homogeneity"},
              {"trials", opt.trials},
              {"max_rel_err", max_err},
              {"tolerance", 1e-12}},
             max_err < 1e-12);
    }

    {
        double max_err = 0.0;
        std::size_t clean = 0, params = 0;
        for (std::uint64_t seed = 0; clean < 5 && seed < 64; ++seed) {
            const auto check = opera_end_to_end_gradcheck(Rng::derive_seed(opt.seed, 23 + seed));
            if (!check.kink_clear) continue;
            ++clean;
            params += check.params_checked;
            max_err = std::max(max_err, check.max_rel_err);
        }
        emit({{"check", "end_to_end_gradient"},
              {"seeds", clean},
              {"params_checked", params},
              {"max_rel_err", max_err},
              {"tolerance", 1e-4}},
             clean == 5 && max_err < 1e-4);
    }

    return all_pass ? kExitOk : kExitVerifyFailed;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
    std::string config_path;
    std::ostream* out = &std::cout;
};

inline void write_metrics_jsonl(const std::string& path,
                                const std::vector<MetricsRecord>& history) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    for (const auto& rec : history) {
        // wall_ms stays off the persisted record: the file must be
        // byte-identical across reruns of the same config.
        const nlohmann::json j{{"epoch", rec.epoch},
                               {"loss_total", rec.loss_total},
                               {"loss_self", rec.loss_self},
                               {"loss_full", rec.loss_full},
                               {"lr", rec.lr}};
        out << j.dump() << "\n";
    }
}

inline int cmd_train(const TrainOptions& opt) {
    try {
        RunConfig cfg = load_config(opt.config_path);
        cfg.out_dir = effective_out_dir(cfg);
        const Dataset data = dataset_for(cfg);

        std::filesystem::create_directories(cfg.out_dir);
        PretrainResult result = pretrain(cfg, data);

        write_metrics_jsonl(cfg.out_dir + "/metrics.jsonl", result.history);
        save_checkpoint(cfg.out_dir + "/final.ckpt", result.pair,
                        {cfg.tau, cfg.normalize_embeddings});
        std::ofstream resolved(cfg.out_dir + "/config.resolved");
        if (!resolved) throw ConfigError("cannot write '" + cfg.out_dir + "/config.resolved'");
        resolved << resolved_config_text(cfg);

        std::uint64_t total_ms = 0;
        for (const auto& rec : result.history) total_ms += rec.wall_ms;
        (*opt.out) << "train: " << mode_name(cfg.mode) << " arrangement "
                   << arrangement_tag(cfg.arrangement) << ", " << result.history.size()
                   << " epochs in " << total_ms << " ms, final loss "
                   << result.history.back().loss_total << ", artifacts in " << cfg.out_dir << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "train: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOptions {
    std::string checkpoint_path;
    std::string protocol = "probe";  // probe | knn | ordering
    std::string csv_path;            // dataset from CSV when set, blobs otherwise
    std::size_t blob_classes = 8;
    std::size_t blob_per_class = 100;
    std::size_t blob_dim = 32;
    double blob_spread = 0.1;
    std::uint64_t data_seed = 0;
    std::size_t probe_epochs = 100;
    std::size_t k = 5;
    double split_fraction = 0.25;
    std::uint64_t split_seed = 0;
    std::size_t samples = 200;
    double noise_sigma = 0.1;
    double scale_lo = 0.9;
    double scale_hi = 1.1;
    double mask_prob = 0.0;
    std::uint64_t seed = 0;
    std::ostream* out = &std::cout;
};

inline Dataset eval_dataset(const EvalOptions& opt) {
    if (!opt.csv_path.empty()) return load_csv(opt.csv_path);
    Rng rng(Rng::derive_seed(opt.data_seed, 1000));
    return make_blobs(opt.blob_classes, opt.blob_per_class, opt.blob_dim, opt.blob_spread, rng);
}

inline int cmd_eval(const EvalOptions& opt) {
    try {
        LoadedCheckpoint ckpt = load_checkpoint(opt.checkpoint_path);
        const Dataset data = eval_dataset(opt);
        if (data.dim() != ckpt.pair.online.config.input_dim)
            throw ShapeError("dataset width " + std::to_string(data.dim()) +
                             " does not match checkpoint input width " +
                             std::to_string(ckpt.pair.online.config.input_dim));
        const Encoder encoder = backbone_encoder(ckpt.pair.online);

        nlohmann::json j{{"protocol", opt.protocol}, {"checkpoint", opt.checkpoint_path}};
        if (opt.protocol == "probe") {
            const auto split = split_dataset(data, opt.split_fraction, opt.split_seed);
            ProbeOptions probe;
            probe.epochs = opt.probe_epochs;
            probe.seed = opt.seed;
            const auto result = linear_probe(encoder, split.train, split.test, probe);
            j["accuracy"] = result.accuracy;
            j["per_class_accuracy"] = result.per_class_accuracy;
            j["epochs_used"] = result.epochs_used;
        } else if (opt.protocol == "knn") {
            const auto split = split_dataset(data, opt.split_fraction, opt.split_seed);
            j["accuracy"] = knn_eval(encoder, split.train, split.test, opt.k);
            j["k"] = opt.k;
        } else if (opt.protocol == "ordering") {
            Rng rng(opt.seed);
            const AugmentConfig aug{opt.noise_sigma, opt.scale_lo, opt.scale_hi, opt.mask_prob};
            const auto diag = similarity_ordering(encoder, data, aug, rng, opt.samples);
            j["mean_same_instance"] = diag.mean_same_instance;
            j["mean_same_class"] = diag.mean_same_class;
            j["mean_cross_class"] = diag.mean_cross_class;
            j["samples"] = opt.samples;
        } else {
            throw ConfigError("unknown protocol '" + opt.protocol +
                              "' (expected probe, knn or ordering)");
        }
        (*opt.out) << j.dump() << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "eval: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareOptions {
    std::vector<std::string> config_paths;
    std::size_t probe_epochs = 100;
    double split_fraction = 0.25;
    std::uint64_t split_seed = 0;
    std::size_t ordering_samples = 200;
    std::ostream* out = &std::cout;
};

struct CompareRow {
    std::string config;
    Mode mode = Mode::Opera;
    Arrangement arrangement = Arrangement::C;
    std::uint64_t seed = 0;
    double final_loss = 0.0;
    double probe_accuracy = 0.0;
    SimilarityDiagnostic ordering;
};

inline CompareRow run_comparison(const std::string& config_path, const CompareOptions& opt) {
    const RunConfig cfg = load_config(config_path);
    const Dataset data = dataset_for(cfg);
    PretrainResult result = pretrain(cfg, data);

    CompareRow row;
    row.config = config_path;
    row.mode = cfg.mode;
    row.arrangement = cfg.arrangement;
    row.seed = cfg.seed;
    row.final_loss = result.history.back().loss_total;

    const Encoder encoder = backbone_encoder(result.pair.online);
    const auto split = split_dataset(data, opt.split_fraction, opt.split_seed);
    ProbeOptions probe;
    probe.epochs = opt.probe_epochs;
    row.probe_accuracy = linear_probe(encoder, split.train, split.test, probe).accuracy;

    Rng rng(cfg.seed);
    row.ordering = similarity_ordering(encoder, data, cfg.augment(), rng, opt.ordering_samples);
    return row;
}

inline int cmd_compare(const CompareOptions& opt) {
    if (opt.config_paths.size() < 2) {
        std::cerr << "compare: need at least 2 configs\n";
        return kExitUsage;
    }
    std::ostream& out = *opt.out;
    out << "config,mode,arrangement,seed,final_loss,probe_accuracy,mean_same_instance,"
           "mean_same_class,mean_cross_class\n";
    out.flush();
    char buf[256];
    for (const auto& path : opt.config_paths) {
        try {
            const CompareRow row = run_comparison(path, opt);
            std::snprintf(buf, sizeof(buf), "%s,%s,%c,%llu,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                          row.config.c_str(), mode_name(row.mode).c_str(),
                          arrangement_tag(row.arrangement),
                          static_cast<unsigned long long>(row.seed), row.final_loss,
                          row.probe_accuracy, row.ordering.mean_same_instance,
                          row.ordering.mean_same_class, row.ordering.mean_cross_class);
            out << buf;
            out.flush();
        } catch (const std::exception& e) {
            std::cerr << "compare: " << path << ": " << e.what() << "\n";
            return exit_code_for(e);
        }
    }
    return kExitOk;
}

}  // namespace opera::cli
