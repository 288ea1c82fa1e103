// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Thresholds are fixed here, not configurable.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "opera/opera.hpp"

using namespace opera;
namespace fs = std::filesystem;

#ifndef OPERA_EXAMPLES_DIR
#define OPERA_EXAMPLES_DIR "examples"
#endif

namespace {

int failures = 0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

void criterion(const std::string& name, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
        outcome = body();
    } catch (const std::exception& e) {
        outcome.pass = false;
        outcome.detail = std::string("exception: ") + e.what();
    }
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    std::printf("[%s] %-28s %s (%lld ms)\n", outcome.pass ? "PASS" : "FAIL", name.c_str(),
                outcome.detail.c_str(), static_cast<long long>(ms));
    std::fflush(stdout);
    if (!outcome.pass) ++failures;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

std::string examples_path(const std::string& name) {
    return std::string(OPERA_EXAMPLES_DIR) + "/" + name;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Random classification instance: anchor and prototypes with dim <= 8,
// between 2 and 5 classes, exactly one positive.
SimilarityRow random_instance(Rng& rng, Level level) {
    const std::size_t dim = 2 + rng.below(7);
    const std::size_t classes = 2 + rng.below(4);
    const Vector anchor = rng.gauss_vector(dim);
    SimilarityRow row;
    const std::size_t pos = rng.below(classes);
    for (std::size_t j = 0; j < classes; ++j) {
        row.sims.push_back(dot(anchor, rng.gauss_vector(dim)));
        if (level == Level::Full)
            row.relations.push_back({false, j == pos});
        else
            row.relations.push_back(j == pos ? PairRelation{true, true}
                                             : PairRelation{false, false});
    }
    row.anchor_index = pos;  // remember the positive slot
    return row;
}

Outcome softmax_identity() {
    Rng rng(101);
    double max_err = 0.0;
    for (int t = 0; t < 100; ++t) {
        const auto row = random_instance(rng, Level::Full);
        const auto report = unified_loss({row}, WeightScheme::softmax(), Level::Full);
        const auto oracle = softmax_ce_grad_reference(row.sims, row.anchor_index);
        for (std::size_t j = 0; j < row.sims.size(); ++j)
            max_err = std::max(max_err, rel_err(report.grad_sims[0][j], oracle[j], 1e-12));
    }
    return {max_err < 1e-12, "max_rel_err=" + fmt(max_err) + " < 1e-12, 100 instances"};
}

Outcome infonce_identity() {
    Rng rng(102);
    double max_err = 0.0;
    for (const double tau : {0.2, 0.5, 1.0}) {
        for (int t = 0; t < 100; ++t) {
            const auto row = random_instance(rng, Level::Self);
            const auto report = unified_loss({row}, WeightScheme::infonce(tau), Level::Self);
            const auto oracle = infonce_grad_reference(row.sims, row.anchor_index, tau);
            for (std::size_t j = 0; j < row.sims.size(); ++j)
                max_err = std::max(max_err, rel_err(report.grad_sims[0][j], oracle[j], 1e-12));
        }
    }
    return {max_err < 1e-12, "max_rel_err=" + fmt(max_err) + " < 1e-12, tau in {0.2,0.5,1.0}"};
}

Outcome proposition1() {
    Rng rng(103);
    const auto report = verify_proposition1_random(rng, 100, 8);
    return {report.max_rel_discrepancy < 1e-8,
            "max_discrepancy=" + fmt(report.max_rel_discrepancy) + " < 1e-8, 100 hierarchies"};
}

Outcome corollary1() {
    Rng rng(104);
    const auto violation = verify_corollary1_random(rng, 1000, 8);
    if (violation)
        return {false, "violation at trial " + std::to_string(violation->trial)};
    return {true, "0 violations in 1000 trials"};
}

Outcome conflict_neutralization() {
    const RunConfig cfg = load_config(examples_path("naive_neutralized.cfg"));
    const Dataset data = cli::dataset_for(cfg);

    std::size_t batches = 0, batches_with_pairs = 0, pairs = 0;
    double max_abs = 0.0;
    const auto observer = [&](const BatchObservation& obs) {
        ++batches;
        if (!obs.neutral_pair_grads.empty()) ++batches_with_pairs;
        for (const double g : obs.neutral_pair_grads) {
            ++pairs;
            max_abs = std::max(max_abs, std::abs(g));
        }
    };
    pretrain(cfg, data, observer);
    const bool pass = batches > 0 && batches_with_pairs == batches && pairs > 0 && max_abs == 0.0;
    return {pass, "max |dJ/ds| = " + fmt(max_abs) + " over " + std::to_string(pairs) +
                      " conflict pairs in " + std::to_string(batches) + " batches (10 epochs)"};
}

Outcome end_to_end_gradients() {
    double max_err = 0.0;
    std::size_t clean = 0, params = 0;
    for (std::uint64_t seed = 0; clean < 20 && seed < 200; ++seed) {
        const auto check = opera_end_to_end_gradcheck(seed);
        if (!check.kink_clear) continue;
        ++clean;
        params += check.params_checked;
        max_err = std::max(max_err, check.max_rel_err);
    }
    const bool pass = clean == 20 && max_err < 1e-4;
    return {pass, "max_rel_err=" + fmt(max_err) + " < 1e-4 over " + std::to_string(clean) +
                      " seeds, " + std::to_string(params) + " params"};
}

Outcome desk_scale_training() {
    const auto t0 = std::chrono::steady_clock::now();
    cli::CompareOptions opts;
    const cli::CompareRow row = cli::run_comparison(examples_path("opera_blobs.cfg"), opts);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const double margin1 = row.ordering.mean_same_instance - row.ordering.mean_same_class;
    const double margin2 = row.ordering.mean_same_class - row.ordering.mean_cross_class;
    const bool pass =
        row.probe_accuracy >= 0.95 && margin1 >= 0.02 && margin2 >= 0.02 && seconds < 60.0;
    return {pass, "probe=" + fmt(row.probe_accuracy) + " >= 0.95, ordering margins " +
                      fmt(margin1) + "/" + fmt(margin2) + " >= 0.02, " + fmt(seconds) + " s < 60 s"};
}

Outcome comparison_harness() {
    cli::CompareOptions opts;
    opts.config_paths = {examples_path("fsl_blobs.cfg"), examples_path("ssl_blobs.cfg"),
                         examples_path("naive_blobs.cfg"), examples_path("opera_blobs.cfg")};
    std::ostringstream csv;
    opts.out = &csv;
    if (cli::cmd_compare(opts) != cli::kExitOk) return {false, "cmd_compare exited nonzero"};

    std::istringstream lines(csv.str());
    std::string line;
    std::getline(lines, line);  // header
    double opera_probe = -1.0, naive_probe = -1.0;
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
        ++rows;
        std::vector<std::string> fields;
        std::istringstream fs_line(line);
        std::string field;
        while (std::getline(fs_line, field, ',')) fields.push_back(field);
        if (fields.size() < 6) return {false, "short CSV row: " + line};
        const double probe = std::stod(fields[5]);
        if (fields[1] == "opera") opera_probe = probe;
        if (fields[1] == "naive") naive_probe = probe;
    }
    const bool pass = rows == 4 && opera_probe >= 0.0 && naive_probe >= 0.0 &&
                      opera_probe >= naive_probe;
    return {pass, "4 rows, opera probe " + fmt(opera_probe) + " >= naive probe " +
                      fmt(naive_probe)};
}

Outcome determinism_persistence() {
    const std::string dir_a = "/tmp/opera_accept_det_a", dir_b = "/tmp/opera_accept_det_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    const std::string base =
        "mode = opera\nepochs = 20\nbatch_size = 64\nseed = 0\n";
    const std::string cfg_a = "/tmp/opera_accept_det_a.cfg", cfg_b = "/tmp/opera_accept_det_b.cfg";
    {
        std::ofstream(cfg_a) << base << "out_dir = " << dir_a << "\n";
        std::ofstream(cfg_b) << base << "out_dir = " << dir_b << "\n";
    }
    std::ostringstream sink;
    if (cli::cmd_train({cfg_a, &sink}) != cli::kExitOk) return {false, "first train failed"};
    if (cli::cmd_train({cfg_b, &sink}) != cli::kExitOk) return {false, "second train failed"};

    const bool metrics_equal = slurp(dir_a + "/metrics.jsonl") == slurp(dir_b + "/metrics.jsonl");
    const bool ckpt_equal = slurp(dir_a + "/final.ckpt") == slurp(dir_b + "/final.ckpt");

    // save -> load -> save
    LoadedCheckpoint loaded = load_checkpoint(dir_a + "/final.ckpt");
    const std::string resaved = dir_a + "/resaved.ckpt";
    save_checkpoint(resaved, loaded.pair, loaded.extras);
    const bool roundtrip_equal = slurp(dir_a + "/final.ckpt") == slurp(resaved);

    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    std::remove(cfg_a.c_str());
    std::remove(cfg_b.c_str());
    const bool pass = metrics_equal && ckpt_equal && roundtrip_equal;
    return {pass, std::string("metrics ") + (metrics_equal ? "identical" : "DIFFER") +
                      ", checkpoint round-trip " + (roundtrip_equal ? "identical" : "DIFFERS")};
}

Outcome stop_gradient_invariant() {
    RunConfig cfg;
    cfg.mode = Mode::Opera;
    cfg.epochs = 30;
    cfg.batch_size = 32;
    cfg.blob_classes = 4;
    cfg.blob_per_class = 25;
    cfg.blob_dim = 16;
    cfg.backbone_hidden = 16;
    cfg.backbone_dim = 16;
    cfg.hidden_dim = 16;
    cfg.embed_dim = 8;
    const Dataset data = cli::dataset_for(cfg);

    Rng init_rng(cfg.seed);
    OnlineTargetPair initial =
        make_online_target_pair(cfg.model(data.dim(), data.num_classes), init_rng, cfg.ema_momentum);
    std::vector<std::vector<double>> shadow;
    for (const auto& ref : target_tensors(initial.target)) shadow.push_back(*ref.values);

    std::size_t steps = 0, mismatches = 0;
    const auto observer = [&](const BatchObservation& obs) {
        auto& pair = *const_cast<OnlineTargetPair*>(obs.pair);
        const auto online = online_shadow_tensors(pair.online);
        const auto target = target_tensors(pair.target);
        for (std::size_t t = 0; t < shadow.size(); ++t)
            for (std::size_t i = 0; i < shadow[t].size(); ++i) {
                shadow[t][i] = pair.momentum * shadow[t][i] +
                               (1.0 - pair.momentum) * (*online[t].values)[i];
                if (shadow[t][i] != (*target[t].values)[i]) ++mismatches;
            }
        ++steps;
    };
    pretrain(cfg, data, observer);
    const bool pass = steps > 0 && mismatches == 0;
    return {pass, std::to_string(mismatches) + " deviations from the recurrence over " +
                      std::to_string(steps) + " steps (exact-zero requirement)"};
}

}  // namespace

int main() {
    std::printf("acceptance: %s\n", OPERA_EXAMPLES_DIR);
    criterion("softmax_gradient_identity", softmax_identity);
    criterion("infonce_gradient_identity", infonce_identity);
    criterion("proposition1_equivalence", proposition1);
    criterion("corollary1_ordering", corollary1);
    criterion("conflict_neutralization", conflict_neutralization);
    criterion("end_to_end_gradients", end_to_end_gradients);
    criterion("desk_scale_training", desk_scale_training);
    criterion("comparison_harness", comparison_harness);
    criterion("determinism_persistence", determinism_persistence);
    criterion("stop_gradient_invariant", stop_gradient_invariant);

    if (failures == 0) {
        std::printf("acceptance: all criteria passed\n");
        return 0;
    }
    std::printf("acceptance: %d criteria FAILED\n", failures);
    return 1;
}
