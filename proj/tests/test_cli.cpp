#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "opera/cli.hpp"

using namespace opera;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string write_config(const std::string& name, const std::string& body) {
    const std::string path = "/tmp/opera_cli_" + name + ".cfg";
    std::ofstream out(path);
    out << body;
    return path;
}

const char* kTinyRun =
    "epochs = 3\n"
    "batch_size = 8\n"
    "blob_classes = 3\n"
    "blob_per_class = 8\n"
    "blob_dim = 6\n"
    "backbone_hidden = 8\n"
    "backbone_dim = 8\n"
    "hidden_dim = 8\n"
    "embed_dim = 4\n";

}  // namespace

TEST_CASE("verify passes on a correct build", "[cli]") {
    std::ostringstream out;
    cli::VerifyOptions opt;
    opt.trials = 30;
    opt.out = &out;
    REQUIRE(cli::cmd_verify(opt) == cli::kExitOk);

    std::istringstream lines(out.str());
    std::string line;
    std::size_t checks = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        REQUIRE(j.contains("check"));
        REQUIRE(j.at("pass").get<bool>());
        ++checks;
    }
    REQUIRE(checks >= 7);
}

TEST_CASE("verify rejects zero trials", "[cli]") {
    cli::VerifyOptions opt;
    opt.trials = 0;
    std::ostringstream out;
    opt.out = &out;
    REQUIRE(cli::cmd_verify(opt) == cli::kExitUsage);
}

TEST_CASE("verify reports an injected fault and exits 1", "[cli]") {
    std::ostringstream out;
    cli::VerifyOptions opt;
    opt.trials = 30;
    opt.inject_fault = true;
    opt.out = &out;
    REQUIRE(cli::cmd_verify(opt) == cli::kExitVerifyFailed);
    REQUIRE(out.str().find("\"pass\":false") != std::string::npos);
}

TEST_CASE("train writes metrics, checkpoint and resolved config", "[cli]") {
    const std::string out_dir = "/tmp/opera_cli_train_out";
    fs::remove_all(out_dir);
    const auto cfg = write_config("train", std::string(kTinyRun) + "out_dir = " + out_dir + "\n");

    std::ostringstream out;
    cli::TrainOptions opt;
    opt.config_path = cfg;
    opt.out = &out;
    REQUIRE(cli::cmd_train(opt) == cli::kExitOk);
    REQUIRE(fs::exists(out_dir + "/metrics.jsonl"));
    REQUIRE(fs::exists(out_dir + "/final.ckpt"));
    REQUIRE(fs::exists(out_dir + "/config.resolved"));

    std::istringstream lines(slurp(out_dir + "/metrics.jsonl"));
    std::string line;
    std::size_t records = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        REQUIRE(j.contains("epoch"));
        REQUIRE(j.contains("loss_total"));
        REQUIRE(j.contains("loss_self"));
        REQUIRE(j.contains("loss_full"));
        REQUIRE(j.contains("lr"));
        ++records;
    }
    REQUIRE(records == 3);
    fs::remove_all(out_dir);
    std::remove(cfg.c_str());
}

TEST_CASE("repeated training runs are byte-identical", "[cli][determinism]") {
    const std::string dir_a = "/tmp/opera_cli_det_a", dir_b = "/tmp/opera_cli_det_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    const auto cfg_a = write_config("det_a", std::string(kTinyRun) + "out_dir = " + dir_a + "\n");
    const auto cfg_b = write_config("det_b", std::string(kTinyRun) + "out_dir = " + dir_b + "\n");

    std::ostringstream sink;
    REQUIRE(cli::cmd_train({cfg_a, &sink}) == cli::kExitOk);
    REQUIRE(cli::cmd_train({cfg_b, &sink}) == cli::kExitOk);
    REQUIRE(slurp(dir_a + "/metrics.jsonl") == slurp(dir_b + "/metrics.jsonl"));
    REQUIRE(slurp(dir_a + "/final.ckpt") == slurp(dir_b + "/final.ckpt"));
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    std::remove(cfg_a.c_str());
    std::remove(cfg_b.c_str());
}

TEST_CASE("unknown config keys exit with usage code", "[cli]") {
    const auto cfg = write_config("badkey", "foo = 1\n");
    std::ostringstream out;
    REQUIRE(cli::cmd_train({cfg, &out}) == cli::kExitUsage);
    std::remove(cfg.c_str());
}

TEST_CASE("OPERA_OUT overrides the configured output directory", "[cli]") {
    const std::string env_dir = "/tmp/opera_cli_envdir";
    fs::remove_all(env_dir);
    const auto cfg = write_config("envout", std::string(kTinyRun) + "out_dir = /tmp/opera_ignored\n");
    setenv("OPERA_OUT", env_dir.c_str(), 1);
    std::ostringstream out;
    const int code = cli::cmd_train({cfg, &out});
    unsetenv("OPERA_OUT");
    REQUIRE(code == cli::kExitOk);
    REQUIRE(fs::exists(env_dir + "/metrics.jsonl"));
    REQUIRE(!fs::exists("/tmp/opera_ignored"));
    fs::remove_all(env_dir);
    std::remove(cfg.c_str());
}

TEST_CASE("eval protocols emit their JSON schemas", "[cli]") {
    const std::string out_dir = "/tmp/opera_cli_eval_out";
    fs::remove_all(out_dir);
    const auto cfg = write_config("eval", std::string(kTinyRun) + "out_dir = " + out_dir + "\n");
    std::ostringstream sink;
    REQUIRE(cli::cmd_train({cfg, &sink}) == cli::kExitOk);

    cli::EvalOptions opt;
    opt.checkpoint_path = out_dir + "/final.ckpt";
    opt.blob_classes = 3;
    opt.blob_per_class = 8;
    opt.blob_dim = 6;
    opt.probe_epochs = 20;

    SECTION("probe") {
        std::ostringstream out;
        opt.protocol = "probe";
        opt.out = &out;
        REQUIRE(cli::cmd_eval(opt) == cli::kExitOk);
        const auto j = nlohmann::json::parse(out.str());
        const double acc = j.at("accuracy").get<double>();
        REQUIRE(acc >= 0.0);
        REQUIRE(acc <= 1.0);
        REQUIRE(j.at("per_class_accuracy").size() == 3);
    }
    SECTION("knn") {
        std::ostringstream out;
        opt.protocol = "knn";
        opt.k = 3;
        opt.out = &out;
        REQUIRE(cli::cmd_eval(opt) == cli::kExitOk);
        const auto j = nlohmann::json::parse(out.str());
        REQUIRE(j.at("k").get<int>() == 3);
        REQUIRE(j.contains("accuracy"));
    }
    SECTION("ordering") {
        std::ostringstream out;
        opt.protocol = "ordering";
        opt.samples = 40;
        opt.out = &out;
        REQUIRE(cli::cmd_eval(opt) == cli::kExitOk);
        const auto j = nlohmann::json::parse(out.str());
        REQUIRE(j.contains("mean_same_instance"));
        REQUIRE(j.contains("mean_same_class"));
        REQUIRE(j.contains("mean_cross_class"));
    }
    SECTION("unknown protocol") {
        std::ostringstream out;
        opt.protocol = "banana";
        opt.out = &out;
        REQUIRE(cli::cmd_eval(opt) == cli::kExitUsage);
    }
    SECTION("truncated checkpoint") {
        const std::string broken = out_dir + "/broken.ckpt";
        const std::string full = slurp(out_dir + "/final.ckpt");
        std::ofstream trunc(broken, std::ios::binary);
        trunc << full.substr(0, full.size() / 3);
        trunc.close();
        std::ostringstream out;
        opt.protocol = "probe";
        opt.checkpoint_path = broken;
        opt.out = &out;
        REQUIRE(cli::cmd_eval(opt) == cli::kExitUsage);
    }
    SECTION("dimension mismatch") {
        std::ostringstream out;
        opt.blob_dim = 9;
        opt.out = &out;
        REQUIRE(cli::cmd_eval(opt) == cli::kExitUsage);
    }
    fs::remove_all(out_dir);
    std::remove(cfg.c_str());
}

TEST_CASE("compare needs at least two configs", "[cli]") {
    cli::CompareOptions opt;
    opt.config_paths = {"only_one.cfg"};
    std::ostringstream out;
    opt.out = &out;
    REQUIRE(cli::cmd_compare(opt) == cli::kExitUsage);
}

TEST_CASE("compare emits one CSV row per run", "[cli]") {
    const auto cfg1 = write_config("cmp1", std::string(kTinyRun) + "mode = fsl\n");
    const auto cfg2 = write_config("cmp2", std::string(kTinyRun) + "mode = opera\n");
    cli::CompareOptions opt;
    opt.config_paths = {cfg1, cfg2};
    opt.probe_epochs = 10;
    opt.ordering_samples = 20;
    std::ostringstream out;
    opt.out = &out;
    REQUIRE(cli::cmd_compare(opt) == cli::kExitOk);

    std::istringstream lines(out.str());
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(lines, line)) rows.push_back(line);
    REQUIRE(rows.size() == 3);  // header + 2 runs
    REQUIRE(rows[0].find("probe_accuracy") != std::string::npos);
    REQUIRE(rows[1].find("fsl") != std::string::npos);
    REQUIRE(rows[2].find("opera") != std::string::npos);
    std::remove(cfg1.c_str());
    std::remove(cfg2.c_str());
}

TEST_CASE("diverging runs exit with the divergence code", "[cli]") {
    const auto cfg = write_config("diverge",
                                  std::string(kTinyRun) + "lr = 1e9\nlr_schedule = constant\n");
    std::ostringstream out;
    REQUIRE(cli::cmd_train({cfg, &out}) == cli::kExitDivergence);
    std::remove(cfg.c_str());
}

TEST_CASE("compare tabulates the three arrangements", "[cli]") {
    const auto a = write_config("arr_a", std::string(kTinyRun) + "arrangement = A\n");
    const auto b = write_config("arr_b", std::string(kTinyRun) + "arrangement = B\n");
    const auto c = write_config("arr_c", std::string(kTinyRun) + "arrangement = C\n");
    cli::CompareOptions opt;
    opt.config_paths = {a, b, c};
    opt.probe_epochs = 5;
    opt.ordering_samples = 10;
    std::ostringstream out;
    opt.out = &out;
    REQUIRE(cli::cmd_compare(opt) == cli::kExitOk);
    std::istringstream lines(out.str());
    std::string line;
    std::getline(lines, line);  // header
    std::string tags;
    while (std::getline(lines, line)) {
        const auto first = line.find(',');
        tags += line[line.find(',', first + 1) + 1];  // arrangement column
    }
    REQUIRE(tags == "ABC");
    std::remove(a.c_str());
    std::remove(b.c_str());
    std::remove(c.c_str());
}

TEST_CASE("compare flushes rows before a failing run", "[cli]") {
    const auto good = write_config("cmpgood", std::string(kTinyRun) + "mode = ssl\n");
    const auto bad = write_config("cmpbad", "nonsense = 1\n");
    cli::CompareOptions opt;
    opt.config_paths = {good, bad};
    opt.probe_epochs = 5;
    opt.ordering_samples = 10;
    std::ostringstream out;
    opt.out = &out;
    REQUIRE(cli::cmd_compare(opt) == cli::kExitUsage);
    REQUIRE(out.str().find("ssl") != std::string::npos);  // partial CSV kept
    std::remove(good.c_str());
    std::remove(bad.c_str());
}
