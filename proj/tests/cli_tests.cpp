// End-to-end tests that drive the deepnoc binary. argv[1] is the binary
// path; argv[2] is the golden-file directory.

#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "deepnoc/dataset.hpp"
#include "deepnoc/evaluate.hpp"
#include "deepnoc/trainer.hpp"

namespace {

std::string g_binary;
std::string g_golden_dir;
std::string g_workdir;

struct RunResult {
    int exit_code = -1;
    std::string output; // stdout + stderr
};

RunResult run_cli(const std::string& args) {
    const std::string cmd = g_binary + " " + args + " 2>&1";
    std::array<char, 4096> buffer;
    RunResult result;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    while (fgets(buffer.data(), buffer.size(), pipe)) result.output += buffer.data();
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string path_in_workdir(const std::string& name) { return g_workdir + "/" + name; }

} // namespace

TEST_CASE("subcommand help is golden-file stable") {
    for (const std::string sub : {"simulate", "encode", "train", "finetune", "predict", "eval",
                                  "explain", "mac"}) {
        const RunResult r = run_cli(sub + " --help");
        CHECK(r.exit_code == 0);
        const std::string golden_path = g_golden_dir + "/help_" + sub + ".txt";
        if (!std::filesystem::exists(golden_path)) {
            std::ofstream out(golden_path, std::ios::binary);
            out << r.output;
            FAIL_CHECK("golden file was missing and has been created: " << golden_path);
            continue;
        }
        CHECK_MESSAGE(r.output == slurp(golden_path), "help text changed for ", sub);
    }
}

TEST_CASE("simulate is byte-deterministic and sized correctly") {
    const std::string out1 = path_in_workdir("sim_a.jsonl");
    const std::string out2 = path_in_workdir("sim_b.jsonl");
    const RunResult r1 = run_cli("simulate --n 10 --seed 7 --out " + out1);
    const RunResult r2 = run_cli("simulate --n 10 --seed 7 --out " + out2);
    CHECK(r1.exit_code == 0);
    CHECK(r2.exit_code == 0);
    CHECK(slurp(out1) == slurp(out2));

    const auto profiles = deepnoc::load_dataset_jsonl(out1);
    CHECK(profiles.size() == 10);
    for (const auto& p : profiles) {
        CHECK(p.noc >= 1);
        CHECK(p.noc <= 10);
    }
}

TEST_CASE("encode is byte-deterministic") {
    const std::string data = path_in_workdir("enc_input.jsonl");
    run_cli("simulate --n 6 --seed 3 --noc-min 1 --noc-max 2 --out " + data);
    const std::string c1 = path_in_workdir("enc_a.dnoc");
    const std::string c2 = path_in_workdir("enc_b.dnoc");
    CHECK(run_cli("encode --in " + data + " --out " + c1).exit_code == 0);
    CHECK(run_cli("encode --in " + data + " --out " + c2).exit_code == 0);
    CHECK(slurp(c1) == slurp(c2));
}

TEST_CASE("mac prints the library's estimates") {
    const std::string data = path_in_workdir("mac_input.jsonl");
    run_cli("simulate --n 5 --seed 11 --out " + data);
    const RunResult r = run_cli("mac --in " + data);
    CHECK(r.exit_code == 0);

    std::istringstream lines(r.output);
    std::string line;
    std::vector<int> got;
    while (std::getline(lines, line)) {
        if (!line.empty()) got.push_back(std::stoi(line));
    }
    const auto profiles = deepnoc::load_dataset_jsonl(data);
    REQUIRE(got.size() == profiles.size());
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        CHECK(got[i] == deepnoc::mac_estimate(profiles[i]));
    }
}

TEST_CASE("exit codes distinguish usage, data and numeric errors") {
    CHECK(run_cli("simulate --definitely-not-a-flag 1").exit_code == 1);
    CHECK(run_cli("mac").exit_code == 1); // missing required option
    CHECK(run_cli("mac --in /nonexistent/file.jsonl").exit_code == 2);
    CHECK(run_cli("predict --model /nonexistent.dnocw --in x.jsonl --out y.json").exit_code == 2);
}

TEST_CASE("NOC_SEED provides the default simulate seed") {
    const std::string out_env = path_in_workdir("seed_env.jsonl");
    const std::string out_flag = path_in_workdir("seed_flag.jsonl");
    const std::string cmd = "NOC_SEED=123 " + g_binary + " simulate --n 3 --out " + out_env +
                            " > /dev/null 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    run_cli("simulate --n 3 --seed 123 --out " + out_flag);
    CHECK(slurp(out_env) == slurp(out_flag));
}

TEST_CASE("train, predict, eval and explain run as a pipeline") {
    const std::string data = path_in_workdir("pipe.jsonl");
    run_cli("simulate --n 40 --seed 21 --noc-min 1 --noc-max 2 --out " + data);
    const std::string model_dir = path_in_workdir("pipe_model");

    const RunResult train = run_cli("train --in " + data + " --out " + model_dir +
                                    " --epochs 2 --batch-size 20 --seed 5 --lr 0.001 --split 0.8"
                                    " --deterministic");
    CHECK(train.exit_code == 0);
    CHECK(std::filesystem::exists(model_dir + "/weights.dnocw"));
    CHECK(std::filesystem::exists(model_dir + "/model_card.json"));
    CHECK(std::filesystem::exists(model_dir + "/history.json"));

    // eval on the same test records the trainer used must reproduce the final
    // test accuracy from the history.
    const auto profiles = deepnoc::load_dataset_jsonl(data);
    const auto [train_idx, test_idx] = deepnoc::split_random_fraction(profiles.size(), 0.8, 5);
    std::vector<deepnoc::SimulatedProfile> test_profiles;
    for (const std::size_t i : test_idx) test_profiles.push_back(profiles[i]);
    const std::string test_data = path_in_workdir("pipe_test.jsonl");
    deepnoc::save_dataset_jsonl(test_profiles, test_data);

    const std::string report = path_in_workdir("pipe_report.json");
    const RunResult eval = run_cli("eval --model " + model_dir + " --in " + test_data +
                                   " --report " + report);
    CHECK(eval.exit_code == 0);
    const nlohmann::json report_doc = nlohmann::json::parse(slurp(report));
    const nlohmann::json history = nlohmann::json::parse(slurp(model_dir + "/history.json"));
    const double final_test_acc =
        history["epochs"].back()["test_noc_accuracy"].get<double>();
    CHECK(report_doc["overall_accuracy"].get<double>() ==
          doctest::Approx(final_test_acc).epsilon(1e-9));

    const std::string preds = path_in_workdir("pipe_preds.json");
    const RunResult pr = run_cli("predict --model " + model_dir + " --in " + test_data +
                                 " --out " + preds);
    CHECK(pr.exit_code == 0);
    const nlohmann::json preds_doc = nlohmann::json::parse(slurp(preds));
    CHECK(preds_doc.size() == test_profiles.size());

    const std::string expl_dir = path_in_workdir("pipe_explain");
    const RunResult ex = run_cli("explain --model " + model_dir + " --in " + test_data +
                                 " --index 0 --out " + expl_dir);
    CHECK(ex.exit_code == 0);
    CHECK(std::filesystem::exists(expl_dir + "/report_0.svg"));
    CHECK(std::filesystem::exists(expl_dir + "/report_0.json"));

    const RunResult bad = run_cli("explain --model " + model_dir + " --in " + test_data +
                                  " --index 999 --out " + expl_dir);
    CHECK(bad.exit_code == 2);
}

TEST_CASE("finetune runs end to end") {
    const std::string data = path_in_workdir("ft.jsonl");
    run_cli("simulate --n 12 --seed 31 --noc-min 1 --noc-max 2 --out " + data);
    const std::string model_dir = path_in_workdir("ft_base");
    run_cli("train --in " + data + " --out " + model_dir +
            " --epochs 1 --batch-size 10 --seed 2 --deterministic");
    const std::string tuned_dir = path_in_workdir("ft_tuned");
    const RunResult r = run_cli("finetune --model " + model_dir + " --in " + data + " --out " +
                                tuned_dir + " --epochs 2 --batch-size 10 --deterministic");
    CHECK(r.exit_code == 0);
    CHECK(std::filesystem::exists(tuned_dir + "/weights.dnocw"));
}

int run_all(int argc, char** argv) {
    doctest::Context context;
    context.applyCommandLine(argc > 2 ? argc - 2 : argc, argv);
    return context.run();
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 3) {
        std::fprintf(stderr, "usage: cli_tests <deepnoc-binary> <golden-dir>\n");
        return 2;
    }
    g_binary = argv[1];
    g_golden_dir = argv[2];
    const auto workdir = std::filesystem::temp_directory_path() / "deepnoc_cli_tests";
    std::filesystem::remove_all(workdir);
    std::filesystem::create_directories(workdir);
    g_workdir = workdir.string();
    const int rc = run_all(argc, argv);
    std::filesystem::remove_all(workdir);
    return rc;
}
