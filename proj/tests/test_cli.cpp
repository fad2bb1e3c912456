#include "doctest.h"

#include <algorithm>
#include <array>
#include <cstdio>
#include <sys/wait.h>

#include "hat/io.hpp"
#include "helpers.hpp"

using namespace hat;
using hat::testing::TempDir;

namespace {

struct Outcome {
    int exit_code = -1;
    std::string out;
};

Outcome hat_cli(const std::string& args) {
    std::string cmd = std::string(HAT_CLI_PATH) + " " + args + " 2>/dev/null";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    Outcome o;
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) o.out.append(buf.data(), n);
    int status = ::pclose(pipe);
    o.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return o;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

void small_world(const TempDir& dir) {
    write_file_atomic(dir.path() / "world.cfg.json",
                      R"({"n_lfs": 10, "pool_size": 120, "test_size": 40, "paraphrases_per_lf_source": 3})");
    write_file_atomic(dir.path() / "loop.cfg.json", R"({"compute_frontier": false})");
    auto r = hat_cli("simulate --config " + q(dir.path() / "world.cfg.json") + " --out " + q(dir.path() / "w") +
                     " --seed 3");
    REQUIRE(r.exit_code == 0);
}

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("help and bad flags") {
        CHECK(hat_cli("--help").exit_code == 0);
        CHECK(hat_cli("run --help").exit_code == 0);
        CHECK(hat_cli("--no-such-flag").exit_code == 1);
        CHECK(hat_cli("run").exit_code == 1);
    }

    TEST_CASE("simulate, run, score, eval and report") {
        TempDir dir("cli");
        small_world(dir);
        auto w = dir.path() / "w";
        CHECK(std::filesystem::exists(w / "world.json"));
        CHECK(std::filesystem::exists(w / "bundle"));

        const std::string cfg = " --config " + q(dir.path() / "loop.cfg.json");
        auto run = hat_cli("run --dir " + q(w) + " --acquisition random" + cfg);
        REQUIRE(run.exit_code == 0);
        auto run_dir = w / "runs" / "random";
        std::string metrics = read_file(run_dir / "metrics.csv");
        CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 7);
        CHECK(std::filesystem::exists(run_dir / "config.json"));

        auto again = hat_cli("run --dir " + q(w) + " --acquisition random" + cfg);
        CHECK(again.exit_code == 0);
        CHECK(read_file(run_dir / "metrics.csv") == metrics);

        CHECK(hat_cli("run --dir " + q(w) + " --acquisition random --seed 99" + cfg).exit_code != 0);

        auto score = hat_cli("score --dir " + q(w) + " --acquisition abe-nbest --k 3" + cfg);
        CHECK(score.exit_code == 0);
        CHECK(score.out.rfind("id,phi_b,phi_e,phi_s,phi_d,phi_A,selected", 0) == 0);

        auto eval = hat_cli("eval --dir " + q(w) + " --acquisition random" + cfg);
        REQUIRE(eval.exit_code == 0);
        auto j = json::parse(eval.out);
        CHECK(j.at("round") == 5);
        CHECK(j.at("metrics").contains("accuracy_target"));
        CHECK(j.at("metrics").at("js_x100").get<double>() ==
              doctest::Approx(100.0 * j.at("metrics").at("js").get<double>()));

        auto report = hat_cli("report --dir " + q(w) + " --format csv");
        CHECK(report.exit_code == 0);
        CHECK(report.out.find("random") != std::string::npos);
        CHECK(report.out.rfind("strategy,round,", 0) == 0);
        CHECK(report.out.substr(0, report.out.find('\n')).find(",js_x100") != std::string::npos);
        CHECK(hat_cli("report --dir " + q(w) + " --format json").exit_code == 0);
    }

    TEST_CASE("paired comparison writes its summary") {
        TempDir dir("cli_compare");
        small_world(dir);
        auto w = dir.path() / "w";
        auto r = hat_cli("run --dir " + q(w) + " --acquisition abe-nbest --compare random --seeds 2 --config " +
                         q(dir.path() / "loop.cfg.json"));
        REQUIRE(r.exit_code == 0);
        auto summary = json::parse(read_file(w / "compare_random_vs_abe-nbest.json"));
        CHECK(summary.at("seeds").size() == 2);
    }

    TEST_CASE("configuration problems exit with one") {
        TempDir dir("cli_bad");
        small_world(dir);
        CHECK(hat_cli("run --dir " + q(dir.path() / "missing")).exit_code == 1);
        CHECK(hat_cli("run --dir " + q(dir.path() / "w") + " --acquisition nonsense").exit_code == 1);
        write_file_atomic(dir.path() / "bad.json", R"({"n_lfz": 3})");
        CHECK(hat_cli("simulate --config " + q(dir.path() / "bad.json") + " --out " + q(dir.path() / "x")).exit_code == 1);
    }
}
