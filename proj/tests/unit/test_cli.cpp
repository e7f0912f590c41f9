#include <sys/wait.h>

#include <cstdlib>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& tmp() {
    static const fs::path dir = testing::scratch_dir("cli");
    return dir;
}

// Runs the CLI with `args`; returns the exit status. Output goes to log.txt.
int cli(const std::string& args) {
    const std::string cmd = std::string("\"") + WILDTTA_CLI_PATH + "\" " + args + " > \"" +
                            (tmp() / "log.txt").string() + "\" 2>&1";
    const int raw = std::system(cmd.c_str());
    REQUIRE(raw != -1);
    REQUIRE(WIFEXITED(raw));
    return WEXITSTATUS(raw);
}

std::string log_text() { return testing::read_file(tmp() / "log.txt"); }

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

const std::string kQuick = " --norm ln --steps 2 --checkpoint " + q(tmp() / "ckpt");

}  // namespace

TEST_CASE("help and usage errors") {
    CHECK(cli("--help") == 0);
    CHECK(cli("") == 2);
    CHECK(cli("frobnicate") == 2);
    CHECK(cli("run --no-such-flag") == 2);
    CHECK(cli("run --method eata") == 2);
    CHECK(cli("run --batch-size 0") == 2);
    CHECK(cli("run --imbalance-ratio 0.5") == 2);
    CHECK(cli("--isa sse9 run") == 2);
    CHECK(cli("run --config " + q(tmp() / "missing.json")) != 0);

    std::ofstream(tmp() / "unknown.json") << R"({"adapt": {"nope": 1}})";
    CHECK(cli("run --config " + q(tmp() / "unknown.json")) == 2);
    CHECK(log_text().find("nope") != std::string::npos);
}

TEST_CASE("run writes the output tree and compare summarizes it") {
    const fs::path out = tmp() / "out";
    REQUIRE(cli("run" + kQuick + " --seeds 0,1 --out " + q(out)) == 0);
    for (const char* m : {"noadapt", "tent", "sar"})
        for (const char* s : {"seed-0", "seed-1"}) {
            CHECK(fs::exists(out / "ln" / m / s / "report.json"));
            CHECK(fs::exists(out / "ln" / m / s / "trace.csv"));
        }
    CHECK(fs::exists(out / "summary.json"));
    CHECK(fs::exists(out / "summary.txt"));

    REQUIRE(cli("compare " + q(out) + " --json " + q(tmp() / "s.json")) == 0);
    CHECK(log_text().find("sar") != std::string::npos);
    const auto j = nlohmann::json::parse(testing::read_file(tmp() / "s.json"));
    CHECK(j["rows"].size() == 3);
    CHECK(j["rows"][0]["runs"] == 2);

    CHECK(cli("compare " + q(tmp() / "nothing-here")) != 0);
}

TEST_CASE("run honours the out directory from the environment") {
    const fs::path out = tmp() / "env-out";
    const std::string env = "WILDTTA_OUT_DIR=" + q(out) + " ";
    const std::string cmd = env + "\"" + WILDTTA_CLI_PATH + "\" -q run" + kQuick + " --method noadapt > /dev/null 2>&1";
    CHECK(std::system(cmd.c_str()) == 0);
    CHECK(fs::exists(out / "ln" / "noadapt" / "seed-0" / "report.json"));
}

TEST_CASE("scalar and SIMD kernels give the same report") {
    REQUIRE(cli("--isa scalar -q run" + kQuick + " --method tent --out " + q(tmp() / "scalar")) == 0);
    REQUIRE(cli("-q run" + kQuick + " --method tent --out " + q(tmp() / "auto")) == 0);
    const auto a = nlohmann::json::parse(testing::read_file(tmp() / "scalar/ln/tent/seed-0/report.json"));
    const auto b = nlohmann::json::parse(testing::read_file(tmp() / "auto/ln/tent/seed-0/report.json"));
    CHECK(std::abs(a["final_accuracy"].get<double>() - b["final_accuracy"].get<double>()) < 0.01);
}

TEST_CASE("runtime failures exit with 1") {
    std::ofstream(tmp() / "blocker") << "a file, not a directory\n";
    CHECK(cli("-q run" + kQuick + " --method noadapt --out " + q(tmp() / "blocker" / "sub")) == 1);

    fs::create_directories(tmp() / "badckpt");
    std::ofstream(tmp() / "badckpt" / "ln-seed0.ckpt") << "garbage\n";
    CHECK(cli("-q run --norm ln --seed 0 --steps 2 --method noadapt --checkpoint " + q(tmp() / "badckpt") +
              " --out " + q(tmp() / "o2")) == 1);
}

TEST_CASE("dump-stream") {
    const fs::path f = tmp() / "stream.jsonl";
    REQUIRE(cli("dump-stream --seed 2 --steps 1 --samples-per-step 5 --batch-size 2 -o " + q(f)) == 0);
    const std::string text = testing::read_file(f);
    CHECK(std::count(text.begin(), text.end(), '\n') == 5);
    CHECK(cli("dump-stream --seeds 1,2 -o " + q(f)) == 2);
}
