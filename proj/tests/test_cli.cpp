// End-to-end checks of the rtd-lab binary: exit statuses, file outputs, and
// determinism of the train command.

#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rtdlab/metrics.hpp"
#include "test_util.hpp"

using rtdlab::testing::TempDir;

namespace {
struct CliResult {
    int status;
    std::string out;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(RTDLAB_CLI_PATH) + " " + args + " 2>&1";
    std::array<char, 4096> buf{};
    CliResult res;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    while (fgets(buf.data(), int(buf.size()), p)) res.out += buf.data();
    const int rc = pclose(p);
    res.status = WEXITSTATUS(rc);
    return res;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// small corpus + store shared by the cases below
struct CliFixture {
    TempDir dir;
    std::string data_prefix;
    CliFixture() {
        auto r = run_cli("synth-corpus --out " + dir.file("c.txt") +
                         " --bytes 6000 --seed 3 --words 120");
        REQUIRE(r.status == 0);
        data_prefix = dir.file("d");
        r = run_cli("build-data --corpus " + dir.file("c.txt") + " --out " + data_prefix +
                    " --vocab-size 256 --seq-len 16");
        REQUIRE(r.status == 0);
    }
    std::string tiny_flags() const {
        return " --set model.hidden_dim=16 --set model.n_heads=2 --set model.ffn_dim=32"
               " --set train.batch_size=4 --set ctrl.window=10 --set train.warmup_steps=5";
    }
};
}  // namespace

TEST_CASE("help lists every config key") {
    auto r = run_cli("--help");
    CHECK(r.status == 0);
    for (const char* key : {"gen.exit_layers", "disc.early_exit", "ctrl.alpha", "embgen.mode",
                            "mask.fraction", "train.lambda"}) {
        CHECK(r.out.find(key) != std::string::npos);
    }
}

TEST_CASE("train with an absent config file fails with usage status and names the path") {
    CliFixture f;
    auto r = run_cli("train --variant baseline --data " + f.data_prefix +
                     " --config /definitely/missing.cfg");
    CHECK(r.status == 1);
    CHECK(r.out.find("/definitely/missing.cfg") != std::string::npos);
}

TEST_CASE("unknown variant is a usage error") {
    CliFixture f;
    auto r = run_cli("train --variant bogus --data " + f.data_prefix);
    CHECK(r.status == 1);
    CHECK(r.out.find("bogus") != std::string::npos);
}

TEST_CASE("missing data file is a runtime error with nonzero status") {
    auto r = run_cli("train --variant baseline --data /missing/prefix --steps 20");
    CHECK(r.status == 2);
}

TEST_CASE("train is deterministic for fixed seed and writes JSONL windows") {
    CliFixture f;
    const std::string m1 = f.dir.file("m1.jsonl"), m2 = f.dir.file("m2.jsonl");
    const std::string args = "train --variant baseline --data " + f.data_prefix +
                             " --seed 7 --steps 25 " + f.tiny_flags();
    auto r1 = run_cli(args + " --metrics " + m1);
    REQUIRE(r1.status == 0);
    auto r2 = run_cli(args + " --metrics " + m2);
    REQUIRE(r2.status == 0);
    const auto w1 = rtdlab::read_metrics_file(m1);
    const auto w2 = rtdlab::read_metrics_file(m2);
    REQUIRE(w1.size() == 2);
    REQUIRE(w2.size() == 2);
    for (size_t i = 0; i < w1.size(); ++i) CHECK(w1[i].same_ignoring_timing(w2[i]));
}

TEST_CASE("export-plots writes one row per window in each series") {
    CliFixture f;
    const std::string metrics = f.dir.file("m.jsonl");
    auto r = run_cli("train --variant adaptive-gen --data " + f.data_prefix +
                     " --seed 1 --steps 105 " + f.tiny_flags() + " --metrics " + metrics);
    REQUIRE(r.status == 0);
    REQUIRE(rtdlab::read_metrics_file(metrics).size() == 10);

    const std::string out = f.dir.file("plots");
    r = run_cli("export-plots --metrics " + metrics + " --out " + out);
    CHECK(r.status == 0);
    for (const char* name : {"rtd_acc_per_exit.csv", "p_vector.csv", "steps_per_sec.csv",
                             "mlm_acc_per_exit.csv"}) {
        const std::string body = slurp(out + "/" + name);
        REQUIRE(!body.empty());
        if (std::string(name) != "steps_per_sec.csv") {
            // header + 10 windows
            CHECK(std::count(body.begin(), body.end(), '\n') == 11);
        }
    }
    const std::string pv = slurp(out + "/p_vector.csv");
    CHECK(pv.find("variant,step,p1,p2,p3,p4") != std::string::npos);
}

TEST_CASE("export-plots on a missing metrics file fails") {
    auto r = run_cli("export-plots --metrics /missing.jsonl --out /tmp/x");
    CHECK(r.status == 2);
}

TEST_CASE("bench prints the steps/sec table layout") {
    CliFixture f;
    auto r = run_cli("bench --data " + f.data_prefix + " --variants baseline,embgen --steps 30 " +
                     f.tiny_flags() + " --seed 0");
    REQUIRE(r.status == 0);
    CHECK(r.out.find("variant") != std::string::npos);
    CHECK(r.out.find("steps/sec") != std::string::npos);
    CHECK(r.out.find("ratio") != std::string::npos);
    CHECK(r.out.find("baseline") != std::string::npos);
    CHECK(r.out.find("embgen") != std::string::npos);
    CHECK(r.out.find("1.00x") != std::string::npos);
}

TEST_CASE("checkpoint save and resume through the CLI") {
    CliFixture f;
    const std::string ck = f.dir.file("t.ckpt");
    const std::string m_full = f.dir.file("full.jsonl");
    const std::string m_part = f.dir.file("part.jsonl");
    const std::string base = "train --variant baseline --data " + f.data_prefix + " --seed 5 " +
                             f.tiny_flags();
    REQUIRE(run_cli(base + " --steps 40 --metrics " + m_full).status == 0);
    REQUIRE(run_cli(base + " --steps 20 --metrics " + m_part + " --save " + ck).status == 0);
    REQUIRE(run_cli(base + " --steps 40 --metrics " + m_part + " --resume " + ck).status == 0);
    const auto full = rtdlab::read_metrics_file(m_full);
    const auto part = rtdlab::read_metrics_file(m_part);
    REQUIRE(full.size() == 4);
    REQUIRE(part.size() == 4);
    for (size_t i = 0; i < full.size(); ++i) CHECK(full[i].same_ignoring_timing(part[i]));
}
