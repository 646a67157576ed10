#include "support.hpp"

#include "deepchoice/csv.hpp"
#include "deepchoice/manifest.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace deepchoice;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

const fs::path kCli = DEEPCHOICE_CLI;
const fs::path kExample = DEEPCHOICE_EXAMPLE;

struct CliResult {
    int code = -1;
    std::string err;
};

CliResult run(const std::string& args, const fs::path& errFile) {
    const std::string cmd = kCli.string() + " " + args + " > /dev/null 2> " + errFile.string();
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(errFile);
    std::stringstream s;
    s << in.rdbuf();
    r.err = s.str();
    return r;
}

std::string exampleArgs() {
    return "--data " + (kExample / "profiles.csv").string() + " --covariates " + (kExample / "covariates.csv").string() +
           " --schema " + (kExample / "schema.json").string();
}

double num(const std::string& cell) { return *csv::parseNumber(cell); }

class FittedExample : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        dir = scratchDir("cli_fit");
        const auto start = std::chrono::steady_clock::now();
        result = run("fit " + exampleArgs() + " --k 2 --epochs 10 --threads 1 --out " + (dir / "fit").string(),
                     dir / "fit.err");
        seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    static fs::path fit() { return dir / "fit"; }

    static inline fs::path dir;
    static inline CliResult result;
    static inline double seconds = 0.0;
};

}  // namespace

TEST_F(FittedExample, WritesArtifactsQuickly) {
    ASSERT_EQ(result.code, 0) << result.err;
    EXPECT_LT(seconds, 10.0);
    for (const char* f : {"preference_matrix.csv", "estimate.csv", "estimate.json", "manifest.json", "nets/fold_00.json",
                          "nets/fold_01.json"})
        EXPECT_TRUE(fs::exists(fit() / f)) << f;
    const auto pm = csv::read(fit() / "preference_matrix.csv");
    EXPECT_EQ(pm.rows.size(), 200u);
    EXPECT_EQ(pm.header.size(), 2u + 6u);
    const auto manifest = RunManifest::read(fit());
    EXPECT_EQ(manifest["command"], "fit");
    EXPECT_EQ(manifest["inputs"]["data"]["sha256"], sha256File(kExample / "profiles.csv"));
}

TEST_F(FittedExample, PolarizationRowsSumToOne) {
    ASSERT_EQ(result.code, 0) << result.err;
    const auto out = dir / "pol";
    const auto r = run("quantify polarization --level all --fit " + fit().string() + " --out " + out.string(), dir / "pol.err");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = csv::read(out / "polarization.csv");
    ASSERT_EQ(t.rows.size(), 6u);
    for (const auto& row : t.rows) EXPECT_NEAR(num(row[2]) + num(row[3]) + num(row[4]), 1.0, 1e-12);
}

TEST_F(FittedExample, MrsHasRespondentAndSummaryRows) {
    ASSERT_EQ(result.code, 0) << result.err;
    const auto out = dir / "mrs";
    const auto r = run("quantify mrs --num attr1:L1 --den attr2:L1 --fit " + fit().string() + " --out " + out.string(),
                       dir / "mrs.err");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = csv::read(out / "mrs.csv");
    ASSERT_EQ(t.rows.size(), 201u);
    const auto& summary = t.rows.back();
    EXPECT_EQ(summary[0], "summary");
    EXPECT_EQ(t.header[3], "mean");
    EXPECT_EQ(t.header[5], "ratio_of_means");
    EXPECT_EQ(t.header[6], "undefined");
    EXPECT_TRUE(csv::parseNumber(summary[5]).has_value());
}

TEST_F(FittedExample, ChooseProbOfIdenticalProfilesIsHalf) {
    ASSERT_EQ(result.code, 0) << result.err;
    const auto out = dir / "cp";
    const auto a = (kExample / "profile_a.json").string();
    const auto r = run("quantify chooseprob --profile-a " + a + " --profile-b " + a + " --fit " + fit().string() +
                           " --out " + out.string(),
                       dir / "cp.err");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = csv::read(out / "chooseprob.csv");
    ASSERT_EQ(t.rows.size(), 200u);
    for (const auto& row : t.rows) EXPECT_EQ(num(row[2]), 0.5);
}

TEST_F(FittedExample, ValidateByGroup) {
    ASSERT_EQ(result.code, 0) << result.err;
    const auto out = dir / "val";
    const auto r = run("validate --by bin1 --fit " + fit().string() + " --out " + out.string(), dir / "val.err");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(csv::read(out / "validation.csv").rows.size(), 2u * 6u);
}

TEST(Cli, MissingCovariatesIsLoadError) {
    const auto dir = scratchDir("cli_missing");
    const auto missing = dir / "nowhere.csv";
    const auto r = run("fit --data " + (kExample / "profiles.csv").string() + " --covariates " + missing.string() +
                           " --schema " + (kExample / "schema.json").string() + " --out " + (dir / "fit").string(),
                       dir / "err.txt");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find(missing.string()), std::string::npos) << r.err;
}

TEST(Cli, MissingArtifactHasOwnExitCode) {
    const auto dir = scratchDir("cli_artifact");
    const auto r = run("validate --fit " + (dir / "empty").string(), dir / "err.txt");
    EXPECT_EQ(r.code, 5) << r.err;
    const auto q = run("quantify polarization --level all --fit " + (dir / "empty").string(), dir / "err2.txt");
    EXPECT_EQ(q.code, 5) << q.err;
}

TEST(Cli, UsageErrors) {
    const auto dir = scratchDir("cli_usage");
    EXPECT_EQ(run("fit --data x.csv", dir / "a.txt").code, 1);
    EXPECT_EQ(run("frobnicate", dir / "b.txt").code, 1);
    EXPECT_EQ(run("simulate --mode sideways --out " + (dir / "s").string(), dir / "c.txt").code, 1);
}

TEST(Cli, TinyBenchmarkDigestsRepeat) {
    const auto dir = scratchDir("cli_bench");
    std::string digest[2];
    for (int i = 0; i < 2; ++i) {
        const auto out = dir / ("run" + std::to_string(i));
        const auto r = run("simulate --mode benchmark --preset tiny --threads 1 --out " + out.string(), dir / "err.txt");
        ASSERT_EQ(r.code, 0) << r.err;
        digest[i] = sha256File(out / "benchmark.csv") + sha256File(out / "benchmark.json");
    }
    EXPECT_EQ(digest[0], digest[1]);
}

TEST(Cli, TinyFactorialEmitsCells) {
    const auto dir = scratchDir("cli_factorial");
    const auto r = run("simulate --mode factorial --preset tiny --out " + (dir / "f").string(), dir / "err.txt");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto cells = csv::read(dir / "f" / "factorial_cells.csv");
    EXPECT_EQ(cells.rows.size(), 4u);
    EXPECT_TRUE(fs::exists(dir / "f" / "design_guidance.csv"));
}

TEST(Cli, ExportThenFitRoundTrip) {
    const auto dir = scratchDir("cli_export");
    auto r = run("simulate --mode export --preset tiny --respondents 40 --tasks 3 --out " + (dir / "data").string(),
                 dir / "err.txt");
    ASSERT_EQ(r.code, 0) << r.err;
    r = run("fit --data " + (dir / "data" / "profiles.csv").string() + " --covariates " +
                (dir / "data" / "covariates.csv").string() + " --schema " + (dir / "data" / "schema.json").string() +
                " --k 2 --epochs 3 --full-data --out " + (dir / "fit").string(),
            dir / "err2.txt");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "fit" / "nets" / "full.json"));
}

TEST(Manifest, Sha256OfKnownString) {
    const auto dir = scratchDir("manifest_sha");
    writeText(dir / "abc.txt", "abc");
    EXPECT_EQ(sha256File(dir / "abc.txt"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Manifest, WriteAndRead) {
    const auto dir = scratchDir("manifest_rw");
    writeText(dir / "out.txt", "hello");
    RunManifest m("test");
    m.setConfig({{"k", 3}});
    m.addSeed("master", 42);
    m.addOutput(dir / "out.txt");
    m.write(dir);
    const auto j = RunManifest::read(dir);
    EXPECT_EQ(j["command"], "test");
    EXPECT_EQ(j["config"]["k"], 3);
    EXPECT_EQ(j["seeds"]["master"], 42);
    EXPECT_EQ(j["outputs"][0]["sha256"], sha256File(dir / "out.txt"));
    EXPECT_THROW(RunManifest::read(dir / "nothing"), ArtifactError);
}
