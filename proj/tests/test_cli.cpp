#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace pshield;
using namespace pshield::testing;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(PSHIELD_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pshield_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

}  // namespace

TEST(Cli, CertifyF1) {
  const fs::path dir = scratch("certify");
  ASSERT_EQ(run("certify --model " + fixture("f1.json") + " --epsilon 1e-9 --out " + (dir / "c.json").string()), 0);
  const SafetyCertificate c = certificate_from_json(read_json(dir / "c.json"));
  EXPECT_GE(c.beta[kS0], 2.0 / 7.0);
  EXPECT_LE(c.beta[kS0], 2.0 / 7.0 + 1e-9);
}

TEST(Cli, InfeasibleThresholdExitsTwo) {
  const fs::path dir = scratch("infeasible");
  EXPECT_EQ(run("train --model " + fixture("f1.json") + " --shielded --p 0.2 --steps 100 --out-dir " +
                dir.string()),
            2);
}

TEST(Cli, ValidationErrorsExitThree) {
  const fs::path dir = scratch("validation");
  std::ofstream(dir / "bad.json") << R"({"states": 1, "initial": 0, "labels": ["safe"], "rewards": [0],
    "actions": [[{"name": "x", "dist": [[0, 1.1]]}]]})";
  EXPECT_EQ(run("certify --model " + (dir / "bad.json").string() + " --out " + (dir / "c.json").string()), 3);
  EXPECT_EQ(run("certify --env pacman --out " + (dir / "c.json").string()), 3);
  EXPECT_EQ(run("train --model " + fixture("f1.json") + " --gamma 1.5 --out-dir " + dir.string()), 3);
  EXPECT_EQ(run("certify --bogus-flag"), 3);
}

TEST(Cli, EnvExportAndList) {
  const fs::path dir = scratch("export");
  ASSERT_EQ(run("env export --name bridge-v1 --out " + (dir / "b.json").string()), 0);
  EXPECT_EQ(load_model((dir / "b.json").string()), build_named("bridge-v1").mdp);
  EXPECT_EQ(run("env list"), 0);
}

TEST(Cli, VerifyStoredPolicy) {
  const fs::path dir = scratch("verify");
  ASSERT_EQ(run("train --model " + fixture("f1.json") + " --shielded --p 0.6 --steps 2000 --episode-length 20 "
                "--seed 1 --out-dir " + dir.string()),
            0);
  EXPECT_EQ(run("verify --model " + fixture("f1.json") + " --cert " + (dir / "cert.json").string() +
                " --policy " + (dir / "policy.json").string() + " --p 0.6 --out " +
                (dir / "verify.json").string()),
            0);
  EXPECT_TRUE(read_json(dir / "verify.json")["pass"].get<bool>());
}

TEST(Cli, RcopBruteForce) {
  const fs::path dir = scratch("rcop");
  ASSERT_EQ(run("rcop-bruteforce --model " + fixture("f2.json") + " --p 0.2 --gamma 0.5 --grid 100 --out " +
                (dir / "r.json").string()),
            0);
  EXPECT_NEAR(read_json(dir / "r.json")["value"].get<double>(), 0.38, 1e-12);
}

TEST(Cli, TrainArtifacts) {
  const fs::path dir = scratch("train");
  ASSERT_EQ(run("train --env colour-bomb-v1 --shielded --steps 5000 --seeds 0..1 --out-dir " + dir.string()), 0);
  EXPECT_TRUE(fs::exists(dir / "cert.json"));
  for (const char* seed : {"seed_0", "seed_1"}) {
    const fs::path d = dir / seed;
    for (const char* f : {"config.json", "curves.csv", "policy.json", "report.json", "summary.json"})
      EXPECT_TRUE(fs::exists(d / f)) << d / f;
    for (int k = 1; k <= 10; ++k)
      EXPECT_TRUE(fs::exists(d / "snapshots" / ("report_" + std::to_string(k) + ".json")));
    const json summary = read_json(d / "summary.json");
    EXPECT_EQ(summary["snapshots"].get<std::size_t>(), 10u);
  }
}
