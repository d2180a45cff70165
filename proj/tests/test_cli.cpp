#include <gtest/gtest.h>

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

// End-to-end tests of the command-line tool. The binary path arrives as
// argv[1] from ctest.

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string g_cli_path;

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunResult run_cli(const std::string& args, const fs::path& dir) {
    const fs::path out = dir / "stdout.txt";
    const fs::path err = dir / "stderr.txt";
    const std::string cmd =
        g_cli_path + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::path(::testing::TempDir()) / ("jumpctl_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Scalar single-mode instance whose control and filtering problems share one
// fixed point near 1.13278.
json scalar_config(double delivery = 1.0) {
    return json{{"model",
                 {{"A", {{0.5}}},
                  {"B", {{1.0}}},
                  {"G", {{1.0, 0.0}}},
                  {"L", {{1.0}}},
                  {"H", {{0.0, 1.0}}},
                  {"Qc", {{1.0}}},
                  {"Rc", {{1.0}}},
                  {"noise_scale", 1.0}}},
                {"actuation_channel", {{"tpm", {{1.0}}}, {"delivery_prob", {delivery}}}},
                {"sensing_channel", {{"tpm", {{1.0}}}, {"delivery_prob", {delivery}}}},
                {"initial", {{"x0", {1.0}}, {"xhat0", {0.0}}, {"theta0", 1}, {"eta0", 1}}},
                {"solver", {{"tol", 1e-12}, {"max_iter", 200000}}},
                {"sim", {{"steps", 500}, {"trials", 1}, {"seed", 42}, {"noise_on", false}}}};
}

void write_json(const fs::path& p, const json& j) {
    std::ofstream out(p);
    out << j.dump(2) << "\n";
}

TEST(Cli, SynthesizeScalarDualInstance) {
    const fs::path dir = fresh_dir("synth");
    write_json(dir / "config.json", scalar_config());
    const RunResult r = run_cli("synthesize --config " + (dir / "config.json").string() +
                                    " --out " + (dir / "report.json").string(),
                                dir);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const json report = json::parse(slurp(dir / "report.json"));
    const double expected = (0.25 + std::sqrt(4.0625)) / 2.0;
    EXPECT_NEAR(report["control"]["cost"].get<double>(), expected, 1e-8);
    EXPECT_NEAR(report["filter"]["cost"].get<double>(), expected, 1e-7);
    EXPECT_TRUE(report["separation"]["mss"].get<bool>());
    EXPECT_TRUE(report["filter"]["lmi_feasible"].get<bool>());
    ASSERT_EQ(report["gains"]["F"].size(), 1u);
    EXPECT_NEAR(report["gains"]["F"][0][0][0].get<double>(),
                -0.5 * expected / (expected + 1.0), 1e-8);
}

TEST(Cli, SynthesizeFailsWithSolverCodeWhenControlNeverDelivered) {
    const fs::path dir = fresh_dir("nodelivery");
    write_json(dir / "config.json", scalar_config(0.0));
    const RunResult r = run_cli("synthesize --config " + (dir / "config.json").string() +
                                    " --out " + (dir / "report.json").string(),
                                dir);
    EXPECT_EQ(r.exit_code, 3);
    EXPECT_NE(r.err.find("never delivered"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("mode 0"), std::string::npos) << r.err;
}

TEST(Cli, ValidationFailureNamesTheConstraint) {
    const fs::path dir = fresh_dir("badconfig");
    json cfg = scalar_config();
    cfg["sensing_channel"]["tpm"] = {{0.7, 0.4}, {0.3, 0.7}};
    cfg["sensing_channel"]["delivery_prob"] = {0.5, 0.5};
    write_json(dir / "config.json", cfg);
    const RunResult r = run_cli("synthesize --config " + (dir / "config.json").string() +
                                    " --out " + (dir / "report.json").string(),
                                dir);
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.err.find("row 0 sums to 1.1"), std::string::npos) << r.err;
}

TEST(Cli, BadUsageExitsWithValidationCode) {
    const fs::path dir = fresh_dir("usage");
    EXPECT_EQ(run_cli("synthesize --config missing.json", dir).exit_code, 2);
    EXPECT_EQ(run_cli("frobnicate", dir).exit_code, 2);
}

TEST(Cli, AnalyzeRoundTripReproducesRadiiAndCosts) {
    const fs::path dir = fresh_dir("roundtrip");
    write_json(dir / "config.json", scalar_config());
    ASSERT_EQ(run_cli("synthesize --config " + (dir / "config.json").string() + " --out " +
                          (dir / "report.json").string(),
                      dir)
                  .exit_code,
              0);
    ASSERT_EQ(run_cli("analyze --config " + (dir / "config.json").string() + " --gains " +
                          (dir / "report.json").string() + " --out " +
                          (dir / "analysis.json").string(),
                      dir)
                  .exit_code,
              0);
    const json synth = json::parse(slurp(dir / "report.json"));
    const json ana = json::parse(slurp(dir / "analysis.json"));
    EXPECT_EQ(ana["control"]["rho"].get<double>(), synth["control"]["rho"].get<double>());
    EXPECT_EQ(ana["filter"]["rho"].get<double>(), synth["filter"]["rho"].get<double>());
    EXPECT_EQ(ana["control"]["cost"].get<double>(), synth["control"]["cost"].get<double>());
    EXPECT_EQ(ana["filter"]["cost"].get<double>(), synth["filter"]["cost"].get<double>());
    EXPECT_EQ(ana["separation"]["mss"].get<bool>(), synth["separation"]["mss"].get<bool>());
    EXPECT_TRUE(ana["lmi"]["feasible"].get<bool>());
}

TEST(Cli, SimulateWritesDecayingTraceWithExactHeader) {
    const fs::path dir = fresh_dir("simulate");
    write_json(dir / "config.json", scalar_config());
    ASSERT_EQ(run_cli("synthesize --config " + (dir / "config.json").string() + " --out " +
                          (dir / "report.json").string(),
                      dir)
                  .exit_code,
              0);
    const RunResult r = run_cli("simulate --config " + (dir / "config.json").string() +
                                    " --gains " + (dir / "report.json").string() + " --traces " +
                                    (dir / "trace.csv").string() + " --summary " +
                                    (dir / "summary.json").string() + " --noise off",
                                dir);
    ASSERT_EQ(r.exit_code, 0) << r.err;

    std::ifstream csv(dir / "trace.csv");
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, "k,trial,theta,eta,nu,gamma,x1,xhat1,e1,u1,znorm2");
    std::string first, line, last;
    std::getline(csv, first);
    while (std::getline(csv, line))
        if (!line.empty()) last = line;
    auto field = [](const std::string& row, int idx) {
        std::stringstream ss(row);
        std::string tok;
        for (int i = 0; i <= idx; ++i) std::getline(ss, tok, ',');
        return std::stod(tok);
    };
    EXPECT_EQ(field(first, 0), 0.0);
    EXPECT_EQ(field(first, 2), 1.0); // mode labels are 1-based
    EXPECT_LE(std::abs(field(last, 6)), 1e-6 * std::abs(field(first, 6)));

    const json summary = json::parse(slurp(dir / "summary.json"));
    EXPECT_LE(summary["final_mean_xnorm2"].get<double>(), 1e-12);
    EXPECT_FALSE(summary.contains("moment_comparison")); // single trial
}

TEST(Cli, SimulateIsBitIdenticalForOneSeed) {
    const fs::path dir = fresh_dir("determinism");
    write_json(dir / "config.json", scalar_config());
    ASSERT_EQ(run_cli("synthesize --config " + (dir / "config.json").string() + " --out " +
                          (dir / "report.json").string(),
                      dir)
                  .exit_code,
              0);
    const std::string base = "simulate --config " + (dir / "config.json").string() + " --gains " +
                             (dir / "report.json").string() +
                             " --trials 25 --steps 80 --seed 7 --noise on --summary ";
    ASSERT_EQ(run_cli(base + (dir / "s1.json").string() + " --traces " + (dir / "t1.csv").string(),
                      dir)
                  .exit_code,
              0);
    ASSERT_EQ(run_cli(base + (dir / "s2.json").string() + " --traces " + (dir / "t2.csv").string(),
                      dir)
                  .exit_code,
              0);
    EXPECT_EQ(slurp(dir / "t1.csv"), slurp(dir / "t2.csv"));
    EXPECT_FALSE(slurp(dir / "t1.csv").empty());
}

TEST(Cli, SimulateManyTrialsPassesMomentComparison) {
    const fs::path dir = fresh_dir("moments");
    json cfg = scalar_config();
    cfg["sim"] = {{"steps", 10}, {"trials", 10000}, {"seed", 2718}, {"noise_on", true}};
    write_json(dir / "config.json", cfg);
    ASSERT_EQ(run_cli("synthesize --config " + (dir / "config.json").string() + " --out " +
                          (dir / "report.json").string(),
                      dir)
                  .exit_code,
              0);
    const RunResult r = run_cli("simulate --config " + (dir / "config.json").string() +
                                    " --gains " + (dir / "report.json").string() + " --traces " +
                                    (dir / "trace.csv").string() + " --summary " +
                                    (dir / "summary.json").string(),
                                dir);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const json summary = json::parse(slurp(dir / "summary.json"));
    ASSERT_TRUE(summary.contains("moment_comparison"));
    EXPECT_EQ(summary["moment_comparison"]["flag"].get<std::string>(), "PASS within 3 sigma");
}

TEST(Cli, DemoPendulumProducesTheBundle) {
    const fs::path dir = fresh_dir("demo");
    const RunResult r = run_cli("demo pendulum --out " + (dir / "out").string(), dir);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_NE(r.out.find("largest |eigenvalue| of A: 1.0576"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("L = I4"), std::string::npos);
    for (const char* name :
         {"pendulum_config.json", "pendulum_report.json", "traces_noisy.csv",
          "summary_noisy.json", "traces_noiseless.csv", "summary_noiseless.json"})
        EXPECT_TRUE(fs::exists(dir / "out" / name)) << name;
    const json report = json::parse(slurp(dir / "out" / "pendulum_report.json"));
    EXPECT_TRUE(report["separation"]["mss"].get<bool>());
    EXPECT_LT(report["control"]["rho"].get<double>(), 1.0);
    EXPECT_LT(report["filter"]["rho"].get<double>(), 1.0);
}

} // namespace

int main(int argc, char** argv) {
    ::testing::InitGoogleTest(&argc, argv);
    if (argc < 2) {
        std::fprintf(stderr, "usage: %s <path-to-jumpctl-binary>\n", argv[0]);
        return 1;
    }
    g_cli_path = argv[1];
    return RUN_ALL_TESTS();
}
