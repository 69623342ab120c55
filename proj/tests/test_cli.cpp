#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "obswave/cli.hpp"

using namespace obswave;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("obswave_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Invocation {
    int code;
    std::string out, err;
};

Invocation run(std::vector<std::string> args) {
    args.insert(args.begin(), "obswave");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

// Small 1-D benchmark configuration; `extra` is spliced into the top-level object.
fs::path write_config(const fs::path& dir, const std::string& name, double T = 10.0, int nx = 21, int nt = 200,
                      const std::string& extra = "") {
    const fs::path p = dir / (name + ".json");
    std::ofstream(p) << "{\n  \"seed\": 4,\n  \"geometry\": {\"dim\": 1, \"nx\": [" << nx << "], \"T\": " << T << ", \"nt\": " << nt
                     << ",\n    \"weight\": {\"kind\": \"quadratic\", \"a\": 4.0, \"center\": [-1.0]}, \"delta\": 0.2},\n"
                     << "  \"dynamics\": {\"b4\": \"0.5\"},\n"
                     << "  \"carleman\": {\"lambda\": 20, \"c0\": 1.0, \"c1\": 0.7},\n"
                     << "  \"ensemble\": {\"n_paths\": 6, \"n_data\": 4, \"modes\": 3}" << extra << "\n}\n";
    return p;
}

std::string value_of(const std::string& kv, const std::string& key) {
    std::istringstream in(kv);
    std::string line;
    while (std::getline(in, line))
        if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
    return "";
}

} // namespace

TEST(Cli, CheckGeometryBenchmarkPasses) {
    const auto dir = scratch("geom");
    const auto cfg = write_config(dir, "b", 10.0, 101, 1000);
    const auto r = run({"check-geometry", "--config", cfg.string(), "--out", (dir / "o").string()});
    EXPECT_EQ(r.code, 0) << r.out << r.err;
    const auto kv = slurp(dir / "o" / "geometry.txt");
    EXPECT_NEAR(std::stod(value_of(kv, "mu0")), 16.0, 1e-6);
    EXPECT_EQ(value_of(kv, "R1"), "4");
    EXPECT_EQ(value_of(kv, "T0"), "8");
    EXPECT_EQ(value_of(kv, "gamma0"), "1");
    EXPECT_TRUE(fs::exists(dir / "o" / "geometry.csv"));
    EXPECT_TRUE(verify_manifest(dir / "o").ok);
}

TEST(Cli, CheckGeometryShortHorizonFailsWithFlagText) {
    const auto dir = scratch("geom_short");
    const auto cfg = write_config(dir, "s", 6.0, 41, 240);
    const auto r = run({"check-geometry", "--config", cfg.string(), "--out", (dir / "o").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("T > T0"), std::string::npos) << r.out;
    EXPECT_EQ(value_of(slurp(dir / "o" / "geometry.txt"), "flag2"), "false");
    const auto m = Json::parse(slurp(dir / "o" / "manifest.json"));
    EXPECT_EQ(m["exit_code"], 1);
}

TEST(Cli, ObservabilityRefusesFailingGeometry) {
    const auto dir = scratch("geom_gate");
    const auto cfg = write_config(dir, "s", 6.0, 21, 120);
    for (const char* sub : {"verify-observability", "reconstruct", "stability-probe"}) {
        const auto r = run({sub, "--config", cfg.string(), "--out", (dir / sub).string()});
        EXPECT_EQ(r.code, 1) << sub;
        EXPECT_NE(r.out.find("geometry hypotheses fail"), std::string::npos) << sub;
    }
}

TEST(Cli, UsageAndConfigErrorsExitTwo) {
    const auto dir = scratch("errors");
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"solve"}).code, 2);
    EXPECT_EQ(run({"solve", "--config", (dir / "none.json").string()}).code, 2);
    std::ofstream(dir / "bad.json") << "{\n  \"seed\": 1,\n  \"geometry\": {\"dim\": 1, \"nx\": [1]}\n}\n";
    const auto r = run({"solve", "--config", (dir / "bad.json").string(), "--out", (dir / "o").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("bad.json:3:"), std::string::npos) << r.err;
    EXPECT_EQ(run({"emit-plotdata", "--artifact", (dir / "nothing").string(), "--kind", "energy"}).code, 2);
    EXPECT_EQ(run({"emit-plotdata", "--artifact", dir.string(), "--kind", "energy"}).code, 2);
    EXPECT_FALSE(fs::exists(dir / "plot_energy.csv"));
}

TEST(Cli, SolveWritesTrajectoryAndSeedOverride) {
    const auto dir = scratch("solve");
    const auto cfg = write_config(dir, "b");
    ASSERT_EQ(run({"solve", "--config", cfg.string(), "--out", (dir / "a").string()}).code, 0);
    ASSERT_EQ(run({"solve", "--config", cfg.string(), "--out", (dir / "b").string(), "--seed", "99"}).code, 0);
    const auto t = read_trajectory(dir / "a" / "trajectory.bin");
    EXPECT_EQ(t.nt, 200);
    EXPECT_EQ(t.nx[0], 21);
    const auto ens = read_csv(dir / "a" / "ensemble.csv");
    EXPECT_EQ(ens.rows.size(), 6u);
    EXPECT_EQ(read_csv(dir / "a" / "summary.csv").rows.size(), 201u);
    EXPECT_NE(slurp(dir / "a" / "ensemble.csv"), slurp(dir / "b" / "ensemble.csv"));
    EXPECT_EQ(read_csv(dir / "b" / "ensemble.csv").rows[0][1], "99");
    EXPECT_TRUE(verify_manifest(dir / "a").ok);
}

TEST(Cli, IdentityEnergyObservabilityStabilityPass) {
    const auto dir = scratch("checks");
    const auto cfg = write_config(dir, "b");
    for (const char* sub : {"verify-identity", "verify-energy", "verify-observability", "stability-probe", "observe"}) {
        const auto r = run({sub, "--config", cfg.string(), "--out", (dir / sub).string()});
        EXPECT_EQ(r.code, 0) << sub << "\n" << r.out << r.err;
        EXPECT_TRUE(verify_manifest(dir / sub).ok) << sub;
    }
    EXPECT_TRUE(fs::exists(dir / "verify-observability" / "constant_vs_ensemble_internal.csv"));
    EXPECT_EQ(read_csv(dir / "verify-observability" / "observability_boundary.csv").rows.size(), 4u);
    EXPECT_EQ(read_csv(dir / "stability-probe" / "stability_boundary.csv").rows.size(), 30u);
}

TEST(Cli, ObserveThenReconstructFromTrace) {
    const auto dir = scratch("recon");
    const auto cfg = write_config(dir, "b", 10.0, 21, 200, R"J(,
  "task": {"initial": {"z0": "sin(pi*x)", "z1": "sin(2*pi*x)"},
           "reconstruction": {"max_relative_error": 0.05}})J");
    ASSERT_EQ(run({"observe", "--config", cfg.string(), "--out", (dir / "obs").string(), "--mode", "boundary"}).code, 0);
    // the observed trace carries one noise path, so reconstruct against the same path
    const auto r = run({"reconstruct", "--config", cfg.string(), "--out", (dir / "rec").string(), "--target",
                        (dir / "obs" / "trace_boundary.csv").string()});
    EXPECT_EQ(r.code, 0) << r.out << r.err;
    const auto kv = slurp(dir / "rec" / "reconstruction.txt");
    EXPECT_LT(std::stod(value_of(kv, "relative_error")), 1e-6);
    const auto rec = read_trajectory(dir / "rec" / "recovered.bin");
    EXPECT_EQ(rec.nt, 0);
    const auto hist = read_csv(dir / "rec" / "reconstruction.csv");
    EXPECT_GE(hist.rows.size(), 2u);

    ASSERT_EQ(run({"emit-plotdata", "--artifact", (dir / "rec").string(), "--kind", "objective"}).code, 0);
    EXPECT_EQ(read_csv(dir / "rec" / "plot_objective.csv").header, (std::vector<std::string>{"series", "x", "value"}));
    EXPECT_TRUE(verify_manifest(dir / "rec").ok);
    std::ofstream(dir / "rec" / "reconstruction.csv", std::ios::app) << "tampered\n";
    EXPECT_EQ(run({"verify-manifest", "--dir", (dir / "rec").string()}).code, 1);
}

TEST(Cli, IterationCapReportsNullSpace) {
    const auto dir = scratch("cap");
    const auto cfg = write_config(dir, "b", 10.0, 21, 200, R"J(,
  "task": {"initial": {"z0": "sin(pi*x) + sin(3*pi*x)", "z1": "sin(2*pi*x)"}})J");
    const auto r = run({"reconstruct", "--config", cfg.string(), "--out", (dir / "o").string(), "--max-iter", "1"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("estimated null-space dimension"), std::string::npos) << r.out;
}

TEST(Cli, CsvsAreByteIdenticalAcrossRunsAndThreadCounts) {
    const auto dir = scratch("repro");
    const auto cfg = write_config(dir, "b");
    const std::vector<std::vector<std::string>> jobs{
        {"solve"}, {"observe"}, {"verify-energy"}, {"verify-observability"}, {"stability-probe"}, {"reconstruct"}, {"verify-identity"}};
    auto sweep = [&](const std::string& tag, const char* threads) {
        setenv("OBSWAVE_THREADS", threads, 1);
        for (auto job : jobs) {
            const std::string out = (dir / tag / job[0]).string();
            job.insert(job.end(), {"--config", cfg.string(), "--out", out});
            EXPECT_EQ(run(job).code, 0) << job[0];
        }
        unsetenv("OBSWAVE_THREADS");
    };
    sweep("one", "1");
    sweep("one_again", "1");
    sweep("four", "4");
    std::size_t compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "one")) {
        const auto ext = e.path().extension();
        if (ext != ".csv" && ext != ".bin") continue;
        const auto rel = fs::relative(e.path(), dir / "one");
        EXPECT_EQ(slurp(e.path()), slurp(dir / "one_again" / rel)) << rel;
        EXPECT_EQ(slurp(e.path()), slurp(dir / "four" / rel)) << rel;
        ++compared;
    }
    EXPECT_GE(compared, 15u);
}
