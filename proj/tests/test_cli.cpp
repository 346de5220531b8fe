#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

#include "rminar/cli.hpp"

using namespace rminar;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "rminar");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  Outcome o;
  o.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("rminar_cli_" + std::to_string(rd()));
    fs::create_directories(dir_);
    const char* src = std::getenv("RMINAR_SOURCE_DIR");
    configs_ = fs::path(src ? src : RMINAR_FALLBACK_SOURCE_DIR) / "configs";
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string config(const std::string& name) const { return (configs_ / name).string(); }

  std::string simulated(const std::string& model, std::size_t n, std::uint64_t seed) {
    const std::string out = path("sim_" + std::to_string(seed) + ".csv");
    const Outcome o = run({"simulate", "--model", config(model), "--n", std::to_string(n), "--seed",
                           std::to_string(seed), "--out", out});
    EXPECT_EQ(o.code, 0) << o.err;
    return out;
  }

  // Runs the installed binary so the process exit status is observed directly.
  Outcome run_binary(const std::string& args) {
    const char* exe = std::getenv("RMINAR_CLI");
    if (!exe) return {};
    const std::string out = path("stdout.txt");
    const std::string err = path("stderr.txt");
    const std::string cmd = std::string("'") + exe + "' " + args + " > '" + out + "' 2> '" + err + "'";
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = slurp(out);
    o.err = slurp(err);
    return o;
  }

  fs::path dir_;
  fs::path configs_;
};

const std::regex kErrorLine(R"(^error code=(\d) kind=(\w+) message=.*\n$)");

}  // namespace

TEST_F(CliTest, UsageAndHelp) {
  const Outcome none = run({});
  EXPECT_EQ(none.code, 2);
  EXPECT_NE(none.err.find("kind=UsageError"), std::string::npos);
  const Outcome help = run({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("mc-study"), std::string::npos);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
}

TEST_F(CliTest, SimulateWritesDeterministicCsv) {
  const Outcome a = run({"simulate", "--model", config("additive_poisson_ar4.json"), "--n", "1000", "--seed", "42"});
  ASSERT_EQ(a.code, 0) << a.err;
  const Series s = parse_series_csv(a.out);
  EXPECT_TRUE(s.csv_header);
  EXPECT_EQ(s.values.size(), 1000u);
  const Outcome b = run({"simulate", "--model", config("additive_poisson_ar4.json"), "--n", "1000", "--seed", "42"});
  EXPECT_EQ(a.out, b.out);
  const Outcome c = run({"simulate", "--model", config("additive_poisson_ar4.json"), "--n", "1000", "--seed", "43"});
  EXPECT_NE(a.out, c.out);
  const ModelSpec spec = read_model_file(config("additive_poisson_ar4.json"));
  EXPECT_EQ(s.values, simulate(spec, 1000, 500, 42).values);
}

TEST_F(CliTest, SimulateRequiresSeed) {
  const Outcome o = run({"simulate", "--model", config("additive_poisson_ar4.json"), "--n", "10"});
  EXPECT_EQ(o.code, 2);
  EXPECT_TRUE(std::regex_match(o.err, kErrorLine)) << o.err;
}

TEST_F(CliTest, MissingOrMalformedModel) {
  const Outcome missing = run({"simulate", "--model", path("absent.json"), "--n", "10", "--seed", "1"});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("kind=ParseError"), std::string::npos);
  write_file(path("bad.json"), R"({"version":1,"class":"additive","coefficients":[],"innovation":{"kind":"poisson","mean":1},"extra":1})");
  const Outcome bad = run({"simulate", "--model", path("bad.json"), "--n", "10", "--seed", "1"});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("kind=InvalidSpec"), std::string::npos);
}

TEST_F(CliTest, ShippedConfigsLoad) {
  for (const char* name : {"additive_poisson_ar4.json", "additive_poisson_ar4_infinite_mean.json", "z_skellam_ar3.json",
                           "multiplicative_poisson_ar2.json"})
    EXPECT_NO_THROW(read_model_file(config(name))) << name;
  for (const char* name : {"study_additive_poisson_ar4.json", "study_multiplicative_poisson_ar2.json"})
    EXPECT_NO_THROW(study_config_from_json(read_json_file(config(name)))) << name;
}

TEST_F(CliTest, AnalyzeDocument) {
  const Outcome o = run({"analyze", "--model", config("additive_poisson_ar4.json"), "--seed", "5", "--horizon", "500",
                         "--lyapunov-reps", "20"});
  ASSERT_EQ(o.code, 0) << o.err;
  const Json j = Json::parse(o.out);
  for (const char* key : {"model", "conditions", "stationarity", "tail", "lyapunov"}) EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_NEAR(j["stationarity"]["coefficient_sum"].get<double>(), 0.7, 1e-12);
  EXPECT_TRUE(j["lyapunov"]["minus_infinity"].get<bool>());
  EXPECT_EQ(run({"analyze", "--model", config("additive_poisson_ar4.json")}).code, 2);

  const Outcome inf = run({"analyze", "--model", config("additive_poisson_ar4_infinite_mean.json"), "--seed", "5",
                           "--horizon", "200", "--lyapunov-reps", "10"});
  ASSERT_EQ(inf.code, 0) << inf.err;
  const Json ji = Json::parse(inf.out);
  EXPECT_EQ(ji["stationarity"]["uncond_mean"], "inf");
  EXPECT_FALSE(ji["stationarity"]["mean_exists"].get<bool>());
}

TEST_F(CliTest, FitDocument) {
  const std::string series = simulated("additive_poisson_ar4.json", 2000, 9);
  const Outcome o = run({"fit", "--series", series, "--class", "additive", "--order", "4"});
  ASSERT_EQ(o.code, 0) << o.err;
  const Json j = Json::parse(o.out);
  EXPECT_EQ(j["order"], 4);
  EXPECT_EQ(j["theta2"].size(), 5u);
  EXPECT_NEAR(j["theta2"]["phi_1"].get<double>(), 0.3, 0.1);
  EXPECT_TRUE(j.contains("dispersion"));
  EXPECT_EQ(o.out.find("nan"), std::string::npos);
  EXPECT_EQ(o.out.find("NaN"), std::string::npos);

  const FitConfig cfg = [] {
    FitConfig c;
    c.order = 4;
    return c;
  }();
  const FitResult direct = fit_model(read_series_csv(series), cfg);
  EXPECT_DOUBLE_EQ(j["theta2"]["mu_eps"].get<double>(), direct.theta2[0]);
}

TEST_F(CliTest, FitMultiplicativeAndZ) {
  const std::string mult = simulated("multiplicative_poisson_ar2.json", 1500, 3);
  const Outcome m = run({"fit", "--series", mult, "--class", "multiplicative", "--order", "2", "--variance-link", "poisson"});
  ASSERT_EQ(m.code, 0) << m.err;
  EXPECT_TRUE(Json::parse(m.out).contains("sigma_eps2"));
  const std::string z = simulated("z_skellam_ar3.json", 1500, 4);
  const Outcome zf = run({"fit", "--series", z, "--class", "additive-z", "--order", "3", "--residuals"});
  ASSERT_EQ(zf.code, 0) << zf.err;
  EXPECT_EQ(Json::parse(zf.out)["residuals_e"].size(), 1497u);
}

TEST_F(CliTest, FitInputErrors) {
  EXPECT_EQ(run({"fit", "--series", path("missing.csv")}).code, 2);
  write_file(path("frac.csv"), "y\n1\n2.5\n3\n");
  const Outcome frac = run({"fit", "--series", path("frac.csv")});
  EXPECT_EQ(frac.code, 2);
  EXPECT_NE(frac.err.find("line 3"), std::string::npos);
  write_file(path("neg.csv"), "1\n-2\n3\n4\n5\n6\n");
  EXPECT_EQ(run({"fit", "--series", path("neg.csv"), "--class", "additive"}).code, 2);
  EXPECT_EQ(run({"fit", "--series", path("neg.csv"), "--variance-link", "cubic"}).code, 2);
  EXPECT_EQ(run({"fit", "--series", path("neg.csv"), "--class", "arma"}).code, 2);
}

TEST_F(CliTest, NumericalFailureExitsThree) {
  std::string flat = "y\n";
  for (int i = 0; i < 50; ++i) flat += "4\n";
  write_file(path("flat.csv"), flat);
  const Outcome o = run({"fit", "--series", path("flat.csv"), "--order", "1"});
  EXPECT_EQ(o.code, 3);
  std::smatch m;
  ASSERT_TRUE(std::regex_match(o.err, m, kErrorLine)) << o.err;
  EXPECT_EQ(m[1], "3");
  EXPECT_EQ(m[2], "SingularMatrix");
}

TEST_F(CliTest, DiagnoseWithOrderSelectionAndPlotCsv) {
  const std::string series = simulated("additive_poisson_ar4.json", 800, 11);
  const std::string plot = path("acf.csv");
  const Outcome o = run({"diagnose", "--series", series, "--order", "4", "--max-lag", "12", "--p-max", "5",
                         "--plot-csv", plot});
  ASSERT_EQ(o.code, 0) << o.err;
  const Json j = Json::parse(o.out);
  EXPECT_EQ(j["acf"].size(), 13u);
  EXPECT_EQ(j["order_selection"].size(), 5u);
  EXPECT_TRUE(j["metrics"].contains("mspr"));
  const std::string csv = slurp(plot);
  EXPECT_EQ(csv.rfind("lag,acf,pacf\n0,1,1\n", 0), 0u) << csv.substr(0, 40);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 14);
}

TEST_F(CliTest, ForecastEval) {
  const std::string series = simulated("additive_poisson_ar4.json", 600, 12);
  const Outcome o = run({"forecast-eval", "--series", series, "--order", "4", "--train-sizes", "300,500"});
  ASSERT_EQ(o.code, 0) << o.err;
  const Json j = Json::parse(o.out);
  ASSERT_EQ(j["evaluations"].size(), 2u);
  EXPECT_EQ(j["evaluations"][0]["forecasts"], 300);
  EXPECT_EQ(j["evaluations"][1]["forecasts"], 100);
  EXPECT_EQ(run({"forecast-eval", "--series", series, "--order", "4", "--train-sizes", "600"}).code, 2);
  EXPECT_EQ(run({"forecast-eval", "--series", series, "--order", "4"}).code, 2);
}

TEST_F(CliTest, McStudyFromModel) {
  const Outcome o = run({"mc-study", "--model", config("additive_poisson_ar4.json"), "--n", "300", "--reps", "20",
                         "--seed", "1"});
  ASSERT_EQ(o.code, 0) << o.err;
  const Json j = Json::parse(o.out);
  EXPECT_EQ(j["rows"].size(), 10u);
  EXPECT_EQ(j["reps"], 20);
  EXPECT_EQ(run({"mc-study", "--model", config("additive_poisson_ar4.json"), "--n", "300", "--reps", "20"}).code, 2);
}

TEST_F(CliTest, McStudyFromConfigAndConflicts) {
  const Outcome o = run({"mc-study", "--config", config("study_multiplicative_poisson_ar2.json"), "--reps", "10", "--n", "400"});
  ASSERT_EQ(o.code, 0) << o.err;
  const Json j = Json::parse(o.out);
  EXPECT_EQ(j["reps"], 10);
  EXPECT_EQ(j["n"], 400);
  EXPECT_EQ(j["rows"][0]["parameter"], "omega");

  const Outcome conflict =
      run({"mc-study", "--config", config("study_additive_poisson_ar4.json"), "--class", "additive"});
  EXPECT_EQ(conflict.code, 2);
  EXPECT_NE(conflict.err.find("--class"), std::string::npos);
  EXPECT_EQ(run({"mc-study", "--config", config("study_additive_poisson_ar4.json"), "--model",
                 config("additive_poisson_ar4.json")})
                .code,
            2);
  EXPECT_EQ(run({"mc-study"}).code, 2);
}

TEST_F(CliTest, McStudyIndependentOfWorkers) {
  auto study = [&](const char* workers) {
    const Outcome o = run({"mc-study", "--model", config("z_skellam_ar3.json"), "--n", "300", "--reps", "24", "--seed",
                           "8", "--workers", workers});
    EXPECT_EQ(o.code, 0) << o.err;
    Json j = Json::parse(o.out);
    j.erase("workers");
    j.erase("wall_seconds");
    return j;
  };
  EXPECT_EQ(study("1"), study("4"));
}

TEST_F(CliTest, OutFileReceivesDocument) {
  const std::string doc = path("analysis.json");
  const Outcome o = run({"analyze", "--model", config("z_skellam_ar3.json"), "--seed", "1", "--horizon", "100",
                         "--lyapunov-reps", "5", "--out", doc});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(o.out.empty());
  EXPECT_NO_THROW(Json::parse(slurp(doc)));
}

TEST_F(CliTest, ProcessExitCodes) {
  if (!std::getenv("RMINAR_CLI")) GTEST_SKIP() << "RMINAR_CLI not set";
  EXPECT_EQ(run_binary("--help").code, 0);
  EXPECT_EQ(run_binary("").code, 2);
  EXPECT_EQ(run_binary("fit --series '" + path("nope.csv") + "'").code, 2);
  std::string flat = "y\n";
  for (int i = 0; i < 30; ++i) flat += "7\n";
  write_file(path("flat.csv"), flat);
  const Outcome o = run_binary("fit --series '" + path("flat.csv") + "'");
  EXPECT_EQ(o.code, 3);
  EXPECT_TRUE(std::regex_match(o.err, kErrorLine)) << o.err;
  const Outcome sim = run_binary("simulate --model '" + config("z_skellam_ar3.json") + "' --n 50 --seed 3");
  EXPECT_EQ(sim.code, 0);
  EXPECT_EQ(parse_series_csv(sim.out).values.size(), 50u);
}
