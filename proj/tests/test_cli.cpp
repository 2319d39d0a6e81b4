#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "qcd/cli.hpp"

using namespace qcd;
using namespace qcd::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "qcd_cli_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string write_file(const std::string& name, const std::string& content) {
  const auto p = scratch(name);
  std::ofstream(p) << content;
  return p.string();
}

// Business-day price path whose daily changes shift in mean after `change` returns.
std::string synthetic_prices(const std::string& name, std::size_t returns, std::size_t change, double shift) {
  using namespace std::chrono;
  RandomStream rng(99, StreamPurpose::generic, 0);
  std::ostringstream out;
  out << "Date,Close\n";
  sys_days day = sys_days{year{2001} / 1 / 2};
  double price = 100.0;
  for (std::size_t i = 0; i <= returns; ++i) {
    while (weekday{day} == Saturday || weekday{day} == Sunday) day += days{1};
    out << to_iso(year_month_day{day}) << ',' << price << '\n';
    price += rng.normal(i >= change ? shift : 0.0, 1.0);
    day += days{1};
  }
  return write_file(name, out.str());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct RunResult {
  int code;
  std::string out, err;
};

RunResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

const ResultValue& require_result(const Report& r, const std::string& name) {
  const auto* v = r.find(name);
  if (!v) throw std::runtime_error("missing result " + name);
  return *v;
}

}  // namespace

TEST(ParseConfig, DirectMapping) {
  const auto input = write_file("hst.csv", "Date,Close\n2020-01-01,1\n2020-01-02,2\n");
  const auto c = parse_config({"segment", "--input", input, "--min-segment", "30"});
  EXPECT_EQ(c.command, "segment");
  EXPECT_EQ(c.input, input);
  EXPECT_EQ(c.min_segment, 30u);
  const auto d = parse_config({"--command", "segment", "--input", input});
  EXPECT_EQ(d.command, "segment");
}

TEST(ParseConfig, UnknownFlagIsUsageError) {
  EXPECT_THROW(parse_config({"simulate", "--speed", "3"}), UsageError);
  const auto r = run_cli({"simulate", "--speed", "3"});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
}

TEST(ParseConfig, FlagOverridesConfigFile) {
  const auto cfg = write_file("seed.json", R"({"command": "constants", "seed": 3, "gamma": 50})");
  const auto c = parse_config({"--config", cfg, "--seed", "7"});
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.gamma, 50.0);
  EXPECT_EQ(c.command, "constants");
  const auto d = parse_config({"--config", cfg});
  EXPECT_EQ(d.seed, 3u);
}

TEST(ParseConfig, Errors) {
  EXPECT_THROW(parse_config({"segment", "--command", "detect"}), UsageError);
  EXPECT_THROW(parse_config({"simulate", "--gamma", "abc"}), UsageError);
  EXPECT_THROW(parse_config({"simulate", "--gamma", "0.5"}), UsageError);
  EXPECT_THROW(parse_config({"simulate", "--q", "0.9"}), UsageError);
  EXPECT_THROW(parse_config({"segment"}), UsageError);
  EXPECT_THROW(parse_config({"segment", "--input", "/no/such/file.csv"}), UsageError);
  EXPECT_THROW(parse_config({}), UsageError);
  EXPECT_THROW(parse_config({"fly"}), UsageError);
  const auto bad_key = write_file("badkey.json", R"({"command": "constants", "speed": 3})");
  EXPECT_THROW(parse_config({"--config", bad_key}), UsageError);
  const auto bad_json = write_file("bad.json", "{not json");
  EXPECT_THROW(parse_config({"--config", bad_json}), UsageError);
  const auto inc = write_file("inc0.csv", "0.2\n");
  EXPECT_THROW(parse_config({"detect", "--increments", inc, "--kind", "cusum"}), UsageError);
}

TEST(ParseConfig, ErrorNamesTheKey) {
  try {
    parse_config({"simulate", "--replications", "-4"});
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("replications"), std::string::npos) << e.what();
  }
}

TEST(ParseConfig, SchemaString) {
  const auto input = write_file("schema.csv", "day;px\n01/02/2020;1\n01/03/2020;2\n");
  const auto c = parse_config({"returns", "--input", input, "--schema", "date=day,close=px,format=%m/%d/%Y,delimiter=;"});
  EXPECT_EQ(c.schema.date_column, "day");
  EXPECT_EQ(c.schema.delimiter, ';');
  const auto report = execute(c);
  EXPECT_EQ(require_result(report, "returns").value, 1.0);
  EXPECT_THROW(parse_config({"returns", "--input", input, "--schema", "colour=red"}), UsageError);
}

TEST(ParseConfig, HashIgnoresOutputDirectory) {
  const auto a = parse_config({"constants", "--out", "x"});
  const auto b = parse_config({"constants", "--out", "y"});
  const auto c = parse_config({"constants", "--seed", "2"});
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
}

TEST(Execute, DetectTwoIncrementFixture) {
  const auto inc = write_file("inc.csv", "0.2\n0.2\n");
  const auto out = scratch("detect_out");
  fs::remove_all(out);
  const auto r = run_cli({"detect", "--increments", inc, "--kind", "cusum", "--threshold-h", "0.3", "--out",
                          out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("cusum_first_alarm = 2"), std::string::npos) << r.out;
  // one trace: the report plus one trace CSV
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(out)) files.push_back(e.path());
  EXPECT_EQ(files.size(), 2u);
}

TEST(Execute, ReportBodyIsByteIdenticalOnRerun) {
  const auto prices = synthetic_prices("rerun.csv", 300, 150, 0.8);
  const auto out = scratch("rerun_out");
  fs::remove_all(out);
  const std::vector<std::string> args{"segment", "--input", prices, "--out", out.string(), "--seed", "5"};
  ASSERT_EQ(run_cli(args).code, 0);
  const auto c = parse_config(args);
  const auto path = out / ("segment-" + c.hash() + ".report.json");
  const auto first = read_file(path);
  ASSERT_EQ(run_cli(args).code, 0);
  EXPECT_EQ(first, read_file(path));
  EXPECT_FALSE(first.empty());
}

TEST(Execute, UnwritableDirectoryIsRuntimeError) {
  const auto blocker = write_file("blocker", "x");
  const auto inc = write_file("inc2.csv", "0.2\n0.2\n");
  const auto r = run_cli({"detect", "--increments", inc, "--kind", "cusum", "--threshold-h", "0.3", "--out",
                          blocker + "/sub"});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
}

TEST(Execute, SegmentNamesChangeDate) {
  const auto prices = synthetic_prices("seg.csv", 400, 200, 1.0);
  const auto report = execute(parse_config({"segment", "--input", prices}));
  const double idx = require_result(report, "bd_estimate_index").value;
  EXPECT_NEAR(idx, 200.0, 15.0);
  const auto returns = to_returns(load_csv(prices));
  bool found = false;
  for (const auto& t : report.tables)
    if (t.name == "bd_estimate") {
      found = true;
      EXPECT_EQ(t.rows.at(0).at(1), to_iso(returns.dates()[static_cast<std::size_t>(idx) - 1]));
    }
  EXPECT_TRUE(found);
}

TEST(Execute, ReturnsAndDiagnose) {
  const auto prices = synthetic_prices("diag.csv", 120, 60, 0.5);
  const auto r = execute(parse_config({"returns", "--input", prices}));
  EXPECT_EQ(require_result(r, "prices").value, 121.0);
  EXPECT_EQ(require_result(r, "returns").value, 120.0);
  const auto d = execute(parse_config({"diagnose", "--input", prices, "--split", "60"}));
  std::size_t lag_artifacts = 0;
  for (const auto& a : d.artifacts)
    if (a.name.find("_lags") != std::string::npos) ++lag_artifacts;
  EXPECT_EQ(lag_artifacts, 3u);  // all, pre, post
}

TEST(Execute, DetectOnPricesReportsDetection) {
  const auto prices = synthetic_prices("det.csv", 400, 200, 1.5);
  const auto report = execute(parse_config({"detect", "--input", prices, "--threshold-h", "3", "--threshold-a",
                                            "20", "--change-point", "200"}));
  for (const std::string k : {"cusum", "sr"}) {
    const double t = require_result(report, k + "_detection_time").value;
    EXPECT_GT(t, 200.0);
    EXPECT_LT(t, 240.0);
  }
}

TEST(Execute, ConstantsReportsStandardErrors) {
  const auto report = execute(parse_config({"constants", "--replications", "2000", "--threshold-a", "60"}));
  EXPECT_NEAR(require_result(report, "zeta").value, 0.5603702284, 1e-9);
  EXPECT_TRUE(require_result(report, "beta0").std_error.has_value());
  EXPECT_EQ(*require_result(report, "C_inf").replications, 2000u);
  EXPECT_NEAR(require_result(report, "arl_approx_sr").value, 60.0 / 0.5603702284, 1e-6);
}

TEST(Execute, SimulateComparesSrAndCusum) {
  const auto report = execute(parse_config({"simulate", "--gamma", "100", "--replications", "5000", "--nu", "1000",
                                            "--horizon", "500"}));
  const auto& sr = require_result(report, "stadd_sr");
  const auto& cu = require_result(report, "stadd_cusum");
  EXPECT_LE(sr.value, cu.value + 2 * std::hypot(*sr.std_error, *cu.std_error));
  bool table = false;
  for (const auto& t : report.tables)
    if (t.name == "comparison") {
      table = true;
      EXPECT_EQ(t.rows.size(), 2u);
    }
  EXPECT_TRUE(table);
}

TEST(Execute, HstFixtureSegment) {
  const char* env = std::getenv("QCD_HST_CSV");
  const fs::path fixture = env ? fs::path(env) : fs::path(QCD_TEST_DATA) / "hst.csv";
  if (!fs::exists(fixture)) GTEST_SKIP() << "HST fixture not present at " << fixture;
  const auto report = execute(parse_config({"segment", "--input", fixture.string()}));
  bool named = false;
  for (const auto& t : report.tables)
    if (t.name == "bd_estimate") named = t.rows.at(0).at(1) == "2003-03-14";
  EXPECT_TRUE(named);
}
