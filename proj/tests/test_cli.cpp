#include "config.hpp"
#include "output.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

using namespace wgqed;
using namespace wgqed::cli;
namespace fs = std::filesystem;

namespace {

const double kMHz = kTwoPi * 1e6;

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(WGQED_CLI_PATH) + " " + args + " 2>/dev/null";
  RunResult r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string shipped(const std::string& name) { return std::string(WGQED_CONFIG_DIR) + "/" + name + ".yaml"; }

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("wgqed_cli_test_" + std::to_string(getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(path_ / name) << text;
    return path_ / name;
  }

 private:
  fs::path path_;
};

struct Csv {
  std::vector<std::string> comments;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::runtime_error("no column " + name);
  }
  std::vector<double> column(const std::string& name) const {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(r[col(name)]);
    return v;
  }
};

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

Csv read_csv(const fs::path& p) {
  Csv c;
  std::ifstream is(p);
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("#", 0) == 0) {
      c.comments.push_back(line);
    } else if (c.header.empty()) {
      c.header = split(line);
    } else {
      std::vector<double> row;
      for (const auto& cell : split(line)) row.push_back(std::strtod(cell.c_str(), nullptr));
      c.rows.push_back(row);
    }
  }
  return c;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_file(p)); }

}  // namespace

// ------------------------------------------------------------ config layer

TEST(Units, Conversions) {
  EXPECT_DOUBLE_EQ(parse_quantity("3.2 MHz", Quantity::frequency, "x"), kTwoPi * 3.2e6);
  EXPECT_DOUBLE_EQ(parse_quantity("4.93GHz", Quantity::frequency, "x"), kTwoPi * 4.93e9);
  EXPECT_DOUBLE_EQ(parse_quantity("8 kHz", Quantity::frequency, "x"), kTwoPi * 8e3);
  EXPECT_DOUBLE_EQ(parse_quantity("10 Hz", Quantity::frequency, "x"), kTwoPi * 10.0);
  EXPECT_DOUBLE_EQ(parse_quantity("5 rad/s", Quantity::frequency, "x"), 5.0);
  EXPECT_DOUBLE_EQ(parse_quantity("-2 gamma", Quantity::frequency, "x", 7.0), -14.0);
  EXPECT_DOUBLE_EQ(parse_quantity("2.5 us", Quantity::time, "x"), 2.5e-6);
  EXPECT_DOUBLE_EQ(parse_quantity("20 ns", Quantity::time, "x"), 20e-9);
  EXPECT_DOUBLE_EQ(parse_quantity("65 fF", Quantity::capacitance, "x"), 65e-15);
  EXPECT_DOUBLE_EQ(parse_quantity("-160 dBm", Quantity::power, "x"), -160.0);
  EXPECT_DOUBLE_EQ(parse_quantity("0.5 pi", Quantity::angle, "x"), 0.5 * kPi);
  EXPECT_DOUBLE_EQ(parse_quantity("1.2", Quantity::angle, "x"), 1.2);
  EXPECT_DOUBLE_EQ(parse_quantity("1e6", Quantity::number, "x"), 1e6);

  EXPECT_THROW(parse_quantity("3.2", Quantity::frequency, "x"), ConfigError);
  EXPECT_THROW(parse_quantity("3.2 THz", Quantity::frequency, "x"), ConfigError);
  EXPECT_THROW(parse_quantity("MHz", Quantity::frequency, "x"), ConfigError);
  EXPECT_THROW(parse_quantity("2 gamma", Quantity::frequency, "x"), ConfigError);
  EXPECT_THROW(parse_quantity("3 MHz", Quantity::time, "x"), ConfigError);
  EXPECT_THROW(parse_quantity("5 kg", Quantity::number, "x"), ConfigError);
  try {
    parse_quantity("7 furlongs", Quantity::time, "emission.t_end");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("emission.t_end"), std::string::npos);
  }
}

TEST(Config, GridsAndKeys) {
  const auto c = RunConfig::parse(R"(
grid:
  a: {start: -1 MHz, stop: 1 MHz, points: 5}
  b: [1 gamma, 2 gamma]
  c: 3 MHz
  d: {start: 1 MHz, stop: 2 MHz, points: 1}
  e: {start: 1 MHz, stop: 2 MHz, points: 3, step: 1}
  f: []
)");
  const auto g = section(c, "grid");
  const auto a = grid_value(g, "a", Quantity::frequency, "grid");
  ASSERT_EQ(a.size(), 5u);
  EXPECT_DOUBLE_EQ(a[0], -kMHz);
  EXPECT_DOUBLE_EQ(a[4], kMHz);
  EXPECT_EQ(grid_value(g, "b", Quantity::frequency, "grid", 2.0), (std::vector<double>{2.0, 4.0}));
  EXPECT_EQ(grid_value(g, "c", Quantity::frequency, "grid").size(), 1u);
  EXPECT_THROW(grid_value(g, "d", Quantity::frequency, "grid"), ConfigError);
  EXPECT_THROW(grid_value(g, "e", Quantity::frequency, "grid"), ConfigError);
  EXPECT_THROW(grid_value(g, "f", Quantity::frequency, "grid"), ConfigError);
  EXPECT_THROW(grid_value(g, "missing", Quantity::frequency, "grid"), ConfigError);
  EXPECT_THROW(section(c, "nothing"), ConfigError);
  EXPECT_FALSE(present(section(c, "nothing", false)));
  EXPECT_THROW(RunConfig::parse("a: [1, 2"), ConfigError);
  EXPECT_THROW(RunConfig::parse("- 1\n- 2\n"), ConfigError);
}

TEST(Config, PhysicsSections) {
  const auto c = RunConfig::parse(R"(
emitter:
  gamma: 3.2 MHz
  gamma_phi2: 41 kHz
  j_sigma: 1 gamma
  kdx: 0.5 pi
)");
  const auto p = emitter_params(c);
  EXPECT_DOUBLE_EQ(p.gamma, kTwoPi * 3.2e6);
  EXPECT_DOUBLE_EQ(p.omega2, p.omega1);
  EXPECT_EQ(p.gamma_phi1, 0.0);
  EXPECT_NEAR(p.j_sigma(), p.gamma, 1e-6);

  // without a coupler setting the emitters sit at the cancellation point
  const auto z = emitter_params(RunConfig::parse("emitter: {gamma: 1 MHz}"));
  EXPECT_NEAR(z.j_sigma(), 0.0, 1e-9);

  EXPECT_THROW(emitter_params(RunConfig::parse("emitter: {gamma: 1 MHz, j_c: 0 MHz, j_sigma: 0 MHz}")), ConfigError);
  EXPECT_THROW(emitter_params(RunConfig::parse("emitter: {gamma: -1 MHz}")), ConfigError);
  EXPECT_THROW(emitter_params(RunConfig::parse("emitter: {gamma: 1 MHz, colour: red}")), ConfigError);
  EXPECT_THROW(emitter_params(RunConfig::parse("emitter: {kdx: 1.5 pi}")), ConfigError);
  EXPECT_THROW(drive_spec(RunConfig::parse("drive: {direction: up}")), ConfigError);
  EXPECT_EQ(drive_spec(RunConfig::parse("drive: {direction: left}")).direction, waveguide::Direction::left);

  const auto e = emission_setup(RunConfig::parse("emission: {state: psi_minus, t_end: 2 us, points: 11, data_t1: 30 us}"));
  EXPECT_EQ(e.kind, emission::InitialStateKind::psi_minus);
  EXPECT_EQ(e.times.size(), 11u);
  EXPECT_DOUBLE_EQ(e.params.data_t1, 30e-6);
  EXPECT_THROW(emission_setup(RunConfig::parse("emission: {state: bell}")), ConfigError);
  EXPECT_THROW(emission_setup(RunConfig::parse("emission: {t_end: 0.1 us}")), ConfigError);

  const auto cs = coupler_setup(RunConfig::parse("coupler: {g_eff: 1.28 MHz}"));
  EXPECT_GT(std::abs(cs.circuit.mod_amp), 0.0);
  EXPECT_THROW(coupler_setup(RunConfig::parse("coupler: {c_j: 70 fF}")), ConfigError);
  EXPECT_THROW(amplifier_model(RunConfig::parse("amplifier: {gain: 0.5}")), ConfigError);
  EXPECT_EQ(amplifier_model(RunConfig::parse("seed: 1")).gain, 1e3);
}

TEST(Config, SeedPrecedence) {
  const auto c = RunConfig::parse("seed: 11");
  unsetenv("WGQED_SEED");
  EXPECT_EQ(resolve_seed(c, std::nullopt), 11u);
  EXPECT_EQ(resolve_seed(RunConfig::parse("name: x"), std::nullopt), 1u);
  setenv("WGQED_SEED", "22", 1);
  EXPECT_EQ(resolve_seed(c, std::nullopt), 22u);
  EXPECT_EQ(resolve_seed(c, 33u), 33u);
  setenv("WGQED_SEED", "-4", 1);
  EXPECT_THROW(resolve_seed(c, std::nullopt), ConfigError);
  setenv("WGQED_SEED", "12abc", 1);
  EXPECT_THROW(resolve_seed(c, std::nullopt), ConfigError);
  unsetenv("WGQED_SEED");
  EXPECT_THROW(resolve_seed(RunConfig::parse("seed: 1.5"), std::nullopt), ConfigError);
}

// ------------------------------------------------------------ output layer

TEST(Output, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Output, CsvLayoutAndRoundTrip) {
  CsvTable t("title line", {{"t", "us"}, {"v", "1"}});
  t.add_note("note");
  const double tricky = 0.1 + 0.2;
  t.add_row({1.0, tricky});
  t.add_row({-0.0, 1e-300});
  EXPECT_THROW(t.add_row({1.0}), DimensionError);
  const std::string s = t.str();
  EXPECT_EQ(s.find('\r'), std::string::npos);
  EXPECT_EQ(s.rfind("# title line\n# note\n# units: t [us], v [1]\nt,v\n", 0), 0u);
  TempDir dir;
  write_atomic(dir.path() / "a.csv", s);
  EXPECT_FALSE(fs::exists(dir.path() / "a.csv.tmp"));
  const auto c = read_csv(dir.path() / "a.csv");
  ASSERT_EQ(c.rows.size(), 2u);
  EXPECT_EQ(c.rows[0][1], tricky);  // 17 significant digits are exact
  EXPECT_EQ(c.rows[1][1], 1e-300);
  EXPECT_THROW(write_atomic(dir.path() / "missing" / "a.csv", s), IoError);
}

// ------------------------------------------------------------ commands

TEST(Cli, UsageAndExitCodes) {
  TempDir dir;
  EXPECT_EQ(run_cli("--help").code, 0);
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("spectroscopy").code, 2);  // no --config
  EXPECT_EQ(run_cli("frobnicate --config x.yaml").code, 2);
  EXPECT_EQ(run_cli("spectroscopy --config " + dir.str() + "/absent.yaml --out " + dir.str()).code, 2);
  const auto bad = dir.write("bad.yaml", "emitter: [1, 2\n");
  EXPECT_EQ(run_cli("spectroscopy --config " + bad.string() + " --out " + dir.str()).code, 2);
  const auto typo = dir.write("typo.yaml", "emitter: {gama: 3 MHz}\ngrid: {Delta: 0 MHz, delta: 0 MHz}\n");
  EXPECT_EQ(run_cli("spectroscopy --config " + typo.string() + " --out " + dir.str()).code, 2);
  // shipped config run under the wrong command
  EXPECT_EQ(run_cli("chevron --config " + shipped("fig2a") + " --out " + dir.str()).code, 2);
  EXPECT_EQ(run_cli("tomography --threads 0 --config " + shipped("fig4_right") + " --out " + dir.str()).code, 2);

  // a golden-section bracket that is not unimodal is a numerical failure
  const auto nonuni = dir.write("nonuni.yaml", R"(
emitter: {gamma: 3.2 MHz, kdx: 0.333333333333333333 pi}
drive: {power: -220 dBm}
calibration: {j_lo: -1 gamma, j_hi: 0 gamma, points: 41}
)");
  EXPECT_EQ(run_cli("calibrate --config " + nonuni.string() + " --out " + dir.str()).code, 3);

  // output directory below a regular file cannot be created
  const auto file = dir.write("plain", "x");
  EXPECT_EQ(run_cli("calibrate --config " + shipped("figS4") + " --out " + (file / "sub").string()).code, 4);
}

TEST(Cli, SpectroscopyDatasetAndManifest) {
  TempDir dir;
  const auto r = run_cli("spectroscopy --config " + shipped("fig2a") + " --threads 2 --out " + dir.str());
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("fig2a"), std::string::npos);
  const auto c = read_csv(dir.path() / "fig2a.csv");
  EXPECT_EQ(c.header, (std::vector<std::string>{"Delta", "delta", "abs_s21", "re_s21", "im_s21"}));
  ASSERT_EQ(c.rows.size(), 41u * 161u);
  // the dip pair merges into near-unity transmission at Delta = 0; at Delta = 20 MHz
  // the resonant emitter mirrors, bounded by the ideal 1/sqrt(1 + 4 Delta^2/gamma^2) = 0.080
  double at_zero = 1.0, at_edge = 1.0;
  for (const auto& row : c.rows) {
    EXPECT_NEAR(row[2], std::hypot(row[3], row[4]), 1e-12);
    if (std::abs(row[0]) < 1e-6) at_zero = std::min(at_zero, row[2]);
    if (std::abs(row[0] - 20.0) < 1e-6) at_edge = std::min(at_edge, row[2]);
  }
  EXPECT_GT(at_zero, 0.95);
  EXPECT_LT(at_edge, 0.1);

  const auto m = read_json(dir.path() / "fig2a.manifest.json");
  EXPECT_EQ(m["command"], "spectroscopy");
  EXPECT_EQ(m["config"]["sha256"], sha256_hex(read_file(shipped("fig2a"))));
  EXPECT_EQ(m["config"]["text"], read_file(shipped("fig2a")));
  ASSERT_EQ(m["outputs"].size(), 1u);
  EXPECT_EQ(m["outputs"][0]["file"], "fig2a.csv");
  EXPECT_EQ(m["outputs"][0]["sha256"], sha256_hex(read_file(dir.path() / "fig2a.csv")));
  EXPECT_EQ(m["version"], WGQED_VERSION);
  EXPECT_FALSE(fs::exists(dir.path() / "fig2a.csv.tmp"));
}

TEST(Cli, DegenerateGridGivesOneRow) {
  TempDir dir;
  const auto cfg = dir.write("one.yaml", R"(
command: spectroscopy
name: single
emitter: {gamma: 3.2 MHz}
drive: {power: -220 dBm}
grid: {Delta: 0 MHz, delta: {start: 0 MHz, stop: 0 MHz, points: 1}}
)");
  ASSERT_EQ(run_cli("spectroscopy --quiet --config " + cfg.string() + " --out " + dir.str()).code, 0);
  const auto c = read_csv(dir.path() / "single.csv");
  ASSERT_EQ(c.rows.size(), 1u);
  EXPECT_NEAR(c.rows[0][2], 1.0, 1e-6);
}

TEST(Cli, DeterministicAcrossRunsAndThreads) {
  TempDir a, b;
  const std::string cfg = " --config " + shipped("fig2b");
  ASSERT_EQ(run_cli("coupling-sweep --quiet --threads 1" + cfg + " --out " + a.str()).code, 0);
  ASSERT_EQ(run_cli("coupling-sweep --quiet --threads 3" + cfg + " --out " + b.str()).code, 0);
  for (const char* f : {"fig2b.csv", "fig2b_dips.csv"}) EXPECT_EQ(read_file(a.path() / f), read_file(b.path() / f)) << f;
  const auto ma = read_json(a.path() / "fig2b.manifest.json"), mb = read_json(b.path() / "fig2b.manifest.json");
  EXPECT_EQ(ma["outputs"], mb["outputs"]);
  EXPECT_EQ(ma["summary"], mb["summary"]);
}

TEST(Cli, CouplingSweepDipsFollowTheSplittingLaw) {
  TempDir dir;
  const auto r = run_cli("coupling-sweep --config " + shipped("fig2b") + " --out " + dir.str());
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("dips at"), std::string::npos);
  const auto c = read_csv(dir.path() / "fig2b_dips.csv");
  const double gamma = 3.2;  // MHz
  ASSERT_EQ(c.rows.size(), 4u);
  for (const auto& row : c.rows) {
    // the dephasing-broadened pair sits at +-sqrt(J^2 - gamma^2/4); within 1% of it
    const double j = row[0];
    const double expect = std::sqrt(j * j - 0.25 * gamma * gamma);
    EXPECT_NEAR(std::abs(row[1]) / expect, 1.0, 0.01) << j;
  }
}

TEST(Cli, PowerSweepPlateausAndMinimum) {
  TempDir dir;
  ASSERT_EQ(run_cli("power-sweep --quiet --config " + shipped("fig2c") + " --out " + dir.str()).code, 0);
  const auto c = read_csv(dir.path() / "fig2c.csv");
  const auto s = c.column("abs_s21");
  ASSERT_EQ(s.size(), 131u);
  // low-power end matches the linear-response value for the shipped dephasings
  waveguide::EmitterParams p;
  p.gamma_phi1 = kTwoPi * 8e3;
  p.gamma_phi2 = kTwoPi * 41e3;
  const double g1 = 0.5 * p.gamma + p.gamma_phi1, g2 = 0.5 * p.gamma + p.gamma_phi2, k = std::sqrt(0.5 * p.gamma);
  const cplx det = g1 * g2;
  const cplx lin = 1.0 + k * (-(g2 * k) / det - kI * (-(g1 * kI * k) / det));
  EXPECT_NEAR(s.front(), std::abs(lin), 1e-4);
  EXPECT_GE(s.back(), 0.97);
  int minima = 0;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) minima += s[i] < s[i - 1] && s[i] < s[i + 1];
  EXPECT_EQ(minima, 1);
}

TEST(Cli, CalibrateReportsOptimum) {
  TempDir dir;
  const auto r = run_cli("calibrate --config " + shipped("figS4") + " --out " + dir.str());
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("j_c*"), std::string::npos);
  EXPECT_NE(r.out.find("J_sigma"), std::string::npos);
  const auto m = read_json(dir.path() / "figS4.manifest.json");
  EXPECT_LT(std::abs(m["summary"]["j_sigma_over_gamma"].get<double>()), 1e-4);
  EXPECT_NEAR(m["summary"]["j_c_over_gamma"].get<double>(), -0.5, 1e-4);
  EXPECT_EQ(read_csv(dir.path() / "figS4.csv").rows.size(), 41u);
}

TEST(Cli, EmissionIdealRunAndAnalyticColumns) {
  TempDir dir;
  const auto r = run_cli("emission --config " + shipped("fig3b") + " --out " + dir.str());
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("D = "), std::string::npos);
  const auto c = read_csv(dir.path() / "fig3b.csv");
  ASSERT_EQ(c.rows.size(), 2001u);
  double left = 0.0, right = 0.0, peak = 0.0, field = 0.0, pop = 0.0;
  for (const auto& row : c.rows) {
    left = std::max(left, std::hypot(row[c.col("re_a_left")], row[c.col("im_a_left")]));
    right = std::max(right, std::hypot(row[c.col("re_a_right")], row[c.col("im_a_right")]));
    const double ar = row[c.col("re_a_right_analytic")], ai = row[c.col("im_a_right_analytic")];
    peak = std::max(peak, std::hypot(ar, ai));
    field = std::max(field, std::hypot(row[c.col("re_a_right")] - ar, row[c.col("im_a_right")] - ai));
    pop = std::max(pop, std::abs(row[c.col("p_q3")] - row[c.col("p_q3_analytic")]));
    pop = std::max(pop, std::abs(row[c.col("p_q4")] - row[c.col("p_q4_analytic")]));
  }
  EXPECT_LT(left, 1e-8 * right);
  EXPECT_LT(field / peak, 1e-6);
  EXPECT_LT(pop, 1e-6);

  ASSERT_EQ(run_cli("emission --quiet --config " + shipped("fig3_psi_plus") + " --out " + dir.str()).code, 0);
  const auto m = read_json(dir.path() / "fig3_psi_plus.manifest.json");
  const double d = m["summary"]["directionality"].get<double>();
  EXPECT_GT(d, 0.9);
  EXPECT_LT(d, 1.0);
}

TEST(Cli, ChevronPeriodVisibilityAndSymmetry) {
  TempDir dir;
  const auto cfg = dir.write("chev.yaml", R"(
command: chevron
name: chev
coupler:
  omega_i: 4.80 GHz
  omega_j: 4.93 GHz
  g_eff: 1.28 MHz
chevron:
  offsets: [-3 MHz, -1.5 MHz, 0 MHz, 1.5 MHz, 3 MHz, -6 MHz, 6 MHz]
  times: {start: 0 us, stop: 0.8 us, points: 801}
)");
  ASSERT_EQ(run_cli("chevron --quiet --config " + cfg.string() + " --out " + dir.str()).code, 0);
  const auto c = read_csv(dir.path() / "chev.csv");
  std::map<double, std::vector<std::pair<double, double>>> by;  // offset -> (t, p_sim)
  std::map<double, std::vector<double>> closed;
  for (const auto& row : c.rows) {
    by[row[0]].push_back({row[1], row[3]});
    closed[row[0]].push_back(row[2]);
  }
  const double g = kTwoPi * 1.28e6;
  // resonant column: first return to zero after the full transfer, refined by a parabola
  const auto& z = by[0.0];
  std::size_t k0 = 1;
  while (k0 + 1 < z.size() && !(z[k0].first > 0.25 && z[k0].second <= z[k0 - 1].second && z[k0].second <= z[k0 + 1].second)) ++k0;
  const double ym = z[k0 - 1].second, y0 = z[k0].second, yp = z[k0 + 1].second, h = z[1].first - z[0].first;
  const double period = z[k0].first + 0.5 * h * (ym - yp) / (ym - 2 * y0 + yp);
  EXPECT_NEAR(period * 1e-6 / (kPi / g), 1.0, 0.01);

  // visibility vs offset is Lorentzian: 1/V is linear in delta_c^2
  std::vector<double> x, v;
  for (const auto& [off, col] : by) {
    double mx = 0.0;
    for (const auto& [t, p] : col) mx = std::max(mx, p);
    x.push_back(off * off);
    v.push_back(mx);
  }
  const std::size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) sx += x[i], sy += 1 / v[i], sxx += x[i] * x[i], sxy += x[i] / v[i];
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx), icpt = (sy - slope * sx) / n;
  double mean = 0, ss_res = 0, ss_tot = 0;
  for (double y : v) mean += y / n;
  for (std::size_t i = 0; i < n; ++i) {
    const double fit = 1.0 / (icpt + slope * x[i]);
    ss_res += (v[i] - fit) * (v[i] - fit);
    ss_tot += (v[i] - mean) * (v[i] - mean);
  }
  EXPECT_GT(1.0 - ss_res / ss_tot, 0.999);

  // symmetric under delta_c -> -delta_c: exact for the closed form; the simulation
  // may differ by twice its 0.02 counter-rotating deviation from the closed form
  for (double off : {1.5, 3.0, 6.0}) {
    EXPECT_EQ(closed[off], closed[-off]);
    for (std::size_t k = 0; k < by[off].size(); ++k) EXPECT_NEAR(by[off][k].second, by[-off][k].second, 0.04);
  }
}

TEST(Cli, TomographyOutputsShotsAndSeeds) {
  TempDir dir;
  const std::string base = R"(
command: tomography
name: tomo
seed: 5
emission: {state: psi_plus, t_end: 2 us, points: 801}
tomography:
  shots: 20000
  resamples: 5
  mle_starts: 2
  save_shots: true
  reference_fidelity: 0.960
  reference_uncertainty: 0.003
)";
  const auto cfg = dir.write("tomo.yaml", base);
  const auto r = run_cli("tomography --config " + cfg.string() + " --out " + dir.str());
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("fidelity to |01>"), std::string::npos);
  EXPECT_NE(r.out.find("reference fidelity 0.960 +/- 0.003"), std::string::npos);
  const auto mom = read_csv(dir.path() / "tomo_moments.csv");
  EXPECT_EQ(mom.rows.size(), 70u);
  EXPECT_EQ(read_csv(dir.path() / "tomo_density.csv").rows.size(), 36u);
  // the ideal photon: only (0,0,1,1) is 1 and everything else is zero within 5 sigma
  for (const auto& row : mom.rows) {
    const int order = static_cast<int>(row[0] + row[1] + row[2] + row[3]);
    if (order == 0) continue;
    const bool number = row[0] == 0 && row[1] == 0 && row[2] == 1 && row[3] == 1;
    EXPECT_LT(std::hypot(row[4] - (number ? 1.0 : 0.0), row[5]), 5.0 * row[6]);
    EXPECT_NEAR(row[7], number ? 1.0 : 0.0, 1e-6);
  }
  std::ifstream shots(dir.path() / "tomo_signal.wgqs", std::ios::binary);
  const auto back = tomography::read_shots(shots);
  EXPECT_EQ(back.count(), 20000u);
  EXPECT_EQ(back.seed, 5u);
  const auto m = read_json(dir.path() / "tomo.manifest.json");
  EXPECT_EQ(m["outputs"].size(), 4u);
  EXPECT_EQ(m["seed"], 5);

  // WGQED_SEED overrides the config, --seed overrides both
  TempDir e1, e2;
  ASSERT_EQ(run_cli("tomography --quiet --config " + cfg.string() + " --out " + e1.str(), "WGQED_SEED=9").code, 0);
  ASSERT_EQ(run_cli("tomography --quiet --seed 5 --config " + cfg.string() + " --out " + e2.str(), "WGQED_SEED=9").code, 0);
  EXPECT_EQ(read_json(e1.path() / "tomo.manifest.json")["seed"], 9);
  EXPECT_NE(read_file(e1.path() / "tomo_moments.csv"), read_file(dir.path() / "tomo_moments.csv"));
  EXPECT_EQ(read_file(e2.path() / "tomo_moments.csv"), read_file(dir.path() / "tomo_moments.csv"));

  const auto few = dir.write("few.yaml", base.substr(0, base.find("shots:")) + "shots: 9999\n");
  EXPECT_EQ(run_cli("tomography --config " + few.string() + " --out " + dir.str()).code, 2);
  const auto half = dir.write("half.yaml", "emission: {state: half_plus}\ntomography: {shots: 1e4}\n");
  EXPECT_EQ(run_cli("tomography --config " + half.string() + " --out " + dir.str()).code, 2);
}

TEST(Cli, QuietSuppressesStdout) {
  TempDir dir;
  const auto r = run_cli("calibrate --quiet --config " + shipped("figS4") + " --out " + dir.str());
  EXPECT_EQ(r.code, 0);
  EXPECT_TRUE(r.out.empty());
}
