#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <json.hpp>

#ifndef AATK_BIN
#error "AATK_BIN must point at the aatk executable"
#endif

namespace {

namespace fs = std::filesystem;

/// Fresh output directory under the system temp root, removed on destruction.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("aatk_cli_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
};

int run_cli(const std::string& args) {
    const std::string cmd = std::string(AATK_BIN) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> row;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) row.push_back(cell);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

TEST_CASE("validate passes the rigid body system") {
    TempDir dir("validate_so3");
    CHECK(run_cli("validate --builtin so3_rigid_body --out " + dir.str()) == 0);
    const std::string rep = slurp(dir.path / "validate_report.txt");
    CHECK(rep.find("jacobi identity: pass") != std::string::npos);
    CHECK(rep.find("overall: pass") != std::string::npos);
}

TEST_CASE("validate passes the non-compact counterexample definition") {
    // the structure and involution are fine; only the torus stage rejects it
    TempDir dir("validate_cjl");
    CHECK(run_cli("validate --builtin cjl_counterexample --out " + dir.str()) == 0);
}

TEST_CASE("input errors exit with code 2") {
    TempDir dir("errors");
    const fs::path bad = dir.path / "bad.json";
    std::ofstream(bad) << "{ not json";
    CHECK(run_cli("validate --input " + bad.string() + " --out " + dir.str()) == 2);
    CHECK(run_cli("validate --builtin no_such_system --out " + dir.str()) == 2);
    CHECK(run_cli("validate --builtin so3_rigid_body --seed 1,2 --out " + dir.str()) == 2);
    CHECK(run_cli("validate --out " + dir.str()) == 2);
    CHECK(run_cli("periods --builtin harmonic1d --lo 0.4 --out " + dir.str()) == 2);
    CHECK(run_cli("validate --builtin so3_rigid_body --input " + bad.string() + " --out " +
                  dir.str()) == 2);
    CHECK(run_cli("no_such_command") == 2);
}

TEST_CASE("a JSON document on disk loads like the builtin it mirrors") {
    TempDir dir("input_file");
    const fs::path doc = dir.path / "sys.json";
    std::ofstream(doc) << R"({
  "dimension": 2,
  "coordinates": ["q", "p"],
  "poisson": [{"i": 0, "j": 1, "expr": "1"}],
  "functions": [{"name": "H", "expr": "(q^2 + p^2)/2"}],
  "rank": 1,
  "kind": "commutative",
  "transverse": [],
  "domain_box": {"lo": [-2.0, -2.0], "hi": [2.0, 2.0]},
  "seed": [1.0, 0.0]
})";
    CHECK(run_cli("validate --input " + doc.string() + " --out " + dir.str()) == 0);
}

TEST_CASE("periods recovers the 2*pi period of the circular oscillator") {
    TempDir dir("periods_h1d");
    CHECK(run_cli("periods --builtin harmonic1d --grid 11 --out " + dir.str()) == 0);
    const auto rows = read_csv(dir.path / "lattice.csv");
    REQUIRE(rows.size() == 12);  // header + 11 nodes
    REQUIRE(rows[0].size() == 4);
    CHECK(rows[0][0] == "H");
    CHECK(rows[0][1] == "lambda_1_1");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(std::abs(std::stod(rows[i][1]) - 2.0 * M_PI) < 1e-8);
        CHECK(rows[i][3] == "1");
    }
    const std::string rep = slurp(dir.path / "periods_report.txt");
    CHECK(rep.find("overall: pass") != std::string::npos);
}

TEST_CASE("periods recovers the unit period of the 2*pi-frequency oscillator") {
    TempDir dir("periods_u1d");
    CHECK(run_cli("periods --builtin unitfreq1d --grid 5 --out " + dir.str()) == 0);
    const auto rows = read_csv(dir.path / "lattice.csv");
    REQUIRE(rows.size() == 6);
    for (std::size_t i = 1; i < rows.size(); ++i)
        CHECK(std::abs(std::stod(rows[i][1]) - 1.0) < 1e-10);
}

TEST_CASE("periods reports the non-compact fiber and exits with failure") {
    TempDir dir("periods_cjl");
    CHECK(run_cli("periods --builtin cjl_counterexample --out " + dir.str()) == 1);
    const std::string rep = slurp(dir.path / "periods_report.txt");
    CHECK(rep.find("non-compact") != std::string::npos);
    CHECK(rep.find("overall: FAIL") != std::string::npos);
}

TEST_CASE("chart certifies the planar oscillator and emits the table") {
    TempDir dir("chart_h1d");
    CHECK(run_cli("chart --builtin harmonic1d --out " + dir.str()) == 0);
    const std::string rep = slurp(dir.path / "chart_report.txt");
    CHECK(rep.find("pass: yes") != std::string::npos);
    const auto rows = read_csv(dir.path / "chart.csv");
    REQUIRE(rows.size() >= 2);
    REQUIRE(rows[0].size() == 4);
    CHECK(rows[0][0] == "H");
    CHECK(rows[0][1] == "p_1");
    // action = primitive of the period: consecutive rows step by 2*pi * dH
    const double p0 = std::stod(rows[1][1]);
    const double p1 = std::stod(rows[2][1]);
    const double c0 = std::stod(rows[1][0]);
    const double c1 = std::stod(rows[2][0]);
    CHECK(std::abs((p1 - p0) - 2.0 * M_PI * (c1 - c0)) < 1e-9);
}

TEST_CASE("chart straightens the coupled-angle section of the double oscillator") {
    TempDir dir("chart_osc2");
    CHECK(run_cli("chart --builtin oscillator2d --straighten --grid 5 --samples 20 --out " +
                  dir.str()) == 0);
    const std::string rep = slurp(dir.path / "chart_report.txt");
    CHECK(rep.find("straightened: yes") != std::string::npos);
    CHECK(rep.find("pass: yes") != std::string::npos);
}

TEST_CASE("chart covers the rigid body with explicit grid bounds") {
    // the seed energy sits just above min H on the Casimir sphere, so the
    // window must extend upward only
    TempDir dir("chart_so3");
    CHECK(run_cli("chart --builtin so3_rigid_body --lo 0.1741 --hi 0.2142 --grid 5 "
                  "--samples 12 --out " +
                  dir.str()) == 0);
    const std::string rep = slurp(dir.path / "chart_report.txt");
    CHECK(rep.find("pass: yes") != std::string::npos);
    CHECK(rep.find("{p_i,z_k}") != std::string::npos);
}

TEST_CASE("verify runs definition checks and the chart certificate together") {
    TempDir dir("verify_nc");
    CHECK(run_cli("verify --builtin isotropic2d_nc --samples 12 --out " + dir.str()) == 0);
    const std::string val = slurp(dir.path / "validate_report.txt");
    CHECK(val.find("overall: pass") != std::string::npos);
    const std::string rep = slurp(dir.path / "verify_report.txt");
    CHECK(rep.find("kind: noncommutative") != std::string::npos);
    CHECK(rep.find("{theta_i,z_k}") != std::string::npos);
    CHECK(rep.find("fiber spread") != std::string::npos);
    CHECK(rep.find("pass: yes") != std::string::npos);
}

TEST_CASE("flow conserves the integrals along one orbit") {
    TempDir dir("flow_so3");
    CHECK(run_cli("flow --builtin so3_rigid_body --time 2.0 --out " + dir.str()) == 0);
    const auto rows = read_csv(dir.path / "flow.csv");
    REQUIRE(rows.size() == 34);  // header + 33 sample times
    REQUIRE(rows[0].size() == 5);
    CHECK(rows[0][4] == "f_drift");
    for (std::size_t i = 1; i < rows.size(); ++i)
        CHECK(std::stod(rows[i][4]) < 1e-8);
}

TEST_CASE("actions emits the table and a clean closedness certificate") {
    TempDir dir("actions_h1d");
    CHECK(run_cli("actions --builtin harmonic1d --grid 5 --out " + dir.str()) == 0);
    const std::string rep = slurp(dir.path / "actions_report.txt");
    CHECK(rep.find("closedness residual") != std::string::npos);
    CHECK(fs::exists(dir.path / "chart.csv"));
}

TEST_CASE("identical invocations produce byte-identical tables") {
    TempDir a("det_a");
    TempDir b("det_b");
    CHECK(run_cli("chart --builtin harmonic1d --grid 5 --out " + a.str()) == 0);
    CHECK(run_cli("chart --builtin harmonic1d --grid 5 --out " + b.str()) == 0);
    CHECK(slurp(a.path / "chart.csv") == slurp(b.path / "chart.csv"));
    CHECK(slurp(a.path / "chart_report.txt") == slurp(b.path / "chart_report.txt"));
}

TEST_CASE("every run writes a manifest, even a failing one") {
    TempDir dir("manifest");
    CHECK(run_cli("periods --builtin harmonic1d --grid 5 --out " + dir.str()) == 0);
    const nlohmann::json m = nlohmann::json::parse(slurp(dir.path / "manifest.json"));
    CHECK(m["command"] == "periods");
    CHECK(m["input"]["source"] == "builtin:harmonic1d");
    CHECK(m["input"]["digest"].get<std::string>().size() == 16);
    REQUIRE(m["stages"].is_array());
    for (const auto& s : m["stages"]) CHECK(s["outcome"] == "ok");
    std::vector<std::string> outs = m["outputs"];
    CHECK(std::find(outs.begin(), outs.end(), "lattice.csv") != outs.end());
    CHECK(std::find(outs.begin(), outs.end(), "periods_report.txt") != outs.end());
    CHECK(std::find(outs.begin(), outs.end(), "manifest.json") != outs.end());

    TempDir fail("manifest_fail");
    CHECK(run_cli("periods --builtin cjl_counterexample --out " + fail.str()) == 1);
    const nlohmann::json fm = nlohmann::json::parse(slurp(fail.path / "manifest.json"));
    bool saw_error = false;
    for (const auto& s : fm["stages"])
        if (s["outcome"].get<std::string>().rfind("error:", 0) == 0) saw_error = true;
    CHECK(saw_error);
}

TEST_CASE("the seed override moves the analyzed fiber") {
    TempDir dir("seed_override");
    CHECK(run_cli("periods --builtin harmonic1d --grid 3 --seed 1.2,0.0 --out " + dir.str()) ==
          0);
    const auto rows = read_csv(dir.path / "lattice.csv");
    REQUIRE(rows.size() == 4);
    CHECK(std::abs(std::stod(rows[2][0]) - 0.72) < 1e-12);  // center node H = 1.2^2/2
}
