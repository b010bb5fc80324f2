#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

// End-to-end tests of the installed command-line tool: every subcommand is
// exercised through a real process, outputs are re-parsed and re-validated
// through the library, and the documented exit codes are pinned.

#include "moclqr/model.hpp"
#include "moclqr/tree_json.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace fs = std::filesystem;
using namespace moclqr;

namespace {

const std::string kCli = MOCLQR_CLI_PATH;
const std::string kScenarioDir = MOCLQR_SCENARIO_DIR;

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "moclqr_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path out = work_dir() / ("stdout_" + std::to_string(counter) + ".txt");
  const fs::path err = work_dir() / ("stderr_" + std::to_string(counter) + ".txt");
  ++counter;
  const std::string cmd =
      "\"" + kCli + "\" " + args + " > \"" + out.string() + "\" 2> \"" + err.string() + "\"";
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string scenario(const std::string& name) { return kScenarioDir + "/" + name; }

std::string tmp_file(const std::string& name) { return (work_dir() / name).string(); }

double parse_summary_cost(const std::string& out) {
  const auto pos = out.find("cost=");
  REQUIRE(pos != std::string::npos);
  return std::stod(out.substr(pos + 5));
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, ',');) fields.push_back(f);
  return fields;
}

Polytope box(int dim, double radius) {
  Polytope p;
  p.H.resize(2 * dim, dim);
  p.H << Eigen::MatrixXd::Identity(dim, dim), -Eigen::MatrixXd::Identity(dim, dim);
  p.h = Vec::Constant(2 * dim, radius);
  return p;
}

// The measurement state of a branching node: the segment-boundary state,
// owned by the node as its (Nb+1)-th entry after unpacking.
Vec measurement_state(const CheckedTree& ct, int node) {
  return ct.x[static_cast<size_t>(node)].back();
}

}  // namespace

TEST_CASE("plan solves a scenario, prints a summary, and writes a tree that re-validates") {
  const std::string tree_path = tmp_file("toy_tree.json");
  const RunResult r =
      run_cli("plan --scenario " + scenario("toy.json") + " --out " + tree_path);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.rfind("cost=", 0) == 0);
  CHECK(r.out.find(" nodes=") != std::string::npos);
  CHECK(r.out.find(" qps=") != std::string::npos);
  CHECK(r.out.find(" gap=") != std::string::npos);
  const double cost = parse_summary_cost(r.out);
  CHECK(std::abs(cost - 31.865599233151379) <= 1e-9);

  const ScenarioSpec spec = load_scenario(scenario("toy.json"));
  const TreeFile file = load_tree_json(tree_path);
  const CheckedTree ct = validate_tree_file(spec, file);
  CHECK(std::abs(ct.cost - cost) <= 1e-12 * (1.0 + std::abs(cost)));
  CHECK(ct.gap <= 1e-6 * (1.0 + std::abs(cost)));
}

TEST_CASE("belief and observation overrides change the optimum") {
  const RunResult base = run_cli("plan --scenario " + scenario("toy.json"));
  REQUIRE(base.exit_code == 0);
  const double c0 = parse_summary_cost(base.out);

  const RunResult skewed =
      run_cli("plan --scenario " + scenario("toy.json") + " --b0 0.9,0.1");
  REQUIRE(skewed.exit_code == 0);
  CHECK(std::abs(parse_summary_cost(skewed.out) - c0) > 1e-6);

  const RunResult blurred =
      run_cli("plan --scenario " + scenario("toy.json") + " --p1 0.6 --p2 0.6");
  REQUIRE(blurred.exit_code == 0);
  CHECK(std::abs(parse_summary_cost(blurred.out) - c0) > 1e-6);
}

TEST_CASE("parse failures exit with code 2") {
  SUBCASE("malformed JSON") {
    const std::string bad = tmp_file("garbage.json");
    std::ofstream(bad) << "{ this is not json";
    CHECK(run_cli("plan --scenario " + bad).exit_code == 2);
  }
  SUBCASE("missing file") {
    CHECK(run_cli("plan --scenario " + tmp_file("no_such_file.json")).exit_code == 2);
  }
  SUBCASE("unknown flag") {
    CHECK(run_cli("plan --scenario " + scenario("toy.json") + " --frobnicate").exit_code == 2);
  }
  SUBCASE("malformed belief override") {
    CHECK(run_cli("plan --scenario " + scenario("toy.json") + " --b0 0.3,oops").exit_code == 2);
  }
}

TEST_CASE("validation failures exit with code 3") {
  ScenarioSpec spec = load_scenario(scenario("toy.json"));
  spec.b0 = Vec(2);
  spec.b0 << 0.7, 0.7;
  const std::string bad = tmp_file("bad_belief.json");
  save_scenario(spec, bad);
  const RunResult r = run_cli("plan --scenario " + bad);
  CHECK(r.exit_code == 3);
  CHECK(!r.err.empty());
}

TEST_CASE("infeasible instances exit with code 4") {
  // A state forced through the wall: the position leaves the box on the
  // first step no matter the input (same construction the solver tests use).
  ScenarioSpec spec = load_scenario(scenario("toy.json"));
  spec.state_set = box(2, 2.0);
  spec.state_set.h(2) = 1.0;
  spec.state_set.h(3) = 1.0;
  spec.input_set = box(1, 0.1);
  spec.partition.regions = {spec.state_set};
  spec.obs.tables.resize(1);
  spec.horizon.N = 2;
  spec.horizon.Nb = 1;
  spec.x0 = Vec(2);
  spec.x0 << 1.5, 1.0;
  validate(spec);
  const std::string wall = tmp_file("wall.json");
  save_scenario(spec, wall);

  const RunResult r = run_cli("plan --scenario " + wall);
  CHECK(r.exit_code == 4);
  CHECK(r.err.find("no feasible plan") != std::string::npos);
}

TEST_CASE("an exhausted budget exits with code 5") {
  const RunResult r = run_cli("plan --scenario " + scenario("scenario1_p085.json") +
                              " --nb 15 --budget-s 0.02");
  CHECK(r.exit_code == 5);
  CHECK(r.err.find("budget") != std::string::npos);
}

TEST_CASE("simulate is reproducible for a fixed seed and consistent with the plan cost") {
  const std::string out_a = tmp_file("rollouts_a.json");
  const std::string out_b = tmp_file("rollouts_b.json");
  const std::string args =
      "simulate --scenario " + scenario("toy.json") + " --rollouts 500 --seed 7 --out ";
  const RunResult a = run_cli(args + out_a);
  const RunResult b = run_cli(args + out_b);
  REQUIRE(a.exit_code == 0);
  REQUIRE(b.exit_code == 0);
  CHECK(a.out == b.out);
  CHECK(slurp(out_a) == slurp(out_b));

  const nlohmann::json doc = nlohmann::json::parse(slurp(out_a));
  CHECK(doc.at("seed").get<std::uint64_t>() == 7);
  CHECK(doc.at("rollouts").get<int>() == 500);
  REQUIRE(doc.at("records").size() == 500);
  const double planner = doc.at("planner_cost").get<double>();
  const double mean = doc.at("mean_cost").get<double>();
  const double se = doc.at("std_error").get<double>();
  CHECK(std::abs(mean - planner) <= 5.0 * se);

  const std::string out_c = tmp_file("rollouts_c.json");
  const RunResult c = run_cli("simulate --scenario " + scenario("toy.json") +
                              " --rollouts 500 --seed 8 --out " + out_c);
  REQUIRE(c.exit_code == 0);
  CHECK(slurp(out_a) != slurp(out_c));
}

TEST_CASE("oracle subcommand cross-checks the solver and catches corruption") {
  const RunResult ok = run_cli("oracle --scenario " + scenario("toy.json"));
  CHECK(ok.exit_code == 0);
  CHECK(ok.out.find("PASS") != std::string::npos);
  CHECK(ok.out.find("FAIL") == std::string::npos);

  const RunResult bad =
      run_cli("oracle --scenario " + scenario("toy.json") + " --test-corrupt-weight");
  CHECK(bad.exit_code == 1);
  CHECK(bad.out.find("FAIL") != std::string::npos);
}

TEST_CASE("table1 emits the pinned CSV layout with monotone costs") {
  const std::string csv_path = tmp_file("toy_table.csv");
  const RunResult r = run_cli("table1 --scenario " + scenario("toy.json") +
                              " --nb-list 4,2,1 --out " + csv_path);
  REQUIRE(r.exit_code == 0);

  const std::vector<std::string> lines = split_lines(slurp(csv_path));
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "Nb,P,cost,time_s,gap");

  const std::vector<int> want_nb = {4, 2, 1};
  const std::vector<int> want_p = {1, 2, 4};
  const std::vector<double> want_cost = {46.658676383788183, 31.865599233151379,
                                         24.090804207574237};
  for (size_t i = 0; i < 3; ++i) {
    CAPTURE(i);
    const std::vector<std::string> f = split_csv(lines[i + 1]);
    REQUIRE(f.size() == 5);
    CHECK(std::stoi(f[0]) == want_nb[i]);
    CHECK(std::stoi(f[1]) == want_p[i]);
    CHECK(std::abs(std::stod(f[2]) - want_cost[i]) <= 1e-9 * (1.0 + want_cost[i]));
    CHECK(std::stod(f[3]) >= 0.0);
    CHECK(std::stod(f[4]) <= 1e-6 * (1.0 + want_cost[i]));
  }
  // Finer branching never costs more.
  CHECK(want_cost[0] >= want_cost[1]);
  CHECK(want_cost[1] >= want_cost[2]);

  // The same rows are printed to stdout.
  CHECK(r.out.find("Nb,P,cost,time_s,gap") != std::string::npos);
}

namespace {

// Shared harness for the two navigation priors: plan at reduced scale,
// re-validate the tree, and return it with its scenario.
CheckedTree plan_navigation(const std::string& file, ScenarioSpec& spec_out) {
  const std::string tree_path = tmp_file("nav_" + file);
  const RunResult r = run_cli("plan --scenario " + scenario(file) +
                              " --horizon 15 --nb 5 --workers 4 --out " + tree_path);
  REQUIRE(r.exit_code == 0);
  spec_out = load_scenario(scenario(file));
  const TreeFile tf = load_tree_json(tree_path);
  return validate_tree_file(spec_out, tf);
}

void check_obstacles_avoided(const ScenarioSpec& spec, const CheckedTree& ct) {
  REQUIRE(!spec.obstacles.empty());
  for (size_t node = 0; node < ct.x.size(); ++node)
    for (const Vec& x : ct.x[node])
      for (const Polytope& obstacle : spec.obstacles) {
        // Positive violation = at least one face strictly separates the state.
        CHECK(obstacle.violation(x) > 1e-6);
      }
}

}  // namespace

TEST_CASE("an even prior defers measurement to the high-accuracy far regions") {
  ScenarioSpec spec;
  const CheckedTree ct = plan_navigation("scenario2_b0_50_50.json", spec);
  check_obstacles_avoided(spec, ct);

  int branching_nodes = 0;
  for (int node = 0; node < ct.topo.num_nodes(); ++node) {
    if (ct.topo.nodes[static_cast<size_t>(node)].is_leaf()) continue;
    ++branching_nodes;
    const auto region = region_of_state(spec.partition, measurement_state(ct, node));
    REQUIRE(region.has_value());
    // Regions 2 and 3 are the two far half-spaces with the sharpest sensor.
    CHECK((*region == 2 || *region == 3));
  }
  CHECK(branching_nodes >= 1);
}

TEST_CASE("a confident prior cuts through the corridor and measures there first") {
  ScenarioSpec spec;
  const CheckedTree ct = plan_navigation("scenario2_b0_80_20.json", spec);
  check_obstacles_avoided(spec, ct);

  // The root's measurement happens mid-corridor (region 1), where the sensor
  // already beats the starting region and the tight input bound rules out
  // reaching the far regions before the first branch.
  const auto root_region = region_of_state(spec.partition, measurement_state(ct, 0));
  REQUIRE(root_region.has_value());
  CHECK(*root_region == 1);
}
