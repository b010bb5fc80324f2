#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "instance_gen.hpp"
#include "moclqr/solver.hpp"
#include "test_util.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

using namespace moclqr;
using testgen::box;
using testgen::identity;
using testgen::random_instance;
using testgen::with_halfspace;

namespace {

const std::string kScenarioDir = MOCLQR_SCENARIO_DIR;
constexpr double kInf = std::numeric_limits<double>::infinity();

ScenarioSpec load_toy() { return load_scenario(kScenarioDir + "/toy.json"); }

double relative_diff(double a, double b) { return std::abs(a - b) / (1.0 + std::abs(a)); }

}  // namespace

TEST_CASE("toy optimum matches exhaustive enumeration end to end") {
  const ScenarioSpec spec = load_toy();
  const Solution sol = solve_micp(spec);
  REQUIRE(sol.status == SolveStatus::Optimal);

  // Frozen from exhaustive enumeration over both measurement-region choices.
  CHECK(sol.cost == doctest::Approx(31.865599233151379).epsilon(1e-10));
  REQUIRE(sol.assignment.region.size() == 1);
  CHECK(sol.assignment.region[0] == 0);
  CHECK(sol.stats.gap >= 0.0);
  CHECK(sol.stats.gap <= 1e-6 * (1.0 + std::abs(sol.cost)));

  const Solution brute = enumerate_oracle(spec);
  REQUIRE(brute.status == SolveStatus::Optimal);
  CHECK(relative_diff(sol.cost, brute.cost) <= 1e-9);
  CHECK(sol.assignment.region == brute.assignment.region);

  const double recomputed = evaluate_cost(spec, sol.tree, sol.assignment);
  CHECK(relative_diff(recomputed, sol.cost) <= 1e-8);
}

TEST_CASE("branch-and-bound results do not depend on the worker count") {
  const ScenarioSpec spec = load_toy();
  SolveOptions one, four;
  one.workers = 1;
  four.workers = 4;
  const Solution a = solve_micp(spec, one);
  const Solution b = solve_micp(spec, one);
  const Solution c = solve_micp(spec, four);
  CHECK(a.cost == b.cost);
  CHECK(a.cost == c.cost);
  CHECK(a.assignment.region == b.assignment.region);
  CHECK(a.assignment.region == c.assignment.region);
}

TEST_CASE("measuring more often never hurts the optimal expected cost") {
  ScenarioSpec spec = load_toy();
  std::vector<double> costs;
  for (int nb : {4, 2, 1}) {
    spec.horizon.Nb = nb;
    validate(spec);
    const Solution sol = solve_micp(spec);
    REQUIRE(sol.status == SolveStatus::Optimal);
    const Solution brute = enumerate_oracle(spec);
    CHECK(relative_diff(sol.cost, brute.cost) <= 1e-9);
    costs.push_back(sol.cost);
  }
  // Plans with a shorter branch interval contain every plan with a longer
  // one, so the optimal value is nonincreasing along divisor refinements.
  CHECK(costs[0] >= costs[1] - 1e-9);
  CHECK(costs[1] >= costs[2] - 1e-9);
}

TEST_CASE("a single-segment tree is one weighted tracking program") {
  ScenarioSpec spec = load_toy();
  spec.horizon.Nb = 4;  // P = 1: no measurements, no binaries
  validate(spec);
  const Solution sol = solve_micp(spec);
  REQUIRE(sol.status == SolveStatus::Optimal);

  const TreeTopology topo = build_topology(spec.horizon, spec.obs.num_obs);
  REQUIRE(topo.num_nodes() == 1);
  const std::vector<Slot> slots = enumerate_slots(topo, spec.partition.mode);
  REQUIRE(slots.empty());
  const AssembledQp direct = assemble_fixed_assignment_qp(
      spec, topo, slots, RegionAssignment::unassigned(0));
  const QpSolution qp = solve_qp(direct.qp);
  REQUIRE(qp.status == QpStatus::Optimal);
  CHECK(relative_diff(sol.cost, qp.objective) <= 1e-9);
}

TEST_CASE("solver equals brute force on randomized small instances") {
  std::mt19937_64 rng(0x7a11bea7u);
  SolveOptions opts;
  opts.workers = 2;
  for (int trial = 0; trial < 10; ++trial) {
    CAPTURE(trial);
    const ScenarioSpec spec = random_instance(rng, 4);
    const Solution sol = solve_micp(spec, opts);
    REQUIRE(sol.status == SolveStatus::Optimal);
    const Solution brute = enumerate_oracle(spec);
    REQUIRE(brute.status == SolveStatus::Optimal);
    CHECK(relative_diff(sol.cost, brute.cost) <= 1e-6);

    const double recomputed = evaluate_cost(spec, sol.tree, sol.assignment);
    CHECK(relative_diff(recomputed, sol.cost) <= 1e-8);

    SolveOptions serial;
    serial.workers = 1;
    const Solution again = solve_micp(spec, serial);
    CHECK(again.cost == sol.cost);
    CHECK(again.assignment.region == sol.assignment.region);
  }
}

TEST_CASE("relaxation bounds never exceed any completion") {
  std::mt19937_64 rng(0x10e4b0u);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    CAPTURE(trial);
    const ScenarioSpec spec = random_instance(rng, 3);
    const TreeTopology topo = build_topology(spec.horizon, spec.obs.num_obs);
    const std::vector<Slot> slots = enumerate_slots(topo, spec.partition.mode);
    if (slots.empty()) continue;

    RegionAssignment partial = RegionAssignment::unassigned(static_cast<int>(slots.size()));
    for (int& r : partial.region) {
      const double draw = testutil::uniform01(rng);
      if (draw < 0.5) r = draw < 0.25 ? 0 : 1;
    }
    const double lb = lower_bound(spec, topo, slots, partial);

    // Exhaustive minimum over all completions of the partial assignment.
    double best = kInf;
    std::vector<int> open;
    for (std::size_t i = 0; i < partial.region.size(); ++i)
      if (partial.region[i] < 0) open.push_back(static_cast<int>(i));
    const int R = spec.num_regions();
    std::vector<int> counter(open.size(), 0);
    while (true) {
      RegionAssignment complete = partial;
      for (std::size_t i = 0; i < open.size(); ++i) complete.region[open[i]] = counter[i];
      const AssembledQp qp = assemble_fixed_assignment_qp(spec, topo, slots, complete);
      const QpSolution res = solve_qp(qp.qp);
      if (res.status == QpStatus::Optimal) best = std::min(best, res.objective);

      std::size_t pos = 0;
      while (pos < counter.size() && ++counter[pos] == R) counter[pos++] = 0;
      if (pos == counter.size()) break;
      if (counter.empty()) break;
    }

    if (std::isfinite(best)) {
      CHECK(lb <= best + 1e-6 * (1.0 + std::abs(best)));
      ++checked;
    }

    // A complete assignment's bound is exact: it is that assignment's value.
    RegionAssignment full = partial;
    for (int& r : full.region)
      if (r < 0) r = 0;
    const AssembledQp qp = assemble_fixed_assignment_qp(spec, topo, slots, full);
    const QpSolution res = solve_qp(qp.qp);
    if (res.status == QpStatus::Optimal)
      CHECK(relative_diff(lower_bound(spec, topo, slots, full), res.objective) <= 1e-9);
  }
  CHECK(checked >= 80);  // the generator should almost always be feasible
}

TEST_CASE("value function is midpoint-convex in state and inverse belief") {
  ScenarioSpec spec = load_toy();
  spec.obs.tables[1] = spec.obs.tables[0];  // one shared table: no binaries
  validate(spec);

  std::mt19937_64 rng(0xc0fe11u);
  auto value = [&spec](const Vec& x0, const Vec& z0) {
    const Solution sol = solve_convex_constant_obs(spec, {}, x0, z0);
    REQUIRE(sol.status == SolveStatus::Optimal);
    return sol.cost;
  };
  for (int trial = 0; trial < 100; ++trial) {
    CAPTURE(trial);
    Vec xa(2), xb(2), za(2), zb(2);
    xa << testutil::uniform(rng, -2.0, 2.0), testutil::uniform(rng, -1.0, 1.0);
    xb << testutil::uniform(rng, -2.0, 2.0), testutil::uniform(rng, -1.0, 1.0);
    const double ba = testutil::uniform(rng, 0.2, 0.8);
    const double bb = testutil::uniform(rng, 0.2, 0.8);
    za << 1.0 / ba, 1.0 / (1.0 - ba);
    zb << 1.0 / bb, 1.0 / (1.0 - bb);

    const double va = value(xa, za);
    const double vb = value(xb, zb);
    const double vm = value(0.5 * (xa + xb), 0.5 * (za + zb));
    CHECK(vm <= 0.5 * (va + vb) + 1e-6);
  }
}

TEST_CASE("identical tables collapse to one convex program") {
  ScenarioSpec spec = load_toy();
  spec.obs.tables[1] = spec.obs.tables[0];
  validate(spec);

  const Solution fast = solve_convex_constant_obs(spec);
  const Solution micp = solve_micp(spec);
  REQUIRE(fast.status == SolveStatus::Optimal);
  REQUIRE(micp.status == SolveStatus::Optimal);
  CHECK(relative_diff(fast.cost, micp.cost) <= 1e-8);
}

TEST_CASE("uninformative observations yield coinciding sibling branches") {
  ScenarioSpec spec = load_toy();
  Mat uniform(2, 2);
  uniform << 0.5, 0.5, 0.5, 0.5;
  spec.obs.tables = {uniform, uniform};
  validate(spec);

  const Solution micp = solve_micp(spec);
  REQUIRE(micp.status == SolveStatus::Optimal);

  // A coin-flip observation never changes the belief, so the plan cannot
  // depend on its outcome.
  const auto& topo = micp.tree.topo;
  for (const TreeNode& node : topo.nodes) {
    if (node.is_leaf()) continue;
    for (std::size_t c = 1; c < node.children.size(); ++c) {
      const int a = node.children[0];
      const int b = node.children[c];
      for (int t = 0; t <= topo.schedule.Nb; ++t)
        CHECK((micp.tree.x[a][t] - micp.tree.x[b][t]).lpNorm<Eigen::Infinity>() <= 1e-6);
      for (int t = 0; t < topo.schedule.Nb; ++t)
        CHECK((micp.tree.u[a][t] - micp.tree.u[b][t]).lpNorm<Eigen::Infinity>() <= 1e-6);
    }
  }
}

TEST_CASE("single-region scenarios take the convex fast path") {
  ScenarioSpec spec = load_toy();
  spec.partition.regions.resize(1);
  spec.partition.regions[0] = box(2, 10.0);
  spec.partition.regions[0].h(2) = 5.0;
  spec.partition.regions[0].h(3) = 5.0;
  spec.obs.tables.resize(1);
  validate(spec);

  const Solution fast = solve_convex_constant_obs(spec);
  const Solution micp = solve_micp(spec);
  REQUIRE(fast.status == SolveStatus::Optimal);
  REQUIRE(micp.status == SolveStatus::Optimal);
  CHECK(relative_diff(fast.cost, micp.cost) <= 1e-8);
}

TEST_CASE("starting at a shared goal costs nothing") {
  ScenarioSpec spec = load_toy();
  const Vec origin = Vec::Zero(2);
  const Vec no_input = Vec::Zero(1);
  spec.cost.x_goal = {origin, origin};
  spec.cost.u_goal = {no_input, no_input};
  spec.x0 = origin;
  validate(spec);

  const Solution sol = solve_micp(spec);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(std::abs(sol.cost) <= 1e-9);
}

TEST_CASE("exhausted budgets surface as a status, not an exception") {
  const ScenarioSpec spec = load_toy();
  SolveOptions opts;
  opts.budget_s = 0.0;
  CHECK(solve_micp(spec, opts).status == SolveStatus::BudgetExceeded);

  SolveOptions nodes;
  nodes.max_bnb_nodes = 0;
  CHECK(solve_micp(spec, nodes).status == SolveStatus::BudgetExceeded);
}

TEST_CASE("oracle refuses assignment spaces beyond its guard") {
  ScenarioSpec spec = load_toy();
  spec.horizon.N = 6;
  spec.horizon.Nb = 1;  // 31 tree nodes, 2^31 assignments
  validate(spec);
  CHECK_THROWS_WITH_AS(enumerate_oracle(spec),
                       doctest::Contains("guard"), ValidationError);
}

TEST_CASE("infeasible scenarios are reported through the status") {
  // A state forced through the wall: the position leaves the box on the
  // first step no matter the input.
  ScenarioSpec spec = load_toy();
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

  CHECK(solve_micp(spec).status == SolveStatus::Infeasible);
  CHECK(enumerate_oracle(spec).status == SolveStatus::Infeasible);
}
