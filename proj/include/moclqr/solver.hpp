#pragma once

// The optimization core.  For a fixed choice of region per "slot" the
// planning problem over the trajectory tree is a convex QP (the belief chain
// becomes a table of constant weights); the discrete choices are explored by
// best-first branch-and-bound with certified lower bounds from optimistic
// weight relaxations.  An exhaustive-enumeration oracle and an independent
// expected-cost evaluator provide ground truth for tests.

#include "moclqr/qp.hpp"
#include "moclqr/tree.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

namespace moclqr {

// A slot is a (tree node, local step) state whose region choice matters.
// Partition mode: one slot per non-leaf node — the state at its measurement
// time (local step Nb); region choice selects the observation table.
// Free-space-disjunction mode: additionally every other intra-segment state
// (local steps 1..Nb) must lie in one of the regions for feasibility.
struct Slot {
  int node = 0;
  int step = 0;  // local step in 1..Nb; global step = node.step_begin + step
  bool measurement = false;
};

// Canonical slot order: measurement slots by node id, then space slots by
// (node id, step).  Branch-and-bound, the oracle, and serialized assignments
// all index into this order.
std::vector<Slot> enumerate_slots(const TreeTopology& topo, CoverageMode mode);

struct RegionAssignment {
  std::vector<int> region;  // aligned with enumerate_slots order; -1 = unassigned

  static RegionAssignment unassigned(int num_slots) {
    RegionAssignment a;
    a.region.assign(num_slots, -1);
    return a;
  }
  bool complete() const {
    for (int r : region)
      if (r < 0) return false;
    return true;
  }
  int num_assigned() const {
    int count = 0;
    for (int r : region)
      if (r >= 0) ++count;
    return count;
  }
};

// Tree QP with per-node weight tables.  Decision vector: for each node, in
// node-id order, Nb interleaved [input_t, state_{t+1}] blocks; the segment's
// first state is the parent's terminal state variable (or the fixed initial
// state for the root, folded into the constant term).
struct AssembledQp {
  QpProblem qp;
  int n = 0, d = 0, Nb = 0, num_nodes = 0;
  std::vector<Vec> node_w;      // stage weight per node (exact or optimistic)
  std::vector<Vec> node_z;      // matching inverse-coordinate chain
  std::vector<char> node_exact; // 1 if every measurement on the root path is committed

  int node_base(int node) const { return node * Nb * (n + d); }
  int u_index(int node, int t) const { return node_base(node) + t * (n + d); }
  int x_index(int node, int t) const { return node_base(node) + (t - 1) * (n + d) + d; }
};

// Builds the tree QP for a (possibly partial) assignment: committed slots get
// exact weights and membership rows; weights downstream of uncommitted
// measurement slots drop to their elementwise minimum achievable value, and
// uncommitted space slots contribute no membership rows.  For complete
// assignments this is the exact fixed-assignment program.
AssembledQp assemble_qp(const ScenarioSpec& spec, const TreeTopology& topo,
                        const std::vector<Slot>& slots, const RegionAssignment& assign,
                        const std::optional<Vec>& x0_override = {},
                        const std::optional<Vec>& z0_override = {});

// Exact program for a complete assignment (error otherwise).
AssembledQp assemble_fixed_assignment_qp(const ScenarioSpec& spec, const TreeTopology& topo,
                                         const std::vector<Slot>& slots,
                                         const RegionAssignment& assign);

// Optimal value of the relaxation for a partial assignment: a certified
// lower bound on every completion; +infinity when the relaxation is
// infeasible (prune).
double lower_bound(const ScenarioSpec& spec, const TreeTopology& topo,
                   const std::vector<Slot>& slots, const RegionAssignment& assign,
                   const QpSettings& qp_settings = {});

enum class SolveStatus { Optimal, Infeasible, BudgetExceeded };

struct SolverStats {
  std::int64_t bnb_nodes = 0;  // branch-and-bound nodes expanded
  std::int64_t qps_solved = 0;
  double wall_time_s = 0.0;
  double gap = 0.0;  // absolute bound gap at exit
};

struct Solution {
  SolveStatus status = SolveStatus::Infeasible;
  TrajectoryTree tree;
  RegionAssignment assignment;
  double cost = std::numeric_limits<double>::infinity();
  SolverStats stats;
};

struct SolveOptions {
  int workers = 1;
  double budget_s = std::numeric_limits<double>::infinity();
  std::int64_t max_bnb_nodes = std::numeric_limits<std::int64_t>::max();
  double gap_coeff = 1e-6;  // absolute gap target: gap_coeff * (1 + |incumbent|)
  QpSettings qp;
};

// Global optimum of the mixed-integer program by best-first branch-and-bound
// over region assignments.  Requires a static environment.
Solution solve_micp(const ScenarioSpec& spec, const SolveOptions& opts = {});

// Fast path when every region shares one observation table (or R = 1) in
// partition mode: no binaries remain, a single QP solves the problem.  The
// initial state / inverse belief can be overridden to probe the value
// function V(x0, z0) directly.
Solution solve_convex_constant_obs(const ScenarioSpec& spec, const SolveOptions& opts = {},
                                   const std::optional<Vec>& x0_override = {},
                                   const std::optional<Vec>& z0_override = {});

// Brute force: enumerates every complete assignment over the slot table and
// keeps the best leaf QP.  Guarded: the assignment space must not exceed 1e5.
Solution enumerate_oracle(const ScenarioSpec& spec, const SolveOptions& opts = {});

// Independent expected-cost recomputation in normalized-belief coordinates:
// propagates unnormalized beliefs forward through the tree (general
// transition models supported) and accumulates likelihood-weighted stage
// costs.  Cross-checks the solver objective, which is built from inverse
// coordinates.
double evaluate_cost(const ScenarioSpec& spec, const TrajectoryTree& tree,
                     const RegionAssignment& assign);

}  // namespace moclqr
