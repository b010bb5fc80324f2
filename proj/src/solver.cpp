#include "moclqr/belief.hpp"
#include "moclqr/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <queue>
#include <stdexcept>
#include <thread>
#include <vector>

namespace moclqr {

namespace {

constexpr double kMembershipTol = 1e-8;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Exact belief chains for a complete assignment: z by inverse updates, v by
// unnormalized updates (independent arithmetic, reciprocal by construction).
struct Chains {
  std::vector<Vec> z, v, b;
};

Chains weight_chains(const ScenarioSpec& spec, const TreeTopology& topo,
                     const std::vector<Slot>& slots, const RegionAssignment& assign,
                     const Vec& z0) {
  std::vector<int> meas_of(topo.num_nodes(), -1);
  for (size_t s = 0; s < slots.size(); ++s)
    if (slots[s].measurement) meas_of[slots[s].node] = static_cast<int>(s);

  Chains ch;
  ch.z.assign(topo.num_nodes(), Vec());
  ch.v.assign(topo.num_nodes(), Vec());
  ch.b.assign(topo.num_nodes(), Vec());
  ch.z[0] = z0;
  ch.v[0] = z0.cwiseInverse();
  for (const auto& node : topo.nodes) {
    ch.b[node.id] = ch.v[node.id] / ch.v[node.id].sum();
    if (node.is_leaf()) continue;
    const int r = assign.region[meas_of[node.id]];
    for (int o = 0; o < spec.obs.num_obs; ++o) {
      const int child = node.children[o];
      ch.z[child] = inverse_update(spec.obs, InverseBelief{ch.z[node.id]}, r, o).z;
      ch.v[child] =
          unnormalized_update(spec.obs, spec.trans, UnnormalizedBelief{ch.v[node.id]}, r, o).v;
    }
  }
  return ch;
}

TrajectoryTree extract_tree(const ScenarioSpec& spec, const TreeTopology& topo,
                            const std::vector<Slot>& slots, const RegionAssignment& assign,
                            const Vec& xsol, double cost, const Vec& x0, const Vec& z0) {
  const int n = spec.system.state_dim();
  const int d = spec.system.input_dim();
  const int Nb = topo.schedule.Nb;
  const int stride = Nb * (n + d);
  const auto x_index = [&](int node, int t) { return node * stride + (t - 1) * (n + d) + d; };
  const auto u_index = [&](int node, int t) { return node * stride + t * (n + d); };

  TrajectoryTree tree;
  tree.topo = topo;
  tree.cost = cost;
  tree.x.resize(topo.num_nodes());
  tree.u.resize(topo.num_nodes());
  for (const auto& node : topo.nodes) {
    auto& xs = tree.x[node.id];
    auto& us = tree.u[node.id];
    xs.resize(Nb + 1);
    us.resize(Nb);
    xs[0] = (node.parent < 0) ? x0 : tree.x[node.parent][Nb];
    for (int t = 1; t <= Nb; ++t) xs[t] = xsol.segment(x_index(node.id, t), n);
    for (int t = 0; t < Nb; ++t) us[t] = xsol.segment(u_index(node.id, t), d);
  }
  const Chains ch = weight_chains(spec, topo, slots, assign, z0);
  tree.z = ch.z;
  tree.v = ch.v;
  tree.belief = ch.b;
  return tree;
}

struct EvalResult {
  QpStatus qp_status = QpStatus::MaxIterations;
  double objective = std::numeric_limits<double>::infinity();
  bool candidate = false;       // exact-cost feasible solution found
  RegionAssignment completed;   // valid when candidate
  Vec xsol;                     // valid when candidate
  int branch_slot = -1;         // valid when Optimal and not candidate
  int qps_used = 0;
};

// Solve one branch-and-bound node's relaxation and classify the outcome.
EvalResult evaluate_node(const ScenarioSpec& spec, const TreeTopology& topo,
                         const std::vector<Slot>& slots, const RegionAssignment& assign,
                         const QpSettings& settings) {
  EvalResult res;
  const AssembledQp aqp = assemble_qp(spec, topo, slots, assign);
  QpSolution sol = solve_qp(aqp.qp, settings);
  res.qps_used = 1;
  if (sol.status == QpStatus::MaxIterations) {
    QpSettings harder = settings;
    harder.max_iter *= 4;
    sol = solve_qp(aqp.qp, harder);
    ++res.qps_used;
  }
  res.qp_status = sol.status;
  if (sol.status != QpStatus::Optimal) return res;
  res.objective = sol.objective;

  bool meas_done = true;
  int first_meas = -1;
  for (size_t s = 0; s < slots.size(); ++s) {
    if (slots[s].measurement && assign.region[s] < 0) {
      meas_done = false;
      first_meas = static_cast<int>(s);
      break;
    }
  }
  if (!meas_done) {
    res.branch_slot = first_meas;
    return res;
  }

  // All weights are exact now; if every unassigned space slot's state already
  // sits in some region, this relaxation value is the exact cost of a
  // feasible completion.
  RegionAssignment completed = assign;
  bool feasible = true;
  double worst_violation = -1.0;
  int worst_slot = -1;
  for (size_t s = 0; s < slots.size(); ++s) {
    if (assign.region[s] >= 0) continue;
    const Vec x = sol.x.segment(
        slots[s].node * aqp.Nb * (aqp.n + aqp.d) + (slots[s].step - 1) * (aqp.n + aqp.d) + aqp.d,
        aqp.n);
    int chosen = -1;
    double min_violation = std::numeric_limits<double>::infinity();
    for (int r = 0; r < spec.partition.count(); ++r) {
      const double viol = spec.partition.regions[r].violation(x);
      if (viol < min_violation) min_violation = viol;
      if (viol <= kMembershipTol) {
        chosen = r;
        break;  // lowest index wins
      }
    }
    if (chosen >= 0) {
      completed.region[s] = chosen;
    } else {
      feasible = false;
      if (min_violation > worst_violation) {
        worst_violation = min_violation;
        worst_slot = static_cast<int>(s);
      }
    }
  }
  if (feasible) {
    res.candidate = true;
    res.completed = std::move(completed);
    res.xsol = sol.x;
  } else {
    res.branch_slot = worst_slot;
  }
  return res;
}

void require_static(const ScenarioSpec& spec, const char* what) {
  if (!spec.trans.is_static)
    throw ValidationError(std::string(what) + " requires a static environment");
}

void cross_check_cost(const ScenarioSpec& spec, Solution& solution) {
  const double recomputed = evaluate_cost(spec, solution.tree, solution.assignment);
  if (std::abs(recomputed - solution.cost) > 1e-6 * (1.0 + std::abs(solution.cost)))
    throw std::logic_error("solver objective disagrees with its independent re-evaluation");
}

}  // namespace

Solution solve_micp(const ScenarioSpec& spec, const SolveOptions& opts) {
  validate(spec);
  require_static(spec, "solve_micp");
  const auto t0 = Clock::now();
  const TreeTopology topo = build_topology(spec.horizon, spec.obs.num_obs);
  const std::vector<Slot> slots = enumerate_slots(topo, spec.partition.mode);
  const int R = spec.partition.count();
  const Vec z0 = spec.b0.cwiseInverse();

  Solution out;
  out.stats.gap = std::numeric_limits<double>::infinity();

  struct QueueNode {
    double lb;
    int depth;
    std::int64_t id;
    int branch_slot;
    RegionAssignment assign;
  };
  struct Cmp {
    bool operator()(const QueueNode& a, const QueueNode& b) const {
      if (a.lb != b.lb) return a.lb > b.lb;          // smallest bound first
      if (a.depth != b.depth) return a.depth < b.depth;  // deeper first
      return a.id > b.id;                            // then creation order
    }
  };
  std::priority_queue<QueueNode, std::vector<QueueNode>, Cmp> queue;
  std::int64_t next_id = 0;

  double best = std::numeric_limits<double>::infinity();
  RegionAssignment best_assign;
  Vec best_x;
  double max_popped_lb = -std::numeric_limits<double>::infinity();

  const auto prune_threshold = [&] {
    if (!std::isfinite(best)) return std::numeric_limits<double>::infinity();
    return best - opts.gap_coeff * (1.0 + std::abs(best));
  };

  const auto integrate = [&](const EvalResult& res, const RegionAssignment& assign,
                             double parent_lb, int depth) {
    out.stats.qps_solved += res.qps_used;
    if (res.qp_status == QpStatus::PrimalInfeasible) return;
    if (res.qp_status == QpStatus::MaxIterations) {
      // No usable bound; keep exploring below the parent's bound if there is
      // anything left to branch on.
      int slot = -1;
      for (size_t s = 0; s < slots.size(); ++s)
        if (assign.region[s] < 0) {
          slot = static_cast<int>(s);
          break;
        }
      if (slot >= 0)
        queue.push(QueueNode{parent_lb, depth, next_id++, slot, assign});
      return;
    }
    if (res.candidate) {
      if (res.objective < best) {
        best = res.objective;
        best_assign = res.completed;
        best_x = res.xsol;
      }
      return;
    }
    if (res.objective < prune_threshold())
      queue.push(QueueNode{res.objective, depth, next_id++, res.branch_slot, assign});
  };

  // Root relaxation.
  {
    const RegionAssignment root = RegionAssignment::unassigned(static_cast<int>(slots.size()));
    const EvalResult res = evaluate_node(spec, topo, slots, root, opts.qp);
    integrate(res, root, -std::numeric_limits<double>::infinity(), 0);
    if (res.qp_status == QpStatus::PrimalInfeasible) {
      out.status = SolveStatus::Infeasible;
      out.stats.wall_time_s = seconds_since(t0);
      return out;
    }
  }

  bool budget_hit = false;
  while (!queue.empty()) {
    if (seconds_since(t0) > opts.budget_s || out.stats.bnb_nodes >= opts.max_bnb_nodes) {
      budget_hit = true;
      break;
    }
    if (queue.top().lb >= prune_threshold()) {
      out.stats.gap = std::max(0.0, best - queue.top().lb);
      std::priority_queue<QueueNode, std::vector<QueueNode>, Cmp>().swap(queue);
      break;
    }

    // Pop a batch and evaluate every child relaxation, in parallel when asked.
    std::vector<QueueNode> batch;
    const int W = std::max(1, opts.workers);
    while (static_cast<int>(batch.size()) < W && !queue.empty() &&
           queue.top().lb < prune_threshold()) {
      batch.push_back(queue.top());
      queue.pop();
    }
    if (batch.empty()) continue;
    max_popped_lb = std::max(max_popped_lb, batch.front().lb);
    out.stats.bnb_nodes += static_cast<std::int64_t>(batch.size());

    struct Task {
      RegionAssignment assign;
      double parent_lb;
      int depth;
    };
    std::vector<Task> tasks;
    for (const auto& node : batch)
      for (int r = 0; r < R; ++r) {
        Task t{node.assign, node.lb, node.depth + 1};
        t.assign.region[node.branch_slot] = r;
        tasks.push_back(std::move(t));
      }

    std::vector<EvalResult> results(tasks.size());
    if (W == 1 || tasks.size() == 1) {
      for (size_t i = 0; i < tasks.size(); ++i)
        results[i] = evaluate_node(spec, topo, slots, tasks[i].assign, opts.qp);
    } else {
      std::vector<std::thread> threads;
      const int workers = std::min<std::size_t>(W, tasks.size());
      for (int w = 0; w < workers; ++w)
        threads.emplace_back([&, w] {
          for (size_t i = w; i < tasks.size(); i += workers)
            results[i] = evaluate_node(spec, topo, slots, tasks[i].assign, opts.qp);
        });
      for (auto& th : threads) th.join();
    }
    for (size_t i = 0; i < tasks.size(); ++i)
      integrate(results[i], tasks[i].assign, tasks[i].parent_lb, tasks[i].depth);
  }

  out.stats.wall_time_s = seconds_since(t0);
  if (!std::isfinite(best)) {
    out.status = budget_hit ? SolveStatus::BudgetExceeded : SolveStatus::Infeasible;
    if (budget_hit) out.stats.gap = std::numeric_limits<double>::infinity();
    return out;
  }
  if (budget_hit) {
    out.status = SolveStatus::BudgetExceeded;
    double min_lb = std::numeric_limits<double>::infinity();
    while (!queue.empty()) {
      min_lb = std::min(min_lb, queue.top().lb);
      queue.pop();
    }
    out.stats.gap = std::isfinite(min_lb) ? std::max(0.0, best - min_lb) : 0.0;
  } else {
    out.status = SolveStatus::Optimal;
    if (queue.empty() && out.stats.gap == std::numeric_limits<double>::infinity())
      out.stats.gap = 0.0;
    // Every expanded node's bound must sit below the returned optimum.
    if (max_popped_lb > best + opts.gap_coeff * (1.0 + std::abs(best)) + 1e-7 * (1.0 + std::abs(best)))
      throw std::logic_error("branch-and-bound explored a node above the optimum");
  }

  out.cost = best;
  out.assignment = best_assign;
  out.tree = extract_tree(spec, topo, slots, best_assign, best_x, best, spec.x0, z0);
  cross_check_cost(spec, out);
  return out;
}

Solution solve_convex_constant_obs(const ScenarioSpec& spec, const SolveOptions& opts,
                                   const std::optional<Vec>& x0_override,
                                   const std::optional<Vec>& z0_override) {
  validate(spec);
  require_static(spec, "solve_convex_constant_obs");
  if (spec.partition.mode != CoverageMode::Partition)
    throw ValidationError("constant-observation fast path requires partition mode");
  for (size_t i = 1; i < spec.obs.tables.size(); ++i)
    if (!(spec.obs.tables[i].array() == spec.obs.tables[0].array()).all())
      throw ValidationError("constant-observation fast path requires identical tables");

  const auto t0 = Clock::now();
  const TreeTopology topo = build_topology(spec.horizon, spec.obs.num_obs);
  const std::vector<Slot> slots = enumerate_slots(topo, spec.partition.mode);

  // With one shared table the optimistic weights of the empty assignment are
  // exact, and membership adds nothing (the regions tile the state set), so
  // the whole problem is this single QP.
  const RegionAssignment empty = RegionAssignment::unassigned(static_cast<int>(slots.size()));
  const AssembledQp aqp = assemble_qp(spec, topo, slots, empty, x0_override, z0_override);
  const QpSolution sol = solve_qp(aqp.qp, opts.qp);

  Solution out;
  out.stats.qps_solved = 1;
  out.stats.wall_time_s = seconds_since(t0);
  if (sol.status == QpStatus::PrimalInfeasible) {
    out.status = SolveStatus::Infeasible;
    return out;
  }
  if (sol.status == QpStatus::MaxIterations) {
    out.status = SolveStatus::BudgetExceeded;
    out.stats.gap = std::numeric_limits<double>::infinity();
    return out;
  }

  const Vec x0 = x0_override.value_or(spec.x0);
  const Vec z0 = z0_override.value_or(Vec(spec.b0.cwiseInverse()));
  // Attribute a region to each measurement state after the fact (the choice
  // is belief-neutral here); lowest index with the smallest violation.
  RegionAssignment assign = empty;
  for (size_t s = 0; s < slots.size(); ++s) {
    const Vec x = sol.x.segment(
        slots[s].node * aqp.Nb * (aqp.n + aqp.d) + (slots[s].step - 1) * (aqp.n + aqp.d) + aqp.d,
        aqp.n);
    int chosen = 0;
    double min_violation = std::numeric_limits<double>::infinity();
    for (int r = 0; r < spec.partition.count(); ++r) {
      const double viol = spec.partition.regions[r].violation(x);
      if (viol < min_violation - 1e-12) {
        min_violation = viol;
        chosen = r;
      }
    }
    assign.region[s] = chosen;
  }

  out.status = SolveStatus::Optimal;
  out.cost = sol.objective;
  out.assignment = assign;
  out.stats.gap = 0.0;
  out.tree = extract_tree(spec, topo, slots, assign, sol.x, sol.objective, x0, z0);
  if (!z0_override) cross_check_cost(spec, out);
  return out;
}

Solution enumerate_oracle(const ScenarioSpec& spec, const SolveOptions& opts) {
  validate(spec);
  require_static(spec, "enumerate_oracle");
  const auto t0 = Clock::now();
  const TreeTopology topo = build_topology(spec.horizon, spec.obs.num_obs);
  const std::vector<Slot> slots = enumerate_slots(topo, spec.partition.mode);
  const int R = spec.partition.count();

  double space = 1.0;
  for (size_t s = 0; s < slots.size(); ++s) space *= R;
  if (space > 1e5)
    throw ValidationError("oracle guard exceeded: assignment space larger than 1e5");

  Solution out;
  RegionAssignment assign = RegionAssignment::unassigned(static_cast<int>(slots.size()));
  for (auto& r : assign.region) r = 0;

  double best = std::numeric_limits<double>::infinity();
  RegionAssignment best_assign;
  Vec best_x;
  while (true) {
    const AssembledQp aqp = assemble_fixed_assignment_qp(spec, topo, slots, assign);
    const QpSolution sol = solve_qp(aqp.qp, opts.qp);
    ++out.stats.qps_solved;
    if (sol.status == QpStatus::Optimal && sol.objective < best) {
      best = sol.objective;
      best_assign = assign;
      best_x = sol.x;
    }
    // Odometer over the assignment space.
    size_t pos = 0;
    while (pos < assign.region.size() && ++assign.region[pos] == R) assign.region[pos++] = 0;
    if (pos == assign.region.size()) break;
  }

  out.stats.wall_time_s = seconds_since(t0);
  if (!std::isfinite(best)) {
    out.status = SolveStatus::Infeasible;
    return out;
  }
  out.status = SolveStatus::Optimal;
  out.cost = best;
  out.assignment = best_assign;
  out.stats.gap = 0.0;
  out.tree = extract_tree(spec, topo, slots, best_assign, best_x, best, spec.x0,
                          spec.b0.cwiseInverse());
  cross_check_cost(spec, out);
  return out;
}

}  // namespace moclqr
