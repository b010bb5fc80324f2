#include "moclqr/belief.hpp"
#include "moclqr/solver.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace moclqr {

namespace {

constexpr double kNoBound = 1e30;

// Slot index of each node's measurement state, -1 where none exists.
std::vector<int> measurement_slot_of_node(const TreeTopology& topo,
                                          const std::vector<Slot>& slots) {
  std::vector<int> of_node(topo.num_nodes(), -1);
  for (size_t s = 0; s < slots.size(); ++s)
    if (slots[s].measurement) of_node[slots[s].node] = static_cast<int>(s);
  return of_node;
}

}  // namespace

std::vector<Slot> enumerate_slots(const TreeTopology& topo, CoverageMode mode) {
  std::vector<Slot> slots;
  const int Nb = topo.schedule.Nb;
  for (const auto& node : topo.nodes)
    if (!node.is_leaf()) slots.push_back(Slot{node.id, Nb, true});
  if (mode == CoverageMode::FreeSpaceDisjunction) {
    for (const auto& node : topo.nodes)
      for (int t = 1; t <= Nb; ++t)
        if (node.is_leaf() || t != Nb) slots.push_back(Slot{node.id, t, false});
  }
  return slots;
}

AssembledQp assemble_qp(const ScenarioSpec& spec, const TreeTopology& topo,
                        const std::vector<Slot>& slots, const RegionAssignment& assign,
                        const std::optional<Vec>& x0_override,
                        const std::optional<Vec>& z0_override) {
  if (!spec.trans.is_static)
    throw ValidationError("tree QP assembly requires a static environment");
  if (assign.region.size() != slots.size())
    throw ValidationError("assignment length does not match the slot table");
  const int R = spec.partition.count();
  for (int r : assign.region)
    if (r >= R) throw ValidationError("assignment region index out of range");

  AssembledQp out;
  out.n = spec.system.state_dim();
  out.d = spec.system.input_dim();
  out.Nb = topo.schedule.Nb;
  out.num_nodes = topo.num_nodes();
  const int n = out.n, d = out.d, Nb = out.Nb;
  const Vec x0 = x0_override.value_or(spec.x0);
  const Vec z0 = z0_override.value_or(Vec(spec.b0.cwiseInverse()));

  // Inverse-coordinate weight chains.  Committed measurement slots divide by
  // their table column exactly; uncommitted ones divide by the elementwise
  // best case over regions, which can only understate the final weights.
  const std::vector<int> meas_of = measurement_slot_of_node(topo, slots);
  out.node_z.assign(out.num_nodes, Vec());
  out.node_w.assign(out.num_nodes, Vec());
  out.node_exact.assign(out.num_nodes, 1);
  out.node_z[0] = z0;
  const int num_env = spec.obs.num_env;
  for (const auto& node : topo.nodes) {
    if (node.is_leaf()) continue;
    const int r = assign.region[meas_of[node.id]];
    for (int o = 0; o < spec.obs.num_obs; ++o) {
      const int child = node.children[o];
      Vec zc(num_env);
      if (r >= 0) {
        zc = inverse_update(spec.obs, InverseBelief{out.node_z[node.id]}, r, o).z;
        out.node_exact[child] = out.node_exact[node.id];
      } else {
        for (int e = 0; e < num_env; ++e) {
          double smallest = spec.obs.tables[0](e, o);
          for (int i = 1; i < R; ++i) smallest = std::min(smallest, spec.obs.tables[i](e, o));
          zc[e] = out.node_z[node.id][e] / smallest;
        }
        out.node_exact[child] = 0;
      }
      const Vec cap = z_upper_bound(spec, InverseBelief{z0}, topo.nodes[child].depth + 1);
      if (((zc - cap).array() > 1e-9 * cap.array()).any())
        throw std::logic_error("inverse belief exceeded its certified bound");
      out.node_z[child] = std::move(zc);
    }
  }
  for (int nd = 0; nd < out.num_nodes; ++nd) out.node_w[nd] = out.node_z[nd].cwiseInverse();

  // Objective.  Stage form sum_e w[e] (x - xg_e)'Q(x - xg_e) contributes
  // 2*(sum w)*Q to the canonical 1/2 x'Px block.
  const int nv = out.num_nodes * Nb * (n + d);
  std::vector<Eigen::Triplet<double>> pt;
  Vec q = Vec::Zero(nv);
  double rconst = 0.0;

  const auto add_quad = [&](int base, const Mat& M, const Vec& w, const std::vector<Vec>& goal) {
    const double wsum = w.sum();
    Vec goal_mix = Vec::Zero(M.rows());
    for (int e = 0; e < num_env; ++e) goal_mix += w[e] * goal[e];
    for (int i = 0; i < M.rows(); ++i)
      for (int j = 0; j < M.cols(); ++j)
        if (M(i, j) != 0.0) pt.emplace_back(base + i, base + j, 2.0 * wsum * M(i, j));
    q.segment(base, M.rows()) += -2.0 * (M * goal_mix);
    for (int e = 0; e < num_env; ++e) rconst += w[e] * goal[e].dot(M * goal[e]);
  };
  const auto add_const_state = [&](const Vec& x, const Vec& w) {
    for (int e = 0; e < num_env; ++e) {
      const Vec dx = x - spec.cost.x_goal[e];
      rconst += w[e] * dx.dot(spec.cost.Q * dx);
    }
  };

  for (const auto& node : topo.nodes) {
    const Vec& w = out.node_w[node.id];
    // Inputs of this segment, including the one applied at the branch step.
    for (int t = 0; t < Nb; ++t) add_quad(out.u_index(node.id, t), spec.cost.R, w, spec.cost.u_goal);
    // Interior states.
    for (int t = 1; t < Nb; ++t) add_quad(out.x_index(node.id, t), spec.cost.Q, w, spec.cost.x_goal);
    // The segment's first state: root stage at k=0 is a constant, every other
    // node's is the parent's terminal variable weighted by this node.
    if (node.parent < 0) {
      add_const_state(x0, w);
    } else {
      add_quad(out.x_index(node.parent, Nb), spec.cost.Q, w, spec.cost.x_goal);
    }
    // Leaf terminal cost (terminal observation carries no information, so the
    // terminal weight equals the segment weight under a static environment).
    if (node.is_leaf()) add_quad(out.x_index(node.id, Nb), spec.cost.QN, w, spec.cost.x_goal);
  }

  // Constraints.
  const int mx = static_cast<int>(spec.state_set.rows());
  const int mu = static_cast<int>(spec.input_set.rows());
  int rows = out.num_nodes * Nb * n;            // dynamics
  rows += out.num_nodes * Nb * (mx + mu);       // state and input sets
  for (size_t s = 0; s < slots.size(); ++s)
    if (assign.region[s] >= 0) rows += static_cast<int>(spec.partition.regions[assign.region[s]].rows());

  std::vector<Eigen::Triplet<double>> at;
  Vec l = Vec::Zero(rows), u = Vec::Zero(rows);
  int row = 0;

  for (const auto& node : topo.nodes) {
    for (int t = 0; t < Nb; ++t) {
      // x_{t+1} - A x_t - B u_t = 0, with the root's fixed x_0 on the rhs.
      const int xi = out.x_index(node.id, t + 1);
      for (int i = 0; i < n; ++i) at.emplace_back(row + i, xi + i, 1.0);
      const int ui = out.u_index(node.id, t);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
          if (spec.system.B(i, j) != 0.0) at.emplace_back(row + i, ui + j, -spec.system.B(i, j));
      Vec rhs = Vec::Zero(n);
      if (t == 0 && node.parent < 0) {
        rhs = spec.system.A * x0;
      } else {
        const int xp = (t == 0) ? out.x_index(node.parent, Nb) : out.x_index(node.id, t);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            if (spec.system.A(i, j) != 0.0) at.emplace_back(row + i, xp + j, -spec.system.A(i, j));
      }
      l.segment(row, n) = rhs;
      u.segment(row, n) = rhs;
      row += n;
    }
    for (int t = 1; t <= Nb; ++t) {
      const int xi = out.x_index(node.id, t);
      for (int i = 0; i < mx; ++i) {
        for (int j = 0; j < n; ++j)
          if (spec.state_set.H(i, j) != 0.0) at.emplace_back(row + i, xi + j, spec.state_set.H(i, j));
        l[row + i] = -kNoBound;
        u[row + i] = spec.state_set.h[i];
      }
      row += mx;
    }
    for (int t = 0; t < Nb; ++t) {
      const int ui = out.u_index(node.id, t);
      for (int i = 0; i < mu; ++i) {
        for (int j = 0; j < d; ++j)
          if (spec.input_set.H(i, j) != 0.0) at.emplace_back(row + i, ui + j, spec.input_set.H(i, j));
        l[row + i] = -kNoBound;
        u[row + i] = spec.input_set.h[i];
      }
      row += mu;
    }
  }
  for (size_t s = 0; s < slots.size(); ++s) {
    const int r = assign.region[s];
    if (r < 0) continue;
    const Polytope& reg = spec.partition.regions[r];
    const int xi = out.x_index(slots[s].node, slots[s].step);
    for (int i = 0; i < reg.rows(); ++i) {
      for (int j = 0; j < n; ++j)
        if (reg.H(i, j) != 0.0) at.emplace_back(row + i, xi + j, reg.H(i, j));
      l[row + i] = -kNoBound;
      u[row + i] = reg.h[i];
    }
    row += reg.rows();
  }

  out.qp.P = SpMat(nv, nv);
  out.qp.P.setFromTriplets(pt.begin(), pt.end());
  out.qp.q = std::move(q);
  out.qp.r = rconst;
  out.qp.A = SpMat(rows, nv);
  out.qp.A.setFromTriplets(at.begin(), at.end());
  out.qp.l = std::move(l);
  out.qp.u = std::move(u);
  return out;
}

AssembledQp assemble_fixed_assignment_qp(const ScenarioSpec& spec, const TreeTopology& topo,
                                         const std::vector<Slot>& slots,
                                         const RegionAssignment& assign) {
  if (!assign.complete())
    throw ValidationError("fixed-assignment QP requires a complete assignment");
  return assemble_qp(spec, topo, slots, assign);
}

double lower_bound(const ScenarioSpec& spec, const TreeTopology& topo,
                   const std::vector<Slot>& slots, const RegionAssignment& assign,
                   const QpSettings& qp_settings) {
  const AssembledQp asm_qp = assemble_qp(spec, topo, slots, assign);
  const QpSolution sol = solve_qp(asm_qp.qp, qp_settings);
  switch (sol.status) {
    case QpStatus::Optimal:
      return sol.objective;
    case QpStatus::PrimalInfeasible:
      return std::numeric_limits<double>::infinity();
    case QpStatus::MaxIterations:
      return -std::numeric_limits<double>::infinity();  // no usable bound
  }
  return -std::numeric_limits<double>::infinity();
}

double evaluate_cost(const ScenarioSpec& spec, const TrajectoryTree& tree,
                     const RegionAssignment& assign) {
  const TreeTopology& topo = tree.topo;
  const std::vector<Slot> slots = enumerate_slots(topo, spec.partition.mode);
  if (assign.region.size() != slots.size())
    throw ValidationError("assignment length does not match the slot table");
  const std::vector<int> meas_of = measurement_slot_of_node(topo, slots);
  const int num_env = spec.obs.num_env;
  const int Nb = topo.schedule.Nb;

  const auto stage = [&](const Vec& x, const Vec& u, const Vec& w) {
    double c = 0.0;
    for (int e = 0; e < num_env; ++e) {
      const Vec dx = x - spec.cost.x_goal[e];
      const Vec du = u - spec.cost.u_goal[e];
      c += w[e] * (dx.dot(spec.cost.Q * dx) + du.dot(spec.cost.R * du));
    }
    return c;
  };

  double total = 0.0;
  // v at a node's first step already includes that step's transition and (for
  // non-roots) the observation that selected the node.
  const auto walk = [&](auto&& self, int nd, Vec v) -> void {
    total += stage(tree.x[nd][0], tree.u[nd][0], v);
    for (int t = 1; t < Nb; ++t) {
      v = spec.trans.omega * v;
      total += stage(tree.x[nd][t], tree.u[nd][t], v);
    }
    const Vec v_next = spec.trans.omega * v;  // weight at the segment's end step
    const auto& node = topo.nodes[nd];
    if (node.is_leaf()) {
      for (int e = 0; e < num_env; ++e) {
        const Vec dx = tree.x[nd][Nb] - spec.cost.x_goal[e];
        total += v_next[e] * dx.dot(spec.cost.QN * dx);
      }
      return;
    }
    const int r = assign.region[meas_of[nd]];
    if (r < 0) throw ValidationError("evaluate_cost requires assigned measurement slots");
    for (int o = 0; o < spec.obs.num_obs; ++o) {
      const Vec vc = theta_matrix(spec.obs, r, o) * v_next;
      self(self, node.children[o], vc);
    }
  };
  walk(walk, 0, spec.b0);
  return total;
}

}  // namespace moclqr
