#include "moclqr/tree_json.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

namespace moclqr {

namespace {

using json = nlohmann::ordered_json;

// All numbers are emitted through this one formatter so the files are
// reproducible bit-for-bit: 17 significant digits round-trip any double.
std::string fmt(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

void append_vec(std::string& out, const Vec& v) {
  out += '[';
  for (int i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += fmt(v(i));
  }
  out += ']';
}

void append_ints(std::string& out, const std::vector<int>& v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(v[i]);
  }
  out += ']';
}

Vec parse_vec(const json& j, const std::string& name) {
  if (!j.is_array()) throw ParseError(name + ": expected an array of numbers");
  Vec v(static_cast<int>(j.size()));
  for (int i = 0; i < v.size(); ++i) v(i) = j.at(i).get<double>();
  return v;
}

std::vector<int> parse_ints(const json& j, const std::string& name) {
  if (!j.is_array()) throw ParseError(name + ": expected an array of integers");
  std::vector<int> v(j.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = j.at(i).get<int>();
  return v;
}

void check(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

}  // namespace

void save_tree_json(const std::string& path, const ScenarioSpec& spec,
                    const Solution& sol) {
  const TreeTopology& topo = sol.tree.topo;
  const int Nb = topo.schedule.Nb;
  const int N = topo.schedule.N;

  const std::vector<Slot> slots = enumerate_slots(topo, spec.partition.mode);
  std::vector<std::vector<int>> node_regions(topo.num_nodes());
  for (std::size_t i = 0; i < slots.size(); ++i)
    node_regions[slots[i].node].push_back(sol.assignment.region[i]);

  std::string out;
  out.reserve(1 << 16);
  out += "{\n  \"cost\": " + fmt(sol.cost) + ",\n  \"gap\": " + fmt(sol.stats.gap) +
         ",\n  \"nodes\": [\n";
  for (const TreeNode& node : topo.nodes) {
    out += "    {\"id\": " + std::to_string(node.id) +
           ", \"parent\": " + std::to_string(node.parent) +
           ", \"obs_label\": " + std::to_string(node.obs_label) +
           ", \"depth\": " + std::to_string(node.depth) + ",\n     \"steps\": [\n";
    for (int t = 0; t < Nb; ++t) {
      out += "       {\"k\": " + std::to_string(node.step_begin + t) + ", \"x\": ";
      append_vec(out, sol.tree.x[node.id][t]);
      out += ", \"u\": ";
      append_vec(out, sol.tree.u[node.id][t]);
      out += "},\n";
    }
    if (node.is_leaf()) {
      out += "       {\"k\": " + std::to_string(N) + ", \"x\": ";
      append_vec(out, sol.tree.x[node.id][Nb]);
      out += ", \"u\": []},\n";
    }
    out.erase(out.size() - 2);  // trailing comma of the last step
    out += "\n     ],\n     \"belief\": ";
    append_vec(out, sol.tree.belief[node.id]);
    out += ",\n     \"v\": ";
    append_vec(out, sol.tree.v[node.id]);
    out += ",\n     \"z\": ";
    append_vec(out, sol.tree.z[node.id]);
    out += ",\n     \"region_assignment\": ";
    append_ints(out, node_regions[node.id]);
    out += "},\n";
  }
  out.erase(out.size() - 2);
  out += "\n  ]\n}\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path + " for writing");
  f << out;
  if (!f) throw ParseError("failed writing " + path);
}

TreeFile load_tree_json(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path);
  std::stringstream buffer;
  buffer << f.rdbuf();

  json j;
  try {
    j = json::parse(buffer.str());
  } catch (const json::exception& e) {
    throw ParseError(std::string("tree file: ") + e.what());
  }

  try {
    TreeFile file;
    file.cost = j.at("cost").get<double>();
    file.gap = j.at("gap").get<double>();
    for (const json& jn : j.at("nodes")) {
      TreeFileNode node;
      node.id = jn.at("id").get<int>();
      node.parent = jn.at("parent").get<int>();
      node.obs_label = jn.at("obs_label").get<int>();
      node.depth = jn.at("depth").get<int>();
      for (const json& js : jn.at("steps")) {
        TreeFileStep step;
        step.k = js.at("k").get<int>();
        step.x = parse_vec(js.at("x"), "steps.x");
        step.u = parse_vec(js.at("u"), "steps.u");
        node.steps.push_back(std::move(step));
      }
      node.belief = parse_vec(jn.at("belief"), "belief");
      node.v = parse_vec(jn.at("v"), "v");
      node.z = parse_vec(jn.at("z"), "z");
      node.region_assignment = parse_ints(jn.at("region_assignment"), "region_assignment");
      file.nodes.push_back(std::move(node));
    }
    return file;
  } catch (const json::exception& e) {
    throw ParseError(std::string("tree file: ") + e.what());
  }
}

CheckedTree validate_tree_file(const ScenarioSpec& spec, const TreeFile& file) {
  check(!file.nodes.empty(), "tree file has no nodes");
  check(std::isfinite(file.cost), "tree cost is not finite");
  check(std::isfinite(file.gap) && file.gap >= 0.0, "tree gap is not a nonnegative number");

  // Infer the horizon from the root's step list and rebuild the topology.
  int Nb = 0;
  for (const TreeFileStep& s : file.nodes[0].steps)
    if (s.u.size() > 0) ++Nb;
  check(Nb > 0, "root node owns no control steps");
  int N = 0;
  for (const TreeFileNode& node : file.nodes)
    for (const TreeFileStep& s : node.steps) N = std::max(N, s.k + (s.u.size() > 0 ? 1 : 0));
  check(N % Nb == 0, "horizon is not a multiple of the branch interval");

  HorizonSpec horizon;
  horizon.N = N;
  horizon.Nb = Nb;
  CheckedTree out;
  out.topo = build_topology(horizon, spec.obs.num_obs);
  out.cost = file.cost;
  out.gap = file.gap;
  check(out.topo.num_nodes() == static_cast<int>(file.nodes.size()),
        "node count does not match the horizon and observation alphabet");

  const int n = spec.system.A.rows();
  const int d = spec.system.B.cols();
  const int R = spec.partition.count();
  const bool free_mode = spec.partition.mode == CoverageMode::FreeSpaceDisjunction;

  // Shape checks against the rebuilt topology.
  for (const TreeNode& node : out.topo.nodes) {
    const TreeFileNode& fn = file.nodes[node.id];
    check(fn.id == node.id, "nodes are not in breadth-first order");
    check(fn.parent == node.parent, "parent link mismatch at node " + std::to_string(node.id));
    check(fn.obs_label == node.obs_label,
          "observation label mismatch at node " + std::to_string(node.id));
    check(fn.depth == node.depth, "depth mismatch at node " + std::to_string(node.id));
    const int want_steps = Nb + (node.is_leaf() ? 1 : 0);
    check(static_cast<int>(fn.steps.size()) == want_steps,
          "step count mismatch at node " + std::to_string(node.id));
    for (int t = 0; t < static_cast<int>(fn.steps.size()); ++t) {
      const TreeFileStep& s = fn.steps[t];
      check(s.k == node.step_begin + t, "step index mismatch at node " + std::to_string(node.id));
      check(s.x.size() == n, "state dimension mismatch");
      const bool terminal = node.is_leaf() && t == Nb;
      check(s.u.size() == (terminal ? 0 : d), "input dimension mismatch");
    }
    check(fn.belief.size() == spec.obs.num_env && fn.v.size() == spec.obs.num_env &&
              fn.z.size() == spec.obs.num_env,
          "belief dimension mismatch at node " + std::to_string(node.id));
    const int want_slots =
        (node.is_leaf() ? 0 : 1) + (free_mode ? (node.is_leaf() ? Nb : Nb - 1) : 0);
    check(static_cast<int>(fn.region_assignment.size()) == want_slots,
          "region assignment length mismatch at node " + std::to_string(node.id));
    for (int r : fn.region_assignment)
      check(r >= 0 && r < R, "region index out of range at node " + std::to_string(node.id));
  }

  // Unpack segments; the segment-boundary state is taken from the children
  // (which must agree on it) or the terminal entry of a leaf.
  out.x.assign(out.topo.num_nodes(), {});
  out.u.assign(out.topo.num_nodes(), {});
  for (const TreeNode& node : out.topo.nodes) {
    const TreeFileNode& fn = file.nodes[node.id];
    auto& xs = out.x[node.id];
    auto& us = out.u[node.id];
    for (int t = 0; t < Nb; ++t) {
      xs.push_back(fn.steps[t].x);
      us.push_back(fn.steps[t].u);
    }
    if (node.is_leaf()) {
      xs.push_back(fn.steps[Nb].x);
    } else {
      const Vec& shared = file.nodes[node.children[0]].steps[0].x;
      for (int child : node.children)
        check((file.nodes[child].steps[0].x - shared).lpNorm<Eigen::Infinity>() <= 1e-9,
              "children disagree on the shared branch state of node " + std::to_string(node.id));
      xs.push_back(shared);
    }
    out.belief.push_back(fn.belief);
    out.v.push_back(fn.v);
    out.z.push_back(fn.z);
    out.node_regions.push_back(fn.region_assignment);
  }

  // Dynamics, initial state, and constraint satisfaction.
  check((out.x[0][0] - spec.x0).lpNorm<Eigen::Infinity>() <= 1e-9,
        "root state does not match the scenario initial state");
  for (const TreeNode& node : out.topo.nodes) {
    for (int t = 0; t < Nb; ++t) {
      const Vec pred = spec.system.A * out.x[node.id][t] + spec.system.B * out.u[node.id][t];
      check((out.x[node.id][t + 1] - pred).lpNorm<Eigen::Infinity>() <= 1e-8,
            "dynamics residual exceeds 1e-8 at node " + std::to_string(node.id) + ", local step " +
                std::to_string(t));
    }
    for (int t = 0; t <= Nb; ++t)
      check(spec.state_set.violation(out.x[node.id][t]) <= 1e-6,
            "state constraint violated at node " + std::to_string(node.id));
    for (int t = 0; t < Nb; ++t)
      check(spec.input_set.violation(out.u[node.id][t]) <= 1e-6,
            "input constraint violated at node " + std::to_string(node.id));
  }

  // Belief coordinates: simplex, v/z duality, chain consistency.
  for (const TreeNode& node : out.topo.nodes) {
    const Vec& b = out.belief[node.id];
    check(std::abs(b.sum() - 1.0) <= 1e-9, "belief does not sum to one");
    check(b.minCoeff() >= -1e-12, "belief has a negative entry");
    const Vec& v = out.v[node.id];
    const Vec& z = out.z[node.id];
    for (int e = 0; e < v.size(); ++e)
      check(std::abs(v(e) * z(e) - 1.0) <= 1e-6, "v and z are not elementwise reciprocal");
    check((b - v / v.sum()).lpNorm<Eigen::Infinity>() <= 1e-9,
          "belief is not the normalization of v");
    if (node.parent < 0) {
      check((v - spec.b0).lpNorm<Eigen::Infinity>() <= 1e-9,
            "root unnormalized belief does not match the prior");
    } else {
      const int table = out.node_regions[node.parent][0];
      const Vec& vp = out.v[node.parent];
      for (int e = 0; e < v.size(); ++e)
        check(std::abs(v(e) - spec.obs.tables[table](e, node.obs_label) * vp(e)) <= 1e-9,
              "belief chain mismatch at node " + std::to_string(node.id));
    }
  }

  // Committed region membership, in per-node slot order.
  for (const TreeNode& node : out.topo.nodes) {
    const auto& regions = out.node_regions[node.id];
    std::size_t cursor = 0;
    if (!node.is_leaf())
      check(spec.partition.regions[regions[cursor++]].violation(out.x[node.id][Nb]) <= 1e-6,
            "measurement state outside its committed region at node " + std::to_string(node.id));
    if (free_mode)
      for (int t = 1; t <= Nb; ++t) {
        if (!node.is_leaf() && t == Nb) continue;
        check(spec.partition.regions[regions[cursor++]].violation(out.x[node.id][t]) <= 1e-6,
              "state outside its committed region at node " + std::to_string(node.id));
      }
  }

  // The reported objective must agree with an independent re-evaluation.
  TrajectoryTree tree;
  tree.topo = out.topo;
  tree.x = out.x;
  tree.u = out.u;
  tree.belief = out.belief;
  tree.v = out.v;
  tree.z = out.z;
  tree.cost = out.cost;
  const std::vector<Slot> slots = enumerate_slots(out.topo, spec.partition.mode);
  RegionAssignment assign = RegionAssignment::unassigned(static_cast<int>(slots.size()));
  std::vector<std::size_t> cursor(out.topo.num_nodes(), 0);
  for (std::size_t i = 0; i < slots.size(); ++i)
    assign.region[i] = out.node_regions[slots[i].node][cursor[slots[i].node]++];
  const double recomputed = evaluate_cost(spec, tree, assign);
  check(std::abs(recomputed - out.cost) <= 1e-6 * (1.0 + std::abs(out.cost)),
        "tree cost does not match its independent re-evaluation");

  return out;
}

}  // namespace moclqr
