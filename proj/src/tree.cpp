#include "moclqr/tree.hpp"

#include <limits>
#include <stdexcept>

namespace moclqr {

int TreeTopology::num_leaves() const {
  int count = 0;
  for (const auto& node : nodes)
    if (node.is_leaf()) ++count;
  return count;
}

std::int64_t TreeTopology::total_steps() const {
  return static_cast<std::int64_t>(nodes.size()) * schedule.Nb;
}

TreeTopology build_topology(const HorizonSpec& horizon, int num_obs) {
  if (horizon.N < 1 || horizon.Nb < 1 || horizon.N % horizon.Nb != 0)
    throw ValidationError("horizon: Nb must be >= 1 and divide N");
  if (num_obs < 1) throw ValidationError("num_obs must be >= 1");

  TreeTopology topo;
  topo.schedule = BranchSchedule{horizon.N, horizon.Nb, horizon.segments(), num_obs};
  const int P = topo.schedule.P;

  TreeNode root;
  root.step_end = horizon.Nb;
  topo.nodes.push_back(root);

  // Breadth-first construction: nodes at depth j occupy a contiguous id range,
  // children appear in observation-label order.
  for (size_t i = 0; i < topo.nodes.size(); ++i) {
    if (topo.nodes[i].depth == P - 1) continue;
    for (int o = 0; o < num_obs; ++o) {
      TreeNode child;
      child.id = static_cast<int>(topo.nodes.size());
      child.parent = static_cast<int>(i);
      child.depth = topo.nodes[i].depth + 1;
      child.obs_label = o;
      child.obs_path = topo.nodes[i].obs_path;
      child.obs_path.push_back(o);
      child.step_begin = child.depth * horizon.Nb;
      child.step_end = child.step_begin + horizon.Nb;
      topo.nodes[i].children.push_back(child.id);
      topo.nodes.push_back(child);
    }
  }
  return topo;
}

std::vector<std::vector<int>> leaf_paths(const TreeTopology& topo) {
  std::vector<std::vector<int>> paths;
  for (const auto& node : topo.nodes)
    if (node.is_leaf()) paths.push_back(node.obs_path);
  return paths;
}

std::int64_t count_exact_variables(int N, int num_obs, int d) {
  if (N < 1) throw ValidationError("count_exact_variables requires N >= 1");
  const std::int64_t cap = std::numeric_limits<std::int64_t>::max();
  std::int64_t total = 0;
  std::int64_t term = 1;  // num_obs^k
  for (int k = 0; k < N; ++k) {
    if (total > cap - term) throw std::overflow_error("exact variable count exceeds int64");
    total += term;
    if (k + 1 < N) {
      if (term > cap / num_obs) throw std::overflow_error("exact variable count exceeds int64");
      term *= num_obs;
    }
  }
  if (total > cap / d) throw std::overflow_error("exact variable count exceeds int64");
  return total * d;
}

}  // namespace moclqr
