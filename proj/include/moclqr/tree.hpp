#pragma once

// Observation-indexed trajectory-tree topology.  Planning over a horizon of N
// steps with a measurement every Nb steps yields P = N/Nb segments arranged
// in a complete |O|-ary tree of depth P-1: one state/input segment per node,
// one child per possible observation at each measurement time.

#include "moclqr/belief.hpp"
#include "moclqr/model.hpp"

#include <cstdint>
#include <vector>

namespace moclqr {

struct BranchSchedule {
  int N = 0;
  int Nb = 0;
  int P = 0;
  int num_obs = 0;

  // Segment index of step k: how many observations have been incorporated
  // strictly before applying input u_k.
  int j(int k) const { return k / Nb; }
};

struct TreeNode {
  int id = 0;
  int parent = -1;               // -1 for the root
  int depth = 0;                 // segment index, 0..P-1
  int obs_label = -1;            // observation that spawned this node; -1 for the root
  std::vector<int> obs_path;     // labels from the root (empty for the root)
  std::vector<int> children;     // node ids, ordered by observation label
  int step_begin = 0;            // this node owns control steps [step_begin, step_end)
  int step_end = 0;

  bool is_leaf() const { return children.empty(); }
};

struct TreeTopology {
  BranchSchedule schedule;
  std::vector<TreeNode> nodes;   // breadth-first ids, siblings in label order

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  int num_leaves() const;
  // Total control steps across the tree: sum over nodes of Nb.
  std::int64_t total_steps() const;
};

TreeTopology build_topology(const HorizonSpec& horizon, int num_obs);

// Observation sequences of all leaves, lexicographically ordered.
std::vector<std::vector<int>> leaf_paths(const TreeTopology& topo);

// Input-variable count of the exact (branch-every-step) formulation:
// d * sum_{k=0}^{N-1} num_obs^k.  Throws std::overflow_error when the sum
// exceeds the int64 range.
std::int64_t count_exact_variables(int N, int num_obs, int d);

// A solved plan over the tree: per node a state segment (Nb+1 states, the
// first duplicating the parent's last), an input segment (Nb inputs), and the
// belief coordinates at segment start.
struct TrajectoryTree {
  TreeTopology topo;
  std::vector<std::vector<Vec>> x;  // [node][0..Nb]
  std::vector<std::vector<Vec>> u;  // [node][0..Nb-1]
  std::vector<Vec> belief;          // normalized, at segment start
  std::vector<Vec> v;               // unnormalized, at segment start
  std::vector<Vec> z;               // inverse, at segment start
  double cost = 0.0;
};

}  // namespace moclqr
