#pragma once

// Serialization of solved trajectory trees.  The on-disk format is JSON with
// every number printed to 17 significant digits, so files round-trip doubles
// exactly and identical plans produce byte-identical files:
//
//   {"cost": ..., "gap": ...,
//    "nodes": [{"id", "parent", "obs_label", "depth",
//               "steps": [{"k", "x": [...], "u": [...]}, ...],
//               "belief": [...], "v": [...], "z": [...],
//               "region_assignment": [...]}, ...]}
//
// Each node lists the control steps it owns: global step k, the state at k,
// and the input applied at k.  The state at a segment boundary is owned by
// the child (its first step), and leaves close with a terminal entry whose
// "u" is empty.  "region_assignment" holds the node's committed regions in
// slot order (measurement first, then intra-segment states by step).

#include "moclqr/model.hpp"
#include "moclqr/solver.hpp"

#include <string>
#include <vector>

namespace moclqr {

struct TreeFileStep {
  int k = 0;
  Vec x;
  Vec u;  // empty for the terminal entry of a leaf
};

struct TreeFileNode {
  int id = 0;
  int parent = -1;
  int obs_label = -1;
  int depth = 0;
  std::vector<TreeFileStep> steps;
  Vec belief, v, z;
  std::vector<int> region_assignment;
};

struct TreeFile {
  double cost = 0.0;
  double gap = 0.0;
  std::vector<TreeFileNode> nodes;
};

// A re-validated tree file, unpacked into per-node segment arrays (the same
// layout TrajectoryTree uses: x[node][0..Nb], u[node][0..Nb-1]).
struct CheckedTree {
  TreeTopology topo;
  std::vector<std::vector<Vec>> x;
  std::vector<std::vector<Vec>> u;
  std::vector<Vec> belief, v, z;
  std::vector<std::vector<int>> node_regions;  // per node, slot order
  double cost = 0.0;
  double gap = 0.0;
};

// Writes `sol` (which must hold a solved tree) for `spec` to `path`.
void save_tree_json(const std::string& path, const ScenarioSpec& spec,
                    const Solution& sol);

// Parses a tree file; throws ParseError on malformed input.
TreeFile load_tree_json(const std::string& path);

// Re-validates a parsed tree against the model it claims to solve: topology
// shape, dynamics residuals within 1e-8, state/input constraints within 1e-6,
// beliefs on the simplex with consistent inverse coordinates, belief chains
// matching the committed observation tables, and committed region membership
// within 1e-6.  Throws ValidationError naming the first violation; returns
// the unpacked tree on success.
CheckedTree validate_tree_file(const ScenarioSpec& spec, const TreeFile& file);

}  // namespace moclqr
