#include "moclqr/simulate.hpp"

#include <cmath>
#include <random>

namespace moclqr {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

namespace {

// Samples an index from a finite distribution given by `weights` (assumed to
// sum to ~1); the final index absorbs any rounding slack.
int sample_index(std::mt19937_64& rng, const Vec& weights) {
  const double draw = uniform01(rng);
  double cum = 0.0;
  for (int i = 0; i + 1 < weights.size(); ++i) {
    cum += weights(i);
    if (draw < cum) return i;
  }
  return static_cast<int>(weights.size()) - 1;
}

}  // namespace

double realized_cost(const ScenarioSpec& spec, const std::vector<Vec>& x,
                     const std::vector<Vec>& u, int env) {
  const Vec& xg = spec.cost.x_goal[env];
  const Vec& ug = spec.cost.u_goal[env];
  double total = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const Vec dx = x[k] - xg;
    const Vec du = u[k] - ug;
    total += dx.dot(spec.cost.Q * dx) + du.dot(spec.cost.R * du);
  }
  const Vec dN = x.back() - xg;
  total += dN.dot(spec.cost.QN * dN);
  return total;
}

SimulationResult simulate_rollouts(const ScenarioSpec& spec,
                                   const TrajectoryTree& tree, int rollouts,
                                   std::uint64_t seed) {
  if (rollouts <= 0) throw ValidationError("rollouts must be positive");
  const TreeTopology& topo = tree.topo;
  const int Nb = topo.schedule.Nb;

  SimulationResult result;
  result.summary.rollouts = rollouts;
  result.summary.seed = seed;
  result.summary.planner_cost = tree.cost;
  result.records.reserve(static_cast<std::size_t>(rollouts));

  std::uint64_t stream = seed;
  double mean = 0.0;
  double m2 = 0.0;
  for (int r = 0; r < rollouts; ++r) {
    std::mt19937_64 rng(splitmix64(stream));
    RolloutRecord rec;
    rec.env = sample_index(rng, spec.b0);

    int node = 0;
    rec.node_path.push_back(node);
    rec.x.push_back(tree.x[0][0]);
    while (true) {
      for (int t = 0; t < Nb; ++t) {
        rec.u.push_back(tree.u[node][t]);
        rec.x.push_back(tree.x[node][t + 1]);
      }
      if (topo.nodes[node].is_leaf()) break;
      // Measurement: the observation distribution is the table of whichever
      // region contains the state the plan reaches at this time.
      const Vec& xm = tree.x[node][Nb];
      const auto region = region_of_state(spec.partition, xm);
      if (!region) {
        throw ValidationError(
            "measurement-time state lies in no region; the plan cannot be "
            "executed");
      }
      const Mat& table = spec.obs.tables[*region];
      const int label = sample_index(rng, table.row(rec.env).transpose());
      rec.observations.push_back(label);
      node = topo.nodes[node].children[label];
      rec.node_path.push_back(node);
    }
    rec.cost = realized_cost(spec, rec.x, rec.u, rec.env);

    const double delta = rec.cost - mean;
    mean += delta / static_cast<double>(r + 1);
    m2 += delta * (rec.cost - mean);
    result.records.push_back(std::move(rec));
  }

  result.summary.mean_cost = mean;
  result.summary.std_error =
      rollouts > 1 ? std::sqrt(m2 / static_cast<double>(rollouts - 1) /
                               static_cast<double>(rollouts))
                   : 0.0;
  return result;
}

}  // namespace moclqr
