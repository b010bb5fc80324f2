#pragma once

// Monte-Carlo validation of a solved trajectory tree.  Each rollout samples a
// true environment state from the initial belief, replays the plan, samples an
// observation from the piecewise model at every measurement time (using the
// region of the state the plan reaches at that time), and follows the matching
// branch.  The sample mean of the realized quadratic costs is an unbiased
// estimate of the tree objective, which is what the summary reports.
//
// Randomness is fully reproducible: a splitmix64 stream seeded with the user
// seed emits one 64-bit value per rollout, and rollout i seeds its own
// std::mt19937_64 with the i-th value.  Uniform doubles are derived as
// (x >> 11) * 2^-53, so results are identical across platforms and rollout
// count changes never reshuffle earlier rollouts.

#include "moclqr/model.hpp"
#include "moclqr/tree.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace moclqr {

struct RolloutRecord {
  int env = 0;                    // sampled true environment state
  std::vector<int> observations;  // sampled labels, one per measurement time
  std::vector<int> node_path;     // tree nodes visited, root first
  std::vector<Vec> x;             // realized states x_0..x_N
  std::vector<Vec> u;             // realized inputs u_0..u_{N-1}
  double cost = 0.0;              // realized cost under the sampled environment
};

struct SimulationSummary {
  int rollouts = 0;
  std::uint64_t seed = 0;
  double planner_cost = 0.0;  // tree objective (expected cost over outcomes)
  double mean_cost = 0.0;     // sample mean of realized costs
  double std_error = 0.0;     // standard error of the sample mean
};

struct SimulationResult {
  SimulationSummary summary;
  std::vector<RolloutRecord> records;
};

// Advances the splitmix64 state and returns the next value of the stream.
std::uint64_t splitmix64(std::uint64_t& state);

// Uniform double in [0, 1) with 53 random bits, identical on all platforms.
double uniform01(std::mt19937_64& rng);

// Quadratic cost of one realized trajectory when the environment is `env`.
double realized_cost(const ScenarioSpec& spec, const std::vector<Vec>& x,
                     const std::vector<Vec>& u, int env);

// Runs `rollouts` independent rollouts of `tree` under `spec`.  Throws
// ValidationError if a measurement-time state lies in no region (the plan
// would be executing an observation the model cannot produce).
SimulationResult simulate_rollouts(const ScenarioSpec& spec,
                                   const TrajectoryTree& tree, int rollouts,
                                   std::uint64_t seed);

}  // namespace moclqr
