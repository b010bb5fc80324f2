#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace moclqr {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Thrown when a scenario file cannot be parsed at all.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when a scenario parses but violates a model invariant.
/// The message names the violated invariant.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Discrete-time LTI dynamics x' = A x + B u.
struct LinearSystem {
  Mat A;
  Mat B;

  int state_dim() const { return static_cast<int>(A.rows()); }
  int input_dim() const { return static_cast<int>(B.cols()); }
};

/// The set {y : H y <= h}.
struct Polytope {
  Mat H;
  Vec h;

  int rows() const { return static_cast<int>(H.rows()); }
  int dim() const { return static_cast<int>(H.cols()); }

  /// Largest constraint violation, max_i (H y - h)_i. Nonpositive inside.
  double violation(const Vec& y) const { return (H * y - h).maxCoeff(); }

  bool contains(const Vec& y, double tol = 1e-9) const { return violation(y) <= tol; }
};

enum class CoverageMode {
  Partition,            // regions tile the state set
  FreeSpaceDisjunction  // regions tile the obstacle-free subset; every state must pick one
};

/// Ordered list of polytopic regions on which the observation tables are constant.
struct RegionPartition {
  std::vector<Polytope> regions;
  CoverageMode mode = CoverageMode::Partition;

  int count() const { return static_cast<int>(regions.size()); }
};

/// Lowest region index containing x (closed sets, 1e-9 boundary slack), or
/// nullopt when x lies in no region. Indices are 0-based.
std::optional<int> region_of_state(const RegionPartition& partition, const Vec& x,
                                   double tol = 1e-9);

/// Per-region observation tables M_i with M_i(e, o) = P(o | e, x in region i).
struct ObservationModel {
  int num_env = 0;
  int num_obs = 0;
  std::vector<Mat> tables;  // one |E| x |O| matrix per region

  const Mat& table(int region) const { return tables.at(region); }
};

/// Environment dynamics P(e' | e), column-stochastic, constant in x.
struct TransitionModel {
  Mat omega;
  bool is_static = true;  // omega == identity

  static TransitionModel identity(int num_env);
};

/// Quadratic stage/terminal costs with one goal pair per environment state.
struct CostSpec {
  Mat Q;
  Mat R;
  Mat QN;
  std::vector<Vec> x_goal;  // indexed by environment state
  std::vector<Vec> u_goal;
};

struct HorizonSpec {
  int N = 0;   // total steps
  int Nb = 0;  // steps between observation incorporations

  int segments() const { return N / Nb; }  // P
};

/// A complete problem instance.
struct ScenarioSpec {
  std::string name;
  LinearSystem system;
  Polytope input_set;
  Polytope state_set;
  RegionPartition partition;
  ObservationModel obs;
  TransitionModel trans;
  CostSpec cost;
  HorizonSpec horizon;
  Vec x0;
  Vec b0;
  // Optional metadata: obstacle polytopes implied by a free-space tiling.
  // Never consumed by the solver; kept for output validation.
  std::vector<Polytope> obstacles;

  int state_dim() const { return system.state_dim(); }
  int input_dim() const { return system.input_dim(); }
  int num_env() const { return obs.num_env; }
  int num_obs() const { return obs.num_obs; }
  int num_regions() const { return partition.count(); }
};

/// Checks every model invariant; throws ValidationError naming the first violation.
void validate(const ScenarioSpec& spec);

/// Loads and validates a scenario JSON file.
ScenarioSpec load_scenario(const std::string& path);

/// Parses and validates a scenario from a JSON string.
ScenarioSpec parse_scenario(const std::string& text);

/// Serializes a scenario to the same JSON schema load_scenario reads.
/// Round-trips all matrix entries exactly.
std::string scenario_to_json(const ScenarioSpec& spec);
void save_scenario(const ScenarioSpec& spec, const std::string& path);

}  // namespace moclqr
