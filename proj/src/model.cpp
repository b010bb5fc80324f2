#include "moclqr/model.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>

namespace moclqr {

namespace {

std::string dim_str(const Mat& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require(bool cond, const std::string& what) {
  if (!cond) throw ValidationError(what);
}

double min_eigenvalue(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

void check_psd(const Mat& m, const std::string& name) {
  require(m.rows() == m.cols(), name + " not square");
  require((m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + m.cwiseAbs().maxCoeff()),
          name + " not symmetric");
  require(min_eigenvalue(m) >= -1e-10, name + " not positive semi-definite");
}

// Deterministic sampled-point disjointness check for partition mode. Regions may
// share boundaries; a point strictly inside two regions is a violation.
void check_partition_disjoint(const RegionPartition& partition) {
  const int R = partition.count();
  if (R < 2) return;
  const int dim = partition.regions[0].dim();
  std::mt19937_64 rng(0x5eedu);
  auto uniform = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  const double box = 1e3;
  constexpr int kSamplesPerRegion = 256;
  constexpr int kMaxAttempts = 20000;
  for (int i = 0; i < R; ++i) {
    int found = 0;
    for (int attempt = 0; attempt < kMaxAttempts && found < kSamplesPerRegion; ++attempt) {
      Vec x(dim);
      for (int k = 0; k < dim; ++k) x[k] = box * (2.0 * uniform() - 1.0);
      if (partition.regions[i].violation(x) > -1e-6) continue;  // want strict interior
      ++found;
      for (int j = 0; j < R; ++j) {
        if (j == i) continue;
        if (partition.regions[j].violation(x) < -1e-6) {
          std::ostringstream os;
          os << "partition regions " << i << " and " << j << " overlap beyond a shared boundary";
          throw ValidationError(os.str());
        }
      }
    }
  }
}

}  // namespace

std::optional<int> region_of_state(const RegionPartition& partition, const Vec& x, double tol) {
  for (int i = 0; i < partition.count(); ++i) {
    if (partition.regions[i].violation(x) <= tol) return i;
  }
  return std::nullopt;
}

TransitionModel TransitionModel::identity(int num_env) {
  TransitionModel t;
  t.omega = Mat::Identity(num_env, num_env);
  t.is_static = true;
  return t;
}

void validate(const ScenarioSpec& spec) {
  const int n = spec.system.state_dim();
  const int d = spec.system.input_dim();

  require(n >= 1, "state dimension must be >= 1");
  require(d >= 1, "input dimension must be >= 1");
  require(spec.system.A.rows() == n && spec.system.A.cols() == n,
          "A must be square, got " + dim_str(spec.system.A));
  require(spec.system.B.rows() == n, "B row count must match state dimension");

  auto check_polytope = [&](const Polytope& p, int dim, const std::string& name) {
    require(p.H.cols() == dim, name + " column count does not match its space");
    require(p.H.rows() == p.h.size(), name + " row count of H must equal length of h");
    for (int i = 0; i < p.rows(); ++i) {
      require(p.H.row(i).cwiseAbs().maxCoeff() > 0.0, name + " has an all-zero row");
    }
  };
  check_polytope(spec.state_set, n, "state_set");
  check_polytope(spec.input_set, d, "input_set");

  require(spec.partition.count() >= 1, "at least one region required");
  for (int i = 0; i < spec.partition.count(); ++i) {
    check_polytope(spec.partition.regions[i], n, "region " + std::to_string(i));
  }
  if (spec.partition.mode == CoverageMode::Partition) {
    check_partition_disjoint(spec.partition);
  }

  const int E = spec.obs.num_env;
  const int O = spec.obs.num_obs;
  require(E >= 1 && O >= 1, "observation model dimensions must be >= 1");
  require(static_cast<int>(spec.obs.tables.size()) == spec.partition.count(),
          "one observation table required per region");
  for (size_t i = 0; i < spec.obs.tables.size(); ++i) {
    const Mat& M = spec.obs.tables[i];
    require(M.rows() == E && M.cols() == O,
            "observation table " + std::to_string(i) + " has wrong shape " + dim_str(M));
    for (int e = 0; e < E; ++e) {
      double row_sum = 0.0;
      for (int o = 0; o < O; ++o) {
        require(M(e, o) > 0.0 && M(e, o) < 1.0,
                "observation table " + std::to_string(i) +
                    " entry not strictly inside (0,1)");
        row_sum += M(e, o);
      }
      require(std::abs(row_sum - 1.0) <= 1e-12,
              "observation table " + std::to_string(i) + " row " + std::to_string(e) +
                  " does not sum to 1");
    }
  }

  require(spec.trans.omega.rows() == E && spec.trans.omega.cols() == E,
          "transition matrix must be |E|x|E|");
  for (int c = 0; c < E; ++c) {
    double col_sum = 0.0;
    for (int r = 0; r < E; ++r) {
      require(spec.trans.omega(r, c) >= 0.0 && spec.trans.omega(r, c) <= 1.0,
              "transition matrix entry outside [0,1]");
      col_sum += spec.trans.omega(r, c);
    }
    require(std::abs(col_sum - 1.0) <= 1e-12,
            "transition matrix column " + std::to_string(c) + " does not sum to 1");
  }
  if (spec.trans.is_static) {
    require((spec.trans.omega - Mat::Identity(E, E)).cwiseAbs().maxCoeff() == 0.0,
            "static transition model must have identity omega");
  }

  require(spec.cost.Q.rows() == n, "Q dimension must match state dimension");
  require(spec.cost.R.rows() == d, "R dimension must match input dimension");
  require(spec.cost.QN.rows() == n, "QN dimension must match state dimension");
  check_psd(spec.cost.Q, "Q");
  check_psd(spec.cost.R, "R");
  check_psd(spec.cost.QN, "QN");
  require(static_cast<int>(spec.cost.x_goal.size()) == E, "one state goal required per environment state");
  require(static_cast<int>(spec.cost.u_goal.size()) == E, "one input reference required per environment state");
  for (int e = 0; e < E; ++e) {
    require(spec.cost.x_goal[e].size() == n, "state goal dimension mismatch");
    require(spec.cost.u_goal[e].size() == d, "input reference dimension mismatch");
  }

  require(spec.horizon.N >= 1, "N must be >= 1");
  require(spec.horizon.Nb >= 1, "Nb must be >= 1");
  require(spec.horizon.N % spec.horizon.Nb == 0, "Nb must divide N");

  require(spec.x0.size() == n, "x0 dimension mismatch");
  require(spec.state_set.contains(spec.x0), "x0 violates state_set");
  require(spec.b0.size() == E, "b0 dimension mismatch");
  double b0_sum = 0.0;
  for (int e = 0; e < E; ++e) {
    require(spec.b0[e] > 0.0, "b0 not strictly positive");
    b0_sum += spec.b0[e];
  }
  require(std::abs(b0_sum - 1.0) <= 1e-10, "b0 does not sum to 1");

  for (size_t i = 0; i < spec.obstacles.size(); ++i) {
    check_polytope(spec.obstacles[i], n, "obstacle " + std::to_string(i));
  }
}

}  // namespace moclqr
