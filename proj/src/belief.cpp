#include "moclqr/belief.hpp"

#include <cmath>
#include <stdexcept>

namespace moclqr {

namespace {

void check_indices(const ObservationModel& obs, int region, int o) {
  if (region < 0 || region >= static_cast<int>(obs.tables.size()))
    throw std::out_of_range("region index out of range");
  if (o < 0 || o >= obs.num_obs) throw std::out_of_range("observation index out of range");
}

}  // namespace

Mat theta_matrix(const ObservationModel& obs, int region, int o) {
  check_indices(obs, region, o);
  return obs.tables[region].col(o).asDiagonal();
}

Mat ae_matrix(const ObservationModel& obs, const TransitionModel& trans, int region, int o) {
  if (trans.is_static) return theta_matrix(obs, region, o);
  return theta_matrix(obs, region, o) * trans.omega;
}

Mat d_matrix(const ObservationModel& obs, int region, int o) {
  check_indices(obs, region, o);
  return obs.tables[region].col(o).cwiseInverse().asDiagonal();
}

std::pair<Belief, double> belief_update(const ObservationModel& obs, const TransitionModel& trans,
                                        const Belief& b, int region, int o) {
  const Vec raw = ae_matrix(obs, trans, region, o) * b.b;
  const double likelihood = raw.sum();
  if (likelihood < 1e-300)
    throw ValidationError("belief update: observation likelihood underflow");
  return {Belief{raw / likelihood}, likelihood};
}

UnnormalizedBelief unnormalized_update(const ObservationModel& obs, const TransitionModel& trans,
                                       const UnnormalizedBelief& v, int region, int o) {
  return UnnormalizedBelief{ae_matrix(obs, trans, region, o) * v.v};
}

InverseBelief inverse_update(const ObservationModel& obs, const InverseBelief& z, int region,
                             int o) {
  check_indices(obs, region, o);
  return InverseBelief{z.z.cwiseQuotient(obs.tables[region].col(o))};
}

Mat ce_matrix(const ScenarioSpec& spec, int k, int region, int o) {
  if (k < 0 || k > spec.horizon.N) throw std::out_of_range("step index out of range");
  if (k > 0 && k % spec.horizon.Nb == 0) return ae_matrix(spec.obs, spec.trans, region, o);
  return spec.trans.omega;
}

Vec z_upper_bound(const ScenarioSpec& spec, const InverseBelief& z0, int k) {
  if (k < 1) throw std::out_of_range("z_upper_bound requires k >= 1");
  double worst = 0.0;
  for (const Mat& table : spec.obs.tables)
    worst = std::max(worst, table.cwiseInverse().maxCoeff());
  return std::pow(worst, k - 1) * z0.z;
}

}  // namespace moclqr
