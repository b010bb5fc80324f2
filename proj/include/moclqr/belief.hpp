#pragma once

// Belief-coordinate machinery for a partially observed discrete environment
// state.  Three coordinate systems share one underlying object:
//
//   b  normalized posterior (simplex vector),
//   v  unnormalized belief: posterior scaled by the probability of the
//      observation sequence that produced it; propagates linearly,
//   z  elementwise reciprocal of v; the coordinate change that makes
//      expected quadratic costs jointly convex in (states, z).

#include "moclqr/model.hpp"

#include <utility>

namespace moclqr {

struct Belief {
  Vec b;
};

struct UnnormalizedBelief {
  Vec v;
};

struct InverseBelief {
  Vec z;
};

// Diagonal likelihood matrix: entry [e,e] is the probability of observing o
// in the given region when the environment state is e.
Mat theta_matrix(const ObservationModel& obs, int region, int o);

// One-step unnormalized propagation matrix Theta * Omega.  For a static
// environment this is theta_matrix exactly.
Mat ae_matrix(const ObservationModel& obs, const TransitionModel& trans, int region, int o);

// Diagonal inverse-likelihood matrix: entry [e,e] is 1 / M_region(e,o).
// Propagates inverse beliefs for static environments.
Mat d_matrix(const ObservationModel& obs, int region, int o);

// Bayes posterior and the normalization constant P(o | region, b).
std::pair<Belief, double> belief_update(const ObservationModel& obs, const TransitionModel& trans,
                                        const Belief& b, int region, int o);

UnnormalizedBelief unnormalized_update(const ObservationModel& obs, const TransitionModel& trans,
                                       const UnnormalizedBelief& v, int region, int o);

// Static environments only: z' = z / M_region(e,o) elementwise.
InverseBelief inverse_update(const ObservationModel& obs, const InverseBelief& z, int region,
                             int o);

// Per-step belief propagation matrix along a planned trajectory: observations
// are incorporated exactly at positive multiples of Nb, every other step is a
// plain environment transition.
Mat ce_matrix(const ScenarioSpec& spec, int k, int region, int o);

// A priori elementwise cap on any inverse belief reachable after k-1 updates
// from z0: worst single-step growth factor, compounded.
Vec z_upper_bound(const ScenarioSpec& spec, const InverseBelief& z0, int k);

}  // namespace moclqr
