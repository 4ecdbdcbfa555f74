#pragma once

#include <functional>

#include "safeobs/rng.hpp"
#include "safeobs/system_sim.hpp"

namespace safeobs {

struct BoxDomain {
    Vector lower, upper;

    BoxDomain(Vector lo, Vector hi);
    int dim() const { return static_cast<int>(lower.size()); }
};

enum class JacobianNorm { Spectral, Frobenius };

// ||p|| * max over a uniform grid (box corners included) of the basis-Jacobian
// norm, inflated by the safety factor to cover grid gaps.
double analytic_lipschitz_bound(const BasisExpansion& expansion, const BoxDomain& box,
                                int grid_per_dim, double safety_factor = 1.05,
                                JacobianNorm norm = JacobianNorm::Spectral);

// Pairwise-slope overestimate of a black-box map: max ||f(q)-f(q')||/||q-q'||
// over sampled pairs, times the inflation factor.
double sampled_lipschitz_estimate(const std::function<Vector(const Vector&)>& fn,
                                  const BoxDomain& box, long n_pairs, double inflation,
                                  Rng& rng);

} // namespace safeobs
