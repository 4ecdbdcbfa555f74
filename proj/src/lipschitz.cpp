#include "safeobs/lipschitz.hpp"

#include <cmath>

namespace safeobs {

BoxDomain::BoxDomain(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size() || lower.size() == 0)
        throw InvalidInputError("BoxDomain: bound dimension mismatch");
    if (!lower.allFinite() || !upper.allFinite())
        throw InvalidInputError("BoxDomain: bounds must be finite");
    if (((upper - lower).array() <= 0.0).any())
        throw InvalidInputError("BoxDomain: lower must be strictly below upper");
}

namespace {

double jacobian_norm(const Matrix& J, JacobianNorm norm) {
    if (norm == JacobianNorm::Frobenius) return J.norm();
    return std::sqrt(std::max(0.0, max_eig(SymMatrix(J.transpose() * J))));
}

} // namespace

double analytic_lipschitz_bound(const BasisExpansion& expansion, const BoxDomain& box,
                                int grid_per_dim, double safety_factor, JacobianNorm norm) {
    if (grid_per_dim < 2)
        throw InvalidInputError("analytic_lipschitz_bound: grid_per_dim must be >= 2");
    if (expansion.psi.empty())
        throw UnsupportedBasisError("analytic_lipschitz_bound: empty basis");
    const int d = box.dim();

    double max_norm = 0.0;
    Vector q(d);
    std::vector<int> idx(d, 0);
    // uniform grid including both endpoints, so all box corners are visited
    for (;;) {
        for (int k = 0; k < d; ++k) {
            const double t = static_cast<double>(idx[k]) / (grid_per_dim - 1);
            q(k) = box.lower(k) + t * (box.upper(k) - box.lower(k));
        }
        max_norm = std::max(max_norm, jacobian_norm(eval_basis_gradient(expansion, q), norm));
        int k = 0;
        while (k < d && ++idx[k] == grid_per_dim) idx[k++] = 0;
        if (k == d) break;
    }
    return expansion.flat_coeffs().norm() * max_norm * safety_factor;
}

double sampled_lipschitz_estimate(const std::function<Vector(const Vector&)>& fn,
                                  const BoxDomain& box, long n_pairs, double inflation,
                                  Rng& rng) {
    if (n_pairs < 1) throw InvalidInputError("sampled_lipschitz_estimate: n_pairs must be >= 1");
    if (inflation < 1.0)
        throw InvalidInputError("sampled_lipschitz_estimate: inflation must be >= 1");
    const int d = box.dim();
    double best = -1.0;
    for (long i = 0; i < n_pairs; ++i) {
        Vector a(d), b(d);
        for (int k = 0; k < d; ++k) {
            a(k) = rng.uniform(box.lower(k), box.upper(k));
            b(k) = rng.uniform(box.lower(k), box.upper(k));
        }
        const double dist = (a - b).norm();
        if (dist == 0.0) continue; // degenerate pair
        const double slope = (fn(a) - fn(b)).norm() / dist;
        best = std::max(best, slope);
    }
    if (best < 0.0)
        throw InvalidInputError("sampled_lipschitz_estimate: all sampled pairs degenerate");
    return best * inflation;
}

} // namespace safeobs
