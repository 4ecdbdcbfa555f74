#include "safeobs/gp.hpp"

#include <Eigen/Cholesky>
#include <cmath>

#include <nlohmann/json.hpp>

namespace safeobs {

void KernelSpec::validate(int input_dim) const {
    if (!(sigma0 > 0.0)) throw InvalidInputError("KernelSpec: sigma0 must be positive");
    if (lengthscales.size() != 1 && lengthscales.size() != input_dim)
        throw InvalidInputError("KernelSpec: ARD length-scale count mismatch");
    if ((lengthscales.array() <= 0.0).any())
        throw InvalidInputError("KernelSpec: length-scales must be positive");
    if (jitter < 0.0) throw InvalidInputError("KernelSpec: jitter must be nonnegative");
}

namespace {

double scaled_sq_dist(const KernelSpec& spec, const Vector& a, const Vector& b) {
    double acc = 0.0;
    for (int d = 0; d < a.size(); ++d) {
        const double dd = (a(d) - b(d)) / spec.lengthscale_for(d);
        acc += dd * dd;
    }
    return acc;
}

constexpr double kSqrt5 = 2.2360679774997896964091736687747;

} // namespace

double kernel_eval(const KernelSpec& spec, const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw InvalidInputError("kernel_eval: dimension mismatch");
    if (!a.allFinite() || !b.allFinite())
        throw InvalidInputError("kernel_eval: non-finite input");
    const double r2 = scaled_sq_dist(spec, a, b);
    if (spec.kind == KernelKind::SquaredExponential) {
        return spec.sigma0 * spec.sigma0 * std::exp(-0.5 * r2);
    }
    const double r = std::sqrt(r2);
    const double pref = spec.squared_prefactor ? spec.sigma0 * spec.sigma0 : spec.sigma0;
    return pref * (1.0 + kSqrt5 * r + (5.0 / 3.0) * r2) * std::exp(-kSqrt5 * r);
}

namespace {

Matrix gram_matrix(const KernelSpec& spec, const Matrix& X) {
    const int j = static_cast<int>(X.rows());
    Matrix K(j, j);
    for (int a = 0; a < j; ++a) {
        for (int b = 0; b <= a; ++b) {
            K(a, b) = kernel_eval(spec, X.row(a), X.row(b));
            K(b, a) = K(a, b);
        }
    }
    return K;
}

} // namespace

GpModel fit(const Matrix& inputs, const Vector& targets, const KernelSpec& spec) {
    if (inputs.rows() < 1) throw InvalidInputError("fit: need at least one point");
    if (inputs.rows() != targets.size())
        throw InvalidInputError("fit: inputs/targets length mismatch");
    spec.validate(static_cast<int>(inputs.cols()));

    GpModel m;
    m.kernel = spec;
    m.inputs = inputs;
    m.targets = targets;

    const Matrix K = gram_matrix(spec, inputs);
    double jitter = spec.jitter;
    for (;;) {
        Matrix Kj = K;
        Kj.diagonal().array() += jitter;
        Eigen::LLT<Matrix> llt(Kj);
        if (llt.info() == Eigen::Success) {
            m.gram_factor = llt.matrixL();
            m.alpha = llt.solve(targets);
            m.jitter_used = jitter;
            return m;
        }
        if (jitter >= 1e-4)
            throw IllConditionedGramError(
                "fit: Gram matrix not positive definite after jitter escalation");
        jitter = jitter == 0.0 ? 1e-12 : jitter * 10.0;
    }
}

GpPrediction predict(const GpModel& model, const Vector& p) {
    const int j = model.size();
    Vector k(j);
    for (int i = 0; i < j; ++i) k(i) = kernel_eval(model.kernel, model.inputs.row(i), p);
    GpPrediction out;
    out.mean = k.dot(model.alpha);
    const Vector v = model.gram_factor.triangularView<Eigen::Lower>().solve(k);
    out.variance = std::max(0.0, kernel_eval(model.kernel, p, p) - v.squaredNorm());
    return out;
}

double log_marginal_likelihood(const GpModel& model) {
    const int j = model.size();
    double logdet_half = 0.0;
    for (int i = 0; i < j; ++i) logdet_half += std::log(model.gram_factor(i, i));
    return -0.5 * model.targets.dot(model.alpha) - logdet_half -
           0.5 * j * std::log(2.0 * M_PI);
}

// ---------------------------------------------------------------------------
// hyperparameter optimization
// ---------------------------------------------------------------------------

namespace {

// negative log marginal likelihood and gradient w.r.t. log-hyperparameters
// theta = [log sigma0, log l_1 .. log l_d]
struct NllEval {
    double value = std::numeric_limits<double>::infinity();
    Vector grad;
    bool ok = false;
};

NllEval nll_with_grad(const Vector& theta, const Matrix& X, const Vector& y, KernelKind kind,
                      double jitter, bool squared_prefactor) {
    const int j = static_cast<int>(X.rows());
    const int d = static_cast<int>(X.cols());
    NllEval out;
    out.grad = Vector::Zero(theta.size());

    KernelSpec spec;
    spec.kind = kind;
    spec.sigma0 = std::exp(theta(0));
    spec.lengthscales = theta.tail(theta.size() - 1).array().exp();
    spec.jitter = jitter;
    spec.squared_prefactor = squared_prefactor;

    Matrix K = gram_matrix(spec, X);
    K.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(K);
    if (llt.info() != Eigen::Success) return out;
    const Vector alpha = llt.solve(y);
    double logdet_half = 0.0;
    const Matrix Lf = llt.matrixL();
    for (int i = 0; i < j; ++i) logdet_half += std::log(Lf(i, i));
    out.value = 0.5 * y.dot(alpha) + logdet_half + 0.5 * j * std::log(2.0 * M_PI);

    // dNLL/dtheta_k = -1/2 tr((alpha alpha^T - K^{-1}) dK/dtheta_k)
    const Matrix Kinv = llt.solve(Matrix::Identity(j, j));
    const Matrix W = alpha * alpha.transpose() - Kinv;

    const bool ard = theta.size() - 1 == d;
    for (int a = 0; a < j; ++a) {
        for (int b = 0; b <= a; ++b) {
            const double w = (a == b) ? W(a, b) : 2.0 * W(a, b);
            const Vector diff = X.row(a) - X.row(b);
            double r2 = 0.0;
            Vector comp(d); // per-dimension (delta_d / l_d)^2
            for (int c = 0; c < d; ++c) {
                const double ls = spec.lengthscale_for(c);
                comp(c) = (diff(c) / ls) * (diff(c) / ls);
                r2 += comp(c);
            }
            double kval, dk_dlogs0, dk_dr2; // dk/d(r^2)
            if (kind == KernelKind::SquaredExponential) {
                kval = spec.sigma0 * spec.sigma0 * std::exp(-0.5 * r2);
                dk_dlogs0 = 2.0 * kval;
                dk_dr2 = -0.5 * kval;
            } else {
                const double r = std::sqrt(r2);
                const double pref =
                    squared_prefactor ? spec.sigma0 * spec.sigma0 : spec.sigma0;
                const double e = std::exp(-kSqrt5 * r);
                kval = pref * (1.0 + kSqrt5 * r + (5.0 / 3.0) * r2) * e;
                dk_dlogs0 = (squared_prefactor ? 2.0 : 1.0) * kval;
                // dk/dr = -(5/3) pref r (1 + sqrt5 r) e; dk/d(r^2) = dk/dr / (2r)
                dk_dr2 = r > 0 ? -(5.0 / 6.0) * pref * (1.0 + kSqrt5 * r) * e
                               : -(5.0 / 6.0) * pref;
            }
            out.grad(0) += -0.5 * w * dk_dlogs0;
            // d(r^2)/d(log l_c) = -2 comp(c); scalar lengthscale sums over c
            if (ard) {
                for (int c = 0; c < d; ++c)
                    out.grad(1 + c) += -0.5 * w * dk_dr2 * (-2.0 * comp(c));
            } else {
                out.grad(1) += -0.5 * w * dk_dr2 * (-2.0 * r2);
            }
        }
    }
    out.ok = true;
    return out;
}

} // namespace

HyperoptResult optimize_hyperparameters(const Matrix& inputs, const Vector& targets,
                                        KernelKind kind, int n_starts, Rng& rng, bool ard,
                                        double jitter, const HyperparameterBounds& bounds,
                                        const KernelSpec* warm_start) {
    if (inputs.rows() < 2)
        throw InvalidInputError("optimize_hyperparameters: need at least two points");
    const int d = static_cast<int>(inputs.cols());
    const int ntheta = 1 + (ard ? d : 1);

    Vector lo(ntheta), hi(ntheta);
    lo(0) = std::log(bounds.sigma0_lo);
    hi(0) = std::log(bounds.sigma0_hi);
    for (int i = 1; i < ntheta; ++i) {
        lo(i) = std::log(bounds.length_lo);
        hi(i) = std::log(bounds.length_hi);
    }
    auto clamp = [&](Vector t) {
        for (int i = 0; i < ntheta; ++i) t(i) = std::clamp(t(i), lo(i), hi(i));
        return t;
    };
    auto eval = [&](const Vector& t) {
        return nll_with_grad(t, inputs, targets, kind, jitter,
                             warm_start ? warm_start->squared_prefactor : false);
    };

    // data-scale heuristic start plus random restarts
    std::vector<Vector> starts;
    {
        Vector t0(ntheta);
        const double ystd = std::sqrt(
            std::max(1e-12, (targets.array() - targets.mean()).square().mean()));
        t0(0) = std::clamp(std::log(ystd), lo(0), hi(0));
        double span = 0.0;
        for (int c = 0; c < d; ++c)
            span = std::max(span, inputs.col(c).maxCoeff() - inputs.col(c).minCoeff());
        const double l0 = std::clamp(span > 0 ? 0.3 * span : 1.0,
                                     bounds.length_lo, bounds.length_hi);
        for (int i = 1; i < ntheta; ++i) t0(i) = std::log(l0);
        starts.push_back(t0);
    }
    if (warm_start) {
        Vector tw(ntheta);
        tw(0) = std::log(warm_start->sigma0);
        for (int i = 1; i < ntheta; ++i)
            tw(i) = std::log(warm_start->lengthscale_for(
                std::min(i - 1, static_cast<int>(warm_start->lengthscales.size()) - 1)));
        starts.push_back(clamp(tw));
    }
    while (static_cast<int>(starts.size()) < n_starts) {
        Vector t(ntheta);
        for (int i = 0; i < ntheta; ++i) t(i) = rng.uniform(lo(i), hi(i));
        starts.push_back(t);
    }

    Vector best_theta = starts.front();
    double best_val = std::numeric_limits<double>::infinity();
    bool any_success = false;

    for (const auto& start : starts) {
        Vector theta = clamp(start);
        NllEval cur = eval(theta);
        if (cur.ok && cur.value < best_val) {
            best_val = cur.value;
            best_theta = theta;
        }
        if (!cur.ok) continue;

        // BFGS with backtracking; bound handling by projection + reset
        Matrix Hinv = Matrix::Identity(ntheta, ntheta);
        bool progressed = false;
        for (int it = 0; it < 60; ++it) {
            Vector dir = -(Hinv * cur.grad);
            if (dir.dot(cur.grad) > 0) {
                Hinv = Matrix::Identity(ntheta, ntheta);
                dir = -cur.grad;
            }
            double step = 1.0;
            NllEval nxt;
            Vector theta_n;
            bool accepted = false;
            for (int ls = 0; ls < 30; ++ls) {
                theta_n = clamp(theta + step * dir);
                nxt = eval(theta_n);
                if (nxt.ok && nxt.value <= cur.value + 1e-4 * cur.grad.dot(theta_n - theta)) {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) break;
            progressed = true;
            const Vector s = theta_n - theta;
            const Vector yv = nxt.grad - cur.grad;
            const double sy = s.dot(yv);
            if (sy > 1e-12) {
                const Matrix I = Matrix::Identity(ntheta, ntheta);
                Hinv = (I - s * yv.transpose() / sy) * Hinv *
                           (I - yv * s.transpose() / sy) +
                       s * s.transpose() / sy;
            } else {
                Hinv = Matrix::Identity(ntheta, ntheta);
            }
            theta = theta_n;
            cur = nxt;
            if (cur.grad.cwiseAbs().maxCoeff() < 1e-8) break;
        }
        any_success = any_success || progressed;
        if (cur.ok && cur.value < best_val) {
            best_val = cur.value;
            best_theta = theta;
        }
    }

    HyperoptResult out;
    out.spec.kind = kind;
    out.spec.sigma0 = std::exp(best_theta(0));
    out.spec.lengthscales = best_theta.tail(ntheta - 1).array().exp();
    out.spec.jitter = jitter;
    if (warm_start) out.spec.squared_prefactor = warm_start->squared_prefactor;
    out.log_likelihood = -best_val;
    out.line_search_warning = !any_success;
    return out;
}

nlohmann::json GpModel::to_json() const {
    nlohmann::json j;
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < inputs.cols(); ++c) row.push_back(inputs(i, c));
        rows.push_back(std::move(row));
    }
    j["inputs"] = std::move(rows);
    j["targets"] = std::vector<double>(targets.data(), targets.data() + targets.size());
    j["kernel"] = {{"kind", kernel.kind == KernelKind::Matern52 ? "matern52" : "se"},
                   {"sigma0", kernel.sigma0},
                   {"lengthscales",
                    std::vector<double>(kernel.lengthscales.data(),
                                        kernel.lengthscales.data() + kernel.lengthscales.size())},
                   {"jitter", kernel.jitter},
                   {"squared_prefactor", kernel.squared_prefactor}};
    j["jitter_used"] = jitter_used;
    return j;
}

} // namespace safeobs
