#pragma once

#include <nlohmann/json_fwd.hpp>

#include "safeobs/matrixcore.hpp"
#include "safeobs/numerics.hpp"
#include "safeobs/rng.hpp"

namespace safeobs {

enum class KernelKind { SquaredExponential, Matern52 };

// Hyperparameters of the surrogate kernel. The Matern 5/2 prefactor is
// sigma0 (not squared) matching the reference formula; set squared_prefactor
// to use sigma0^2 instead.
struct KernelSpec {
    KernelKind kind = KernelKind::Matern52;
    double sigma0 = 1.0;
    Vector lengthscales = Vector::Ones(1); // scalar or per-dimension (ARD)
    double jitter = 1e-10;
    bool squared_prefactor = false;

    double lengthscale_for(int dim) const {
        return lengthscales.size() == 1 ? lengthscales(0) : lengthscales(dim);
    }
    void validate(int input_dim) const;
};

double kernel_eval(const KernelSpec& spec, const Vector& a, const Vector& b);

struct GpModel {
    KernelSpec kernel;
    Matrix inputs;       // j x d
    Vector targets;      // j
    Matrix gram_factor;  // lower-triangular Cholesky of K + jitter I
    Vector alpha;        // (K + jitter I)^{-1} targets
    double jitter_used = 0.0;

    int size() const { return static_cast<int>(targets.size()); }

    nlohmann::json to_json() const;
};

// Fits the Gram factorization; escalates jitter by x10 up to 1e-4 when the
// factorization fails, then reports an ill-conditioned Gram matrix.
GpModel fit(const Matrix& inputs, const Vector& targets, const KernelSpec& spec);

struct GpPrediction {
    double mean = 0.0;
    double variance = 0.0; // clamped at zero from below
};

GpPrediction predict(const GpModel& model, const Vector& p);

double log_marginal_likelihood(const GpModel& model);

struct HyperparameterBounds {
    double sigma0_lo = 1e-4, sigma0_hi = 1e4;
    double length_lo = 1e-3, length_hi = 1e3;
};

struct HyperoptResult {
    KernelSpec spec;
    double log_likelihood = 0.0;
    bool line_search_warning = false; // all starts failed; best evaluated start returned
};

// Multi-start quasi-Newton maximization of the log marginal likelihood in
// log-hyperparameter space with analytic gradients. ARD when ard is true.
HyperoptResult optimize_hyperparameters(const Matrix& inputs, const Vector& targets,
                                        KernelKind kind, int n_starts, Rng& rng,
                                        bool ard = true, double jitter = 1e-10,
                                        const HyperparameterBounds& bounds = {},
                                        const KernelSpec* warm_start = nullptr);

} // namespace safeobs
