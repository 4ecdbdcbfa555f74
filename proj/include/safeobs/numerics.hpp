#pragma once

#include <stdexcept>
#include <string>

namespace safeobs {

// Centralized numerical tolerances. Every module reads its thresholds from
// here so a single record controls the numerics of the whole pipeline.
struct NumericsConfig {
    double sym_tol = 1e-12;            // symmetry check on SymMatrix entries
    double eig_reconstruct_tol = 1e-9; // relative tolerance of V*D*V^T - M
    double chol_tol = 1e-9;            // relative tolerance of L*L^T - M
    double spectral_tol = 1e-8;        // non-symmetric eigenvalue accuracy
    double gain_consistency_tol = 1e-8;    // ||P*L - K|| <= tol*(1+||K||)
    double lmi_block_eig_tol = 1e-7;       // solver post-check on LMI blocks
    double scalar_constraint_tol = 1e-8;   // solver post-check on 1x1 blocks
    double duality_gap_tol = 1e-7;         // interior-point termination
    double kappa_zero_tol = 1e-6;          // "kappa0 equals zero" threshold
    double certificate_scale = 3e-6;   // reported scale of homogeneous certificates
    double cert_residual_tol = 1e-6;   // verify_certificate Lyapunov residual
    double divergence_guard = 1e6;     // plant/observer state explosion bound
    int sdp_max_iterations = 200;      // Newton step cap per SDP solve
    int sdp_variable_cap = 200;        // total scalar unknowns allowed
    double lambda_kappa = 1e-3;        // default regularizer weight
};

inline const NumericsConfig& default_numerics() {
    static const NumericsConfig cfg{};
    return cfg;
}

// Error hierarchy shared by all modules.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidInputError : Error {
    explicit InvalidInputError(const std::string& msg) : Error(msg) {}
};

struct NotPositiveDefiniteError : Error {
    int pivot; // first failing pivot index
    NotPositiveDefiniteError(const std::string& msg, int pivot_index)
        : Error(msg), pivot(pivot_index) {}
};

struct DivergenceError : Error {
    long step; // time index at which the explosion guard tripped
    DivergenceError(const std::string& msg, long t) : Error(msg), step(t) {}
};

struct NoDesignError : Error {
    explicit NoDesignError(const std::string& msg) : Error(msg) {}
};

struct SafetyViolationError : Error {
    explicit SafetyViolationError(const std::string& msg) : Error(msg) {}
};

struct IllConditionedGramError : Error {
    explicit IllConditionedGramError(const std::string& msg) : Error(msg) {}
};

struct UnsupportedBasisError : Error {
    explicit UnsupportedBasisError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

} // namespace safeobs
