#pragma once

#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "safeobs/sdp.hpp"
#include "safeobs/system_sim.hpp"

namespace safeobs {

// Observer-gain certificate produced by the design SDPs. Error dynamics use
// the e+ = (A + L C) e convention throughout; a gain reported by external
// sources for the A - L C convention is the negation of ours.
struct LmiSolution {
    Matrix P;
    Matrix Q;
    Matrix K;      // n_x x n_y
    Matrix L;      // P^{-1} K
    double kappa[4] = {0, 0, 0, 0};
    double objective = 0.0;
    SdpStatus status = SdpStatus::MaxIterations;
    double delta0 = 0.0;
    double delta1 = 0.0;
    double lipschitz = 0.0;    // constant the certificate was produced for
    std::string mode = "initial";
    Matrix B_phi;              // selection matrix, redesign certificates only

    nlohmann::json to_json() const;
    static LmiSolution from_json(const nlohmann::json& j);
};

struct CertificateReport {
    double lyap_residual = 0.0;   // max eigenvalue of the assembled LMI residual
    double gain_cond_slack = 0.0; // LHS - RHS of the scalar gain condition
    double schur_radius = 0.0;
    bool passed = false;

    nlohmann::json to_json() const;
};

// Design problem behind the initial observer gain: the Lyapunov-decrease
// block is relaxed by a nonnegative slack kappa0 which measures infeasibility
// of the hard design; kappa1..kappa3 bound lambda_min(Q), lambda_max(P) and
// ||PA+KC||_F so the scalar gain condition becomes linear. The solution scale
// is pinned by P >= I.
struct InitialDesignProblem {
    SdpProblem prob;
    Eigen::MatrixXi P, Q, K;
    int k0 = -1, k1 = -1, k2 = -1, k3 = -1;
};

InitialDesignProblem build_initial_design_problem(const SystemModel& sys, double p_bound,
                                                  double lipschitz, double lambda_kappa,
                                                  const NumericsConfig& cfg = default_numerics());

// The feasibility predicate the line search bisects on: a design whose slack,
// reported at certificate scale, stays inside the zero threshold.
bool initial_design_feasible(const SystemModel& sys, double p_bound, double lipschitz,
                             const NumericsConfig& cfg = default_numerics());

// Redesign problem using the learned-model structure. B_phi selects the
// state rows the learned expansion feeds; C_q enters through the
// lipschitz-weighted rows. No normalization: the identity blocks pin scale.
// When fixed_gain is provided the gain is not a decision variable and the
// problem certifies that specific gain.
struct RedesignProblem {
    SdpProblem prob;
    Eigen::MatrixXi P, Q, K; // K empty when a fixed gain is certified
    int k0 = -1, k1 = -1, k2 = -1, k3 = -1;
    bool gain_fixed = false;
};

RedesignProblem build_redesign_problem(const SystemModel& sys, double lipschitz, double p_bound,
                                       const Matrix& B_phi,
                                       const std::optional<Matrix>& fixed_gain = std::nullopt,
                                       const NumericsConfig& cfg = default_numerics());

// Extracts matrices from an SDP solution of one of the design problems.
LmiSolution extract_initial_solution(const InitialDesignProblem& d, const SdpSolution& sol,
                                     const SystemModel& sys, double lipschitz, double scale);
LmiSolution extract_redesign_solution(const RedesignProblem& d, const SdpSolution& sol,
                                      const SystemModel& sys, double lipschitz,
                                      const Matrix& B_phi,
                                      const std::optional<Matrix>& fixed_gain);

enum class LineSearchMethod { Bisection, GoldenSection };

struct LineSearchResult {
    double lipschitz = 0.0;
    LmiSolution solution;
};

// Largest Lipschitz constant in [lo, hi] for which the initial design is
// feasible (slack kappa0, reported at certificate scale, below the zero
// threshold). Feasibility is monotone in the constant, so bisection finds the
// boundary; golden-section is available behind the flag.
LineSearchResult line_search_lipschitz(const SystemModel& sys, double p_bound,
                                       double lo, double hi, double tol, double lambda_kappa,
                                       LineSearchMethod method = LineSearchMethod::Bisection,
                                       const NumericsConfig& cfg = default_numerics());

enum class CertificateMode { Initial, Redesign };

// Recomputes every certificate condition from the raw matrices; never trusts
// solver internals. For redesign mode the assembled 4-block residual is used.
CertificateReport verify_certificate(const LmiSolution& sol, const SystemModel& sys,
                                     double lipschitz, double p_bound, CertificateMode mode,
                                     const NumericsConfig& cfg = default_numerics());

// Solves the redesign problem at the given constant, two-stage (feasibility
// slack first, then the kappa regularizer). Returns nullopt when infeasible.
std::optional<LmiSolution> solve_redesign_at(const SystemModel& sys, double lipschitz,
                                             double p_bound, const Matrix& B_phi,
                                             const std::optional<Matrix>& fixed_gain = std::nullopt,
                                             const NumericsConfig& cfg = default_numerics());

// Largest certifiable redesign constant in (0, hi] for a fixed or free gain.
std::optional<LineSearchResult> redesign_certifiable_bound(
    const SystemModel& sys, double hi, double p_bound, const Matrix& B_phi,
    const std::optional<Matrix>& fixed_gain = std::nullopt, double tol = 1e-3,
    const NumericsConfig& cfg = default_numerics());

} // namespace safeobs
