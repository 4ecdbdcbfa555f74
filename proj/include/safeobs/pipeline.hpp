#pragma once

#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "safeobs/bayes_opt.hpp"
#include "safeobs/lipschitz.hpp"
#include "safeobs/lmi_synthesis.hpp"

namespace safeobs {

enum class LipschitzEstimator { Analytic, Sampled };
enum class RedesignFallback { KeepInitial, Search };

struct RedesignOptions {
    LipschitzEstimator estimator = LipschitzEstimator::Analytic;
    Vector box_lo, box_hi;
    int grid_per_dim = 41;
    double safety_factor = 1.05;
    long n_pairs = 100000;
    double inflation = 1.05;
    bool p_bound_from_learned = true; // use ||p_inf|| instead of the configured bound
    RedesignFallback on_infeasible = RedesignFallback::Search;
};

struct PipelineConfig {
    int version = 1;
    std::uint64_t seed = 0;
    std::string out_dir = "run";
    int threads = 1;

    SystemModel system;
    BasisExpansion basis;
    double p_bound = 1e-2;
    double timestep = 0.0; // informational, for trajectory metadata

    double search_lo = 0.0, search_hi = 10.0, search_tol = 1e-2;
    LineSearchMethod search_method = LineSearchMethod::Bisection;
    double lambda_kappa = 1e-3;

    LearningConfig learning;
    Vector sim_x0, sim_xhat0;
    int sim_T = 4000;

    RedesignOptions redesign;

    // canonical serialization used for the manifest hash
    nlohmann::json to_json() const;
};

// Strict parse: unknown fields anywhere are a ConfigError.
PipelineConfig parse_config(const nlohmann::json& j);
PipelineConfig load_config(const std::string& path);

// Section 6 reproduction settings (tau = 0.01, T = 40 s, W1 = 200, W2 = 1,
// eps_EI = 0.01, N = 200, M = 1000, Lipschitz box [-5,5]^2).
PipelineConfig vdp_reproduction_config(const std::string& out_dir, std::uint64_t seed);

struct Phase1Artifacts {
    double lipschitz = 0.0;
    LmiSolution solution;
    CertificateReport report;
    double schur_radius_plus = 0.0;  // rho(A + L C), our convention
    double schur_radius_minus = 0.0; // rho(A - L C), for cross-checking reported gains
};

struct Phase3Artifacts {
    bool redesigned = false;
    std::string outcome; // "estimate-feasible", "search", "kept-initial"
    double lipschitz_estimate = 0.0;
    double lipschitz_certified = 0.0;
    LmiSolution solution;
    CertificateReport report;
    double learned_energy = 0.0;
    double redesigned_energy = 0.0;
};

struct RunArtifacts {
    std::optional<Phase1Artifacts> phase1;
    std::optional<LearningState> learning;
    std::optional<Phase3Artifacts> phase3;
};

Phase1Artifacts cmd_design_initial(const PipelineConfig& cfg);
LearningState cmd_learn(const PipelineConfig& cfg, const Phase1Artifacts& phase1);
Phase3Artifacts cmd_redesign(const PipelineConfig& cfg, const Phase1Artifacts& phase1,
                             const LearningState& learning);

enum class SimulationVariant { Initial, Learned, Redesigned };

struct SimulationSummary {
    Trajectory trajectory;
    double output_error_energy = 0.0;
    double terminal_error_norm = 0.0;
};

SimulationSummary cmd_simulate(const PipelineConfig& cfg, const RunArtifacts& artifacts,
                               SimulationVariant which);

struct ReproductionSummary {
    double lipschitz_initial = 0.0;
    double energy_initial = 0.0;
    double energy_learned = 0.0;
    double energy_redesigned = 0.0;
    int learning_iterations = 0;
    std::string termination_reason;
    RunArtifacts artifacts;
};

ReproductionSummary cmd_reproduce_vdp(const std::string& out_dir, std::uint64_t seed = 20240117);

// artifact persistence
void write_phase1(const std::string& dir, const Phase1Artifacts& a);
Phase1Artifacts read_phase1(const std::string& dir, const PipelineConfig& cfg);
void write_learning(const std::string& dir, const LearningState& s);
LearningState read_learning(const std::string& dir);
void write_phase3(const std::string& dir, const Phase3Artifacts& a);
void write_manifest(const std::string& dir, const PipelineConfig& cfg);

std::uint64_t config_hash(const PipelineConfig& cfg);

} // namespace safeobs
