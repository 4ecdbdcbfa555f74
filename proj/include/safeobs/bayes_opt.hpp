#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "safeobs/gp.hpp"
#include "safeobs/system_sim.hpp"

namespace safeobs {

enum class IncumbentRule { ObservedMax, SurrogateMax };
enum class TerminalCoefficients { BestObserved, LastProposal };

struct LearningConfig {
    Vector box_lo, box_hi;        // candidate set, componentwise box
    int samples_per_iteration = 1000;
    int max_iterations = 200;
    double ei_threshold = 0.01;
    std::uint64_t seed = 0;
    Matrix W1, W2;
    Vector anchor;
    int T_learn = 0;
    int t_star = 0;
    Vector p0;                    // initial coefficients (defaults to zero)
    Vector x0, xhat0;
    KernelKind kernel = KernelKind::Matern52;
    int hyperopt_starts = 5;
    double jitter = 1e-10;
    bool standardize_targets = true;
    IncumbentRule incumbent_rule = IncumbentRule::ObservedMax;
    TerminalCoefficients terminal = TerminalCoefficients::BestObserved;
    int min_observations = 5;     // before the termination rule is consulted
    BatchPenalty penalty;

    void validate() const;
};

struct TraceRow {
    int iteration = 0;
    double reward = 0.0;
    double incumbent = 0.0;
    double max_ei = 0.0;
    double sigma0 = 0.0;
    Vector lengthscales;
};

struct LearningState {
    Matrix inputs;   // j x n_p dataset coefficients
    Vector rewards;  // j
    Vector best_p;
    double best_reward = 0.0;
    int iterations = 0;
    bool terminated_by_ei = false;
    std::string termination_reason;
    std::vector<TraceRow> trace;
    KernelSpec final_kernel;

    nlohmann::json to_json() const;
    void write_trace_csv(const std::string& path) const;
};

struct RegretLog {
    std::vector<double> instantaneous;
    std::vector<double> cumulative;

    nlohmann::json to_json() const;
};

// Closed-form expected improvement under N(mu, sigma^2) with the given
// incumbent; exactly zero when the predictive deviation is zero.
double expected_improvement(const GpModel& model, const Vector& p, double incumbent);
double expected_improvement(double mean, double stddev, double incumbent);

struct Proposal {
    Vector p;
    double max_ei = 0.0;
    bool termination_eligible = false; // all candidate EI values were zero
    int index = -1;                    // winning sample index (ties: lowest)
};

// Draws M uniform candidates from the box and returns the EI maximizer.
Proposal propose_next(const GpModel& model, const LearningConfig& cfg, Rng& rng,
                      double incumbent);

bool should_terminate(const GpModel& model, const Matrix& candidates, double incumbent,
                      double ei_threshold);

// Phase-2 learning loop: batch rollout, reward, surrogate refit with
// hyperparameter optimization, EI proposal, termination check.
LearningState run_learning_loop(const SystemModel& sys, const Matrix& gain_L0,
                                const BasisExpansion& expansion_template,
                                const LearningConfig& cfg);

RegretLog cumulative_regret(const LearningState& state, double optimum);

// sqrt(N * zeta_N * chi_N) with zeta_t = 2 B_J + 300 chi_t log^3(t / delta)
double regret_bound(int N, double B_J, double chi_N, double delta);

} // namespace safeobs
