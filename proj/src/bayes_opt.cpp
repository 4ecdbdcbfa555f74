#include "safeobs/bayes_opt.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace safeobs {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014326779399460599344;

double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z * 0.7071067811865475244008443621048); }

} // namespace

void LearningConfig::validate() const {
    if (box_lo.size() == 0 || box_lo.size() != box_hi.size())
        throw InvalidInputError("LearningConfig: malformed candidate box");
    if ((box_hi - box_lo).minCoeff() <= 0.0)
        throw InvalidInputError("LearningConfig: empty candidate box");
    if (samples_per_iteration < 1)
        throw InvalidInputError("LearningConfig: samples_per_iteration must be >= 1");
    if (!(ei_threshold > 0.0))
        throw InvalidInputError("LearningConfig: ei_threshold must be positive");
    if (max_iterations < 1) throw InvalidInputError("LearningConfig: max_iterations must be >= 1");
    if (T_learn < 1) throw InvalidInputError("LearningConfig: T_learn must be >= 1");
    if (t_star < 0 || t_star >= T_learn)
        throw InvalidInputError("LearningConfig: t_star out of range");
}

double expected_improvement(double mean, double stddev, double incumbent) {
    if (!(stddev > 0.0)) return 0.0;
    const double z = (mean - incumbent) / stddev;
    const double ei = stddev * normal_pdf(z) + (mean - incumbent) * normal_cdf(z);
    return std::max(0.0, ei);
}

double expected_improvement(const GpModel& model, const Vector& p, double incumbent) {
    const auto pr = predict(model, p);
    return expected_improvement(pr.mean, std::sqrt(pr.variance), incumbent);
}

Proposal propose_next(const GpModel& model, const LearningConfig& cfg, Rng& rng,
                      double incumbent) {
    const int d = static_cast<int>(cfg.box_lo.size());
    Proposal out;
    double best = -1.0;
    bool any_positive = false;
    for (int s = 0; s < cfg.samples_per_iteration; ++s) {
        Vector c(d);
        for (int k = 0; k < d; ++k) c(k) = rng.uniform(cfg.box_lo(k), cfg.box_hi(k));
        const double ei = expected_improvement(model, c, incumbent);
        any_positive = any_positive || ei > 0.0;
        if (ei > best) {
            best = ei;
            out.p = c;
            out.index = s;
        }
    }
    out.max_ei = std::max(0.0, best);
    out.termination_eligible = !any_positive;
    return out;
}

bool should_terminate(const GpModel& model, const Matrix& candidates, double incumbent,
                      double ei_threshold) {
    double max_ei = 0.0;
    for (Eigen::Index i = 0; i < candidates.rows(); ++i)
        max_ei = std::max(max_ei,
                          expected_improvement(model, candidates.row(i), incumbent));
    return max_ei < ei_threshold;
}

namespace {

struct StandardizedTargets {
    Vector values;
    double center = 0.0;
    double spread = 1.0;
};

StandardizedTargets standardize(const Vector& raw, bool enabled) {
    StandardizedTargets out;
    if (!enabled || raw.size() == 0) {
        out.values = raw;
        return out;
    }
    out.center = raw.mean();
    const double var = (raw.array() - out.center).square().mean();
    out.spread = std::max(std::sqrt(var), 1e-12);
    out.values = (raw.array() - out.center) / out.spread;
    return out;
}

} // namespace

LearningState run_learning_loop(const SystemModel& sys, const Matrix& gain_L0,
                                const BasisExpansion& expansion_template,
                                const LearningConfig& cfg) {
    cfg.validate();
    const int d = static_cast<int>(cfg.box_lo.size());
    if (expansion_template.np() * expansion_template.n_active() != d)
        throw InvalidInputError("run_learning_loop: box dimension does not match expansion");

    Rng rng_root(cfg.seed);
    Rng rng_candidates = rng_root.split();
    Rng rng_hyperopt = rng_root.split();

    ObserverConfig obs;
    obs.L = gain_L0;
    obs.expansion = expansion_template;
    obs.xhat0 = cfg.xhat0.size() ? cfg.xhat0 : Vector::Zero(sys.nx());
    const Vector x0 = cfg.x0.size() ? cfg.x0 : Vector::Zero(sys.nx());

    auto evaluate = [&](const Vector& p) {
        obs.expansion.set_flat_coeffs(p);
        const auto batch = run_learning_batch(sys, obs, x0, cfg.T_learn, cfg.anchor, cfg.W1,
                                              cfg.W2, cfg.t_star, cfg.penalty);
        return batch.reward;
    };

    LearningState st;
    st.inputs = Matrix(0, d);
    st.rewards = Vector(0);

    Vector p_next = cfg.p0.size() ? cfg.p0 : Vector::Zero(d);
    KernelSpec kernel;
    kernel.kind = cfg.kernel;
    kernel.jitter = cfg.jitter;
    bool have_kernel = false;

    for (int j = 0; j < cfg.max_iterations; ++j) {
        st.iterations = j + 1;
        const double reward = evaluate(p_next);

        st.inputs.conservativeResize(st.inputs.rows() + 1, d);
        st.inputs.row(st.inputs.rows() - 1) = p_next.transpose();
        st.rewards.conservativeResize(st.rewards.size() + 1);
        st.rewards(st.rewards.size() - 1) = reward;

        if (st.rewards.size() == 1 || reward > st.best_reward) {
            st.best_reward = reward;
            st.best_p = p_next;
        }

        // refit surrogate with per-iteration hyperparameter optimization
        const auto ytr = standardize(st.rewards, cfg.standardize_targets);
        if (st.rewards.size() >= 2) {
            auto hyper = optimize_hyperparameters(st.inputs, ytr.values, cfg.kernel,
                                                  cfg.hyperopt_starts, rng_hyperopt,
                                                  /*ard=*/true, cfg.jitter, {},
                                                  have_kernel ? &kernel : nullptr);
            kernel = hyper.spec;
            have_kernel = true;
        } else {
            kernel.sigma0 = 1.0;
            kernel.lengthscales = Vector::Constant(
                d, 0.3 * (cfg.box_hi - cfg.box_lo).maxCoeff());
        }
        GpModel model = fit(st.inputs, ytr.values, kernel);
        st.final_kernel = kernel;

        // EI proposal over fresh uniform candidates; everything is computed in
        // standardized units and mapped back through the positive scaling
        double incumbent_std = (st.best_reward - ytr.center) / ytr.spread;
        Proposal prop;
        {
            const int M = cfg.samples_per_iteration;
            Matrix cands(M, d);
            for (int s = 0; s < M; ++s)
                for (int k = 0; k < d; ++k)
                    cands(s, k) = rng_candidates.uniform(cfg.box_lo(k), cfg.box_hi(k));

            Vector mu(M), sd(M);
            for (int s = 0; s < M; ++s) {
                const auto pr = predict(model, cands.row(s));
                mu(s) = pr.mean;
                sd(s) = std::sqrt(pr.variance);
            }
            if (cfg.incumbent_rule == IncumbentRule::SurrogateMax)
                incumbent_std = std::max(incumbent_std, mu.maxCoeff());

            double best_ei = -1.0;
            bool any_positive = false;
            for (int s = 0; s < M; ++s) {
                const double ei = expected_improvement(mu(s), sd(s), incumbent_std);
                any_positive = any_positive || ei > 0.0;
                if (ei > best_ei) {
                    best_ei = ei;
                    prop.p = cands.row(s);
                    prop.index = s;
                }
            }
            prop.max_ei = std::max(0.0, best_ei) * ytr.spread; // raw reward units
            prop.termination_eligible = !any_positive;
        }

        TraceRow row;
        row.iteration = j;
        row.reward = reward;
        row.incumbent = st.best_reward;
        row.max_ei = prop.max_ei;
        row.sigma0 = kernel.sigma0;
        row.lengthscales = kernel.lengthscales;
        st.trace.push_back(row);

        if (static_cast<int>(st.rewards.size()) >= cfg.min_observations &&
            prop.max_ei < cfg.ei_threshold) {
            st.terminated_by_ei = true;
            st.termination_reason = "ei-threshold";
            break;
        }
        p_next = prop.p;
    }
    if (!st.terminated_by_ei) st.termination_reason = "max-iterations";

    if (cfg.terminal == TerminalCoefficients::LastProposal)
        st.best_p = st.inputs.row(st.inputs.rows() - 1);
    return st;
}

RegretLog cumulative_regret(const LearningState& state, double optimum) {
    RegretLog log;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < state.rewards.size(); ++j) {
        const double inst = optimum - state.rewards(j);
        acc += inst;
        log.instantaneous.push_back(inst);
        log.cumulative.push_back(acc);
    }
    return log;
}

double regret_bound(int N, double B_J, double chi_N, double delta) {
    if (N < 1) throw InvalidInputError("regret_bound: N must be >= 1");
    if (!(delta > 0.0 && delta < 1.0)) throw InvalidInputError("regret_bound: delta in (0,1)");
    if (!(B_J > 0.0)) throw InvalidInputError("regret_bound: B_J must be positive");
    if (!(chi_N > 0.0)) throw InvalidInputError("regret_bound: chi_N must be positive");
    const double lg = std::log(static_cast<double>(N) / delta);
    const double zeta = 2.0 * B_J + 300.0 * chi_N * lg * lg * lg;
    return std::sqrt(static_cast<double>(N) * zeta * chi_N);
}

nlohmann::json LearningState::to_json() const {
    nlohmann::json j;
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < inputs.cols(); ++c) row.push_back(inputs(i, c));
        rows.push_back(std::move(row));
    }
    j["inputs"] = std::move(rows);
    j["rewards"] = std::vector<double>(rewards.data(), rewards.data() + rewards.size());
    j["best_p"] = std::vector<double>(best_p.data(), best_p.data() + best_p.size());
    j["best_reward"] = best_reward;
    j["iterations"] = iterations;
    j["terminated_by_ei"] = terminated_by_ei;
    j["termination_reason"] = termination_reason;
    return j;
}

void LearningState::write_trace_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw Error("write_trace_csv: cannot open " + path);
    f << "iteration,reward,incumbent,maxEI,sigma0";
    const int d = trace.empty() ? 0 : static_cast<int>(trace.front().lengthscales.size());
    for (int i = 1; i <= d; ++i) f << ",lengthscale" << i;
    f << "\n";
    f.precision(17);
    for (const auto& r : trace) {
        f << r.iteration << "," << r.reward << "," << r.incumbent << "," << r.max_ei << ","
          << r.sigma0;
        for (int i = 0; i < d; ++i)
            f << "," << (i < r.lengthscales.size() ? r.lengthscales(i) : 0.0);
        f << "\n";
    }
}

nlohmann::json RegretLog::to_json() const {
    return {{"instantaneous", instantaneous}, {"cumulative", cumulative}};
}

} // namespace safeobs
