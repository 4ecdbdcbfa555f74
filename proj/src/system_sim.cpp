#include "safeobs/system_sim.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace safeobs {

void SystemModel::validate() const {
    const int n = nx();
    if (A.rows() != n || A.cols() != n) throw InvalidInputError("SystemModel: A must be square");
    if (B.rows() != n) throw InvalidInputError("SystemModel: B row count mismatch");
    if (C.cols() != n) throw InvalidInputError("SystemModel: C column count mismatch");
    if (Cq.cols() != n) throw InvalidInputError("SystemModel: C_q column count mismatch");
    if (!A.allFinite() || !B.allFinite() || !C.allFinite() || !Cq.allFinite())
        throw InvalidInputError("SystemModel: non-finite matrix entries");
    if (observability_rank(A, C) != n)
        throw InvalidInputError("SystemModel: (A, C) is not observable");
    if (!(phi_bound > 0.0)) throw InvalidInputError("SystemModel: phi_bound must be positive");
}

double BasisFunction::eval(const Vector& q) const {
    double acc = 0.0;
    for (const auto& t : terms) {
        double v = t.coeff;
        for (int d = 0; d < q.size(); ++d)
            for (int e = 0; e < t.exponents(d); ++e) v *= q(d);
        acc += v;
    }
    return acc;
}

Vector BasisFunction::gradient(const Vector& q) const {
    Vector g = Vector::Zero(q.size());
    for (const auto& t : terms) {
        for (int d = 0; d < q.size(); ++d) {
            if (t.exponents(d) == 0) continue;
            double v = t.coeff * t.exponents(d);
            for (int dd = 0; dd < q.size(); ++dd) {
                const int e = t.exponents(dd) - (dd == d ? 1 : 0);
                for (int k = 0; k < e; ++k) v *= q(dd);
            }
            g(d) += v;
        }
    }
    return g;
}

Vector BasisExpansion::flat_coeffs() const {
    Vector p(np() * n_active());
    int k = 0;
    for (int c = 0; c < n_active(); ++c)
        for (int i = 0; i < np(); ++i) p(k++) = coeffs(i, c);
    return p;
}

void BasisExpansion::set_flat_coeffs(const Vector& p) {
    if (p.size() != np() * n_active())
        throw InvalidInputError("BasisExpansion: coefficient vector length mismatch");
    int k = 0;
    for (int c = 0; c < n_active(); ++c)
        for (int i = 0; i < np(); ++i) coeffs(i, c) = p(k++);
}

Matrix BasisExpansion::selection_matrix(int nx) const {
    Matrix b = Matrix::Zero(nx, n_active());
    for (int c = 0; c < n_active(); ++c) {
        if (active_rows[c] < 0 || active_rows[c] >= nx)
            throw InvalidInputError("BasisExpansion: active row out of range");
        b(active_rows[c], c) = 1.0;
    }
    return b;
}

Vector BasisExpansion::state_term(const Vector& q, int nx) const {
    const Vector psi_q = eval_basis(*this, q);
    Vector out = Vector::Zero(nx);
    for (int c = 0; c < n_active(); ++c) out(active_rows[c]) = coeffs.col(c).dot(psi_q);
    return out;
}

nlohmann::json BasisExpansion::to_json() const {
    nlohmann::json j;
    j["scale"] = scale;
    j["active_rows"] = active_rows;
    j["coeff_bound"] = coeff_bound;
    nlohmann::json fns = nlohmann::json::array();
    for (const auto& f : psi) {
        nlohmann::json terms = nlohmann::json::array();
        for (const auto& t : f.terms) {
            std::vector<int> e(t.exponents.data(), t.exponents.data() + t.exponents.size());
            terms.push_back({{"coeff", t.coeff}, {"exponents", e}});
        }
        fns.push_back(std::move(terms));
    }
    j["psi"] = std::move(fns);
    const Vector p = flat_coeffs();
    j["coeffs"] = std::vector<double>(p.data(), p.data() + p.size());
    return j;
}

Vector eval_basis(const BasisExpansion& e, const Vector& q) {
    if (!q.allFinite()) throw InvalidInputError("eval_basis: non-finite argument");
    Vector v(e.np());
    for (int i = 0; i < e.np(); ++i) v(i) = e.scale * e.psi[i].eval(q);
    return v;
}

Matrix eval_basis_gradient(const BasisExpansion& e, const Vector& q) {
    Matrix J(e.np(), q.size());
    for (int i = 0; i < e.np(); ++i) J.row(i) = e.scale * e.psi[i].gradient(q).transpose();
    return J;
}

PlantRun simulate_plant(const SystemModel& sys, const Vector& x0,
                        const std::vector<Vector>& u_seq, int T, const NumericsConfig& cfg) {
    if (T < 1) throw InvalidInputError("simulate_plant: T must be >= 1");
    if (!sys.true_phi) throw InvalidInputError("simulate_plant: true_phi not provided");
    PlantRun run;
    run.x.reserve(T);
    run.y.reserve(T);
    Vector x = x0;
    for (int t = 0; t < T; ++t) {
        if (!x.allFinite() || x.cwiseAbs().maxCoeff() > cfg.divergence_guard)
            throw DivergenceError("simulate_plant: state explosion guard tripped", t);
        run.x.push_back(x);
        run.y.push_back(sys.C * x);
        const Vector u = t < static_cast<int>(u_seq.size()) ? u_seq[t] : Vector::Zero(sys.nu());
        x = sys.A * x + sys.B * u + sys.true_phi(sys.Cq * x);
    }
    return run;
}

std::vector<Vector> run_observer(const SystemModel& sys, const ObserverConfig& obs,
                                 const std::vector<Vector>& y_seq,
                                 const std::vector<Vector>& u_seq, const NumericsConfig& cfg) {
    if (!u_seq.empty() && u_seq.size() != y_seq.size())
        throw InvalidInputError("run_observer: input/output length mismatch");
    std::vector<Vector> xhat;
    xhat.reserve(y_seq.size());
    Vector xh = obs.xhat0;
    for (std::size_t t = 0; t < y_seq.size(); ++t) {
        if (!xh.allFinite() || xh.cwiseAbs().maxCoeff() > cfg.divergence_guard)
            throw DivergenceError("run_observer: estimate explosion guard tripped",
                                  static_cast<long>(t));
        xhat.push_back(xh);
        const Vector u = t < u_seq.size() ? u_seq[t] : Vector::Zero(sys.nu());
        xh = sys.A * xh + sys.B * u + obs.expansion.state_term(sys.Cq * xh, sys.nx()) +
             obs.L * (sys.C * xh - y_seq[t]);
    }
    return xhat;
}

double compute_reward(const std::vector<Vector>& y_seq, const std::vector<Vector>& yhat_seq,
                      const Vector& p, const Vector& anchor, const Matrix& W1,
                      const Matrix& W2, int T_learn, int t_star) {
    if (y_seq.size() != yhat_seq.size())
        throw InvalidInputError("compute_reward: series length mismatch");
    if (t_star < 0 || t_star >= T_learn)
        throw InvalidInputError("compute_reward: t_star out of range");
    if (static_cast<int>(y_seq.size()) < T_learn)
        throw InvalidInputError("compute_reward: series shorter than T_learn");
    if (p.size() != anchor.size())
        throw InvalidInputError("compute_reward: coefficient/anchor length mismatch");
    if (min_eig(SymMatrix(W1)) <= 0.0) throw InvalidInputError("compute_reward: W1 must be PD");
    if (min_eig(SymMatrix(W2)) < 0.0) throw InvalidInputError("compute_reward: W2 must be PSD");
    double acc = 0.0;
    for (int t = t_star; t < T_learn; ++t) {
        const Vector r = yhat_seq[t] - y_seq[t];
        acc += r.dot(W1 * r);
    }
    const Vector dp = p - anchor;
    acc += dp.dot(W2 * dp) / static_cast<double>(T_learn);
    return -acc;
}

BatchOutcome run_learning_batch(const SystemModel& sys, const ObserverConfig& obs,
                                const Vector& x0, int T_learn, const Vector& anchor,
                                const Matrix& W1, const Matrix& W2, int t_star,
                                const BatchPenalty& penalty, const NumericsConfig& cfg) {
    BatchOutcome out;
    Vector x = x0;
    Vector xh = obs.xhat0;
    double acc = 0.0;
    const Vector u0 = Vector::Zero(sys.nu());
    for (int t = 0; t < T_learn; ++t) {
        if (!x.allFinite() || x.cwiseAbs().maxCoeff() > cfg.divergence_guard)
            throw SafetyViolationError("learning batch: plant trajectory unbounded at step " +
                                       std::to_string(t));
        if (!xh.allFinite() || xh.cwiseAbs().maxCoeff() > penalty.guard) {
            out.diverged = true;
            out.diverged_at = t;
            // log-time funnel: later divergence reads as a milder penalty,
            // which gives the surrogate a usable slope across the box
            const double frac = std::log1p(static_cast<double>(t)) /
                                std::log1p(static_cast<double>(T_learn));
            out.reward = penalty.top - penalty.span * (1.0 - frac);
            out.output_energy = std::numeric_limits<double>::infinity();
            return out;
        }
        const Vector y = sys.C * x;
        const Vector r = sys.C * xh - y;
        if (t >= t_star) acc += r.dot(W1 * r);
        out.output_energy += r.squaredNorm();
        x = sys.A * x + sys.B * u0 + sys.true_phi(sys.Cq * x);
        xh = sys.A * xh + sys.B * u0 + obs.expansion.state_term(sys.Cq * xh, sys.nx()) +
             obs.L * r;
    }
    const Vector dp = obs.expansion.flat_coeffs() - anchor;
    acc += dp.dot(W2 * dp) / static_cast<double>(T_learn);
    out.reward = std::max(-acc, penalty.top);
    return out;
}

Trajectory simulate_with_observer(const SystemModel& sys, const ObserverConfig& obs,
                                  const Vector& x0, int T, double timestep,
                                  const NumericsConfig& cfg) {
    Trajectory traj;
    traj.timestep = timestep;
    Vector x = x0;
    Vector xh = obs.xhat0;
    const Vector u0 = Vector::Zero(sys.nu());
    for (int t = 0; t < T; ++t) {
        if (!x.allFinite() || x.cwiseAbs().maxCoeff() > cfg.divergence_guard)
            throw DivergenceError("simulate_with_observer: plant guard tripped", t);
        if (!xh.allFinite() || xh.cwiseAbs().maxCoeff() > cfg.divergence_guard)
            throw DivergenceError("simulate_with_observer: observer guard tripped", t);
        traj.x.push_back(x);
        traj.xhat.push_back(xh);
        traj.y.push_back(sys.C * x);
        traj.u.push_back(u0);
        traj.err_norm.push_back((xh - x).norm());
        const Vector r = sys.C * xh - sys.C * x;
        x = sys.A * x + sys.B * u0 + sys.true_phi(sys.Cq * x);
        xh = sys.A * xh + sys.B * u0 + obs.expansion.state_term(sys.Cq * xh, sys.nx()) +
             obs.L * r;
    }
    return traj;
}

double Trajectory::output_error_energy(const Matrix& C) const {
    double acc = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t) acc += (C * (xhat[t] - x[t])).squaredNorm();
    return acc;
}

void Trajectory::write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw Error("write_csv: cannot open " + path);
    const int nx = x.empty() ? 0 : static_cast<int>(x[0].size());
    const int ny = y.empty() ? 0 : static_cast<int>(y[0].size());
    f << "t";
    for (int i = 1; i <= nx; ++i) f << ",x" << i;
    for (int i = 1; i <= nx; ++i) f << ",xhat" << i;
    for (int i = 1; i <= ny; ++i) f << ",y" << i;
    f << ",errnorm\n";
    f.precision(17);
    for (std::size_t t = 0; t < x.size(); ++t) {
        f << t;
        for (int i = 0; i < nx; ++i) f << "," << x[t](i);
        for (int i = 0; i < nx; ++i) f << "," << xhat[t](i);
        for (int i = 0; i < ny; ++i) f << "," << y[t](i);
        f << "," << err_norm[t] << "\n";
    }
}

namespace {

BasisTerm term(double coeff, int e1, int e2) {
    BasisTerm t;
    t.coeff = coeff;
    t.exponents = Eigen::VectorXi(2);
    t.exponents << e1, e2;
    return t;
}

} // namespace

VanDerPol van_der_pol_model(double tau) {
    if (!(tau > 0.0 && tau <= 0.1))
        throw InvalidInputError("van_der_pol_model: tau must lie in (0, 0.1]");
    VanDerPol v;
    v.sys.A = Matrix(2, 2);
    v.sys.A << 1.0, tau, tau, 1.0 - tau;
    v.sys.B = Matrix(2, 1);
    v.sys.B << 0.0, -tau;
    v.sys.C = Matrix(1, 2);
    v.sys.C << 1.0, 0.0;
    v.sys.Cq = Matrix::Identity(2, 2);
    v.sys.phi_bound = 1.0;
    v.sys.true_phi = [tau](const Vector& q) {
        Vector out(2);
        out << 0.0, -tau * q(0) * q(0) * q(1);
        return out;
    };

    // degree-3 Legendre products, common scale 10
    BasisExpansion& b = v.reference_basis;
    b.scale = 10.0;
    b.active_rows = {1};
    b.coeff_bound = 1e-2;
    // (3q1^2-1)(3q2^2-1)
    b.psi.push_back({{term(9, 2, 2), term(-3, 2, 0), term(-3, 0, 2), term(1, 0, 0)}});
    // (3q1^2-1) q2
    b.psi.push_back({{term(3, 2, 1), term(-1, 0, 1)}});
    // q1 (3q2^2-1)
    b.psi.push_back({{term(3, 1, 2), term(-1, 1, 0)}});
    // 5q1^3 - 3q1
    b.psi.push_back({{term(5, 3, 0), term(-3, 1, 0)}});
    // 5q2^3 - 3q2
    b.psi.push_back({{term(5, 0, 3), term(-3, 0, 1)}});
    b.coeffs = Matrix::Zero(5, 1);
    return v;
}

} // namespace safeobs
