#include "safeobs/sdp.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

namespace safeobs {

namespace {

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

int SdpProblem::add_scalar(const std::string& name) {
    var_names_.push_back(name);
    return num_vars() - 1;
}

Eigen::MatrixXi SdpProblem::add_sym_matrix(const std::string& name, int dim) {
    Eigen::MatrixXi idx(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = i; j < dim; ++j) {
            const int v = add_scalar(name + "(" + std::to_string(i) + "," + std::to_string(j) + ")");
            idx(i, j) = v;
            idx(j, i) = v;
        }
    return idx;
}

Eigen::MatrixXi SdpProblem::add_matrix(const std::string& name, int rows, int cols) {
    Eigen::MatrixXi idx(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            idx(i, j) = add_scalar(name + "(" + std::to_string(i) + "," + std::to_string(j) + ")");
    return idx;
}

int SdpProblem::add_block(const std::string& name, int dim) {
    Block b;
    b.name = name;
    b.dim = dim;
    b.f0 = Matrix::Zero(dim, dim);
    blocks_.push_back(std::move(b));
    return num_blocks() - 1;
}

void SdpProblem::block_add_const(int block, const Matrix& m) {
    Block& b = blocks_.at(block);
    if (m.rows() != b.dim || m.cols() != b.dim)
        throw InvalidInputError("block_add_const: dimension mismatch in block " + b.name);
    b.f0 += symmetrize(m);
}

void SdpProblem::block_add_term(int block, int var, const Matrix& m) {
    Block& b = blocks_.at(block);
    if (m.rows() != b.dim || m.cols() != b.dim)
        throw InvalidInputError("block_add_term: dimension mismatch in block " + b.name);
    if (var < 0 || var >= num_vars())
        throw InvalidInputError("block_add_term: unknown variable id");
    for (auto& [v, coeff] : b.terms) {
        if (v == var) {
            coeff += symmetrize(m);
            return;
        }
    }
    b.terms.emplace_back(var, symmetrize(m));
}

int SdpProblem::add_scalar_constraint(const std::string& name, double constant,
                                      const std::vector<std::pair<int, double>>& coeffs) {
    const int b = add_block(name, 1);
    block_add_const(b, Matrix::Constant(1, 1, constant));
    for (const auto& [v, c] : coeffs) block_add_term(b, v, Matrix::Constant(1, 1, c));
    return b;
}

void SdpProblem::add_objective_term(int var, double coeff) {
    if (var < 0 || var >= num_vars())
        throw InvalidInputError("add_objective_term: unknown variable id");
    objective_.emplace_back(var, coeff);
}

const Vector SdpProblem::objective() const {
    Vector c = Vector::Zero(num_vars());
    for (const auto& [v, coeff] : objective_) c(v) += coeff;
    return c;
}

Matrix SdpProblem::eval_block(int block, const Vector& x) const {
    const Block& b = blocks_.at(block);
    Matrix s = b.f0;
    for (const auto& [v, m] : b.terms) s += x(v) * m;
    return s;
}

double SdpProblem::min_block_eig(const Vector& x) const {
    double worst = std::numeric_limits<double>::infinity();
    for (int b = 0; b < num_blocks(); ++b) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(eval_block(b, x), Eigen::EigenvaluesOnly);
        worst = std::min(worst, es.eigenvalues().minCoeff());
    }
    return worst;
}

nlohmann::json SdpProblem::to_json() const {
    nlohmann::json j;
    j["variables"] = var_names_;
    j["objective"] = std::vector<double>(objective().data(), objective().data() + num_vars());
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : blocks_) {
        nlohmann::json jb;
        jb["name"] = b.name;
        jb["dim"] = b.dim;
        jb["f0"] = matrix_to_json(b.f0);
        nlohmann::json terms = nlohmann::json::array();
        for (const auto& [v, m] : b.terms)
            terms.push_back({{"var", v}, {"coeff", matrix_to_json(m)}});
        jb["terms"] = std::move(terms);
        blocks.push_back(std::move(jb));
    }
    j["blocks"] = std::move(blocks);
    return j;
}

nlohmann::json SdpSolution::to_json() const {
    nlohmann::json j;
    switch (status) {
        case SdpStatus::Optimal: j["status"] = "optimal"; break;
        case SdpStatus::Infeasible: j["status"] = "infeasible"; break;
        case SdpStatus::MaxIterations: j["status"] = "max-iterations"; break;
    }
    j["x"] = std::vector<double>(x.data(), x.data() + x.size());
    j["objective"] = objective;
    j["duality_gap"] = duality_gap;
    j["primal_residual"] = primal_residual;
    j["infeasibility"] = infeasibility;
    j["iterations"] = iterations;
    return j;
}

// ---------------------------------------------------------------------------
// interior-point core
// ---------------------------------------------------------------------------

namespace {

struct Cone {
    // per-block matrices of the iterate
    std::vector<Matrix> S; // slack, S_b = F_b(x)
    std::vector<Matrix> X; // dual-side multiplier
};

// symmetric square root and inverse square root
void sym_sqrt(const Matrix& m, Matrix& root, Matrix& inv_root) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    Vector d = es.eigenvalues().cwiseMax(1e-300);
    const Matrix& v = es.eigenvectors();
    root = v * d.cwiseSqrt().asDiagonal() * v.transpose();
    inv_root = v * d.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
}

// NT scaling point W with W S W = X
Matrix nt_scaling(const Matrix& X, const Matrix& S) {
    Matrix shalf, sinvhalf;
    sym_sqrt(S, shalf, sinvhalf);
    Matrix inner = symmetrize(shalf * X * shalf);
    Matrix ihalf, iinvhalf;
    sym_sqrt(inner, ihalf, iinvhalf);
    return symmetrize(sinvhalf * ihalf * sinvhalf);
}

// sup {a >= 0 : M + a*D >= 0} given M > 0
double max_step(const Matrix& M, const Matrix& D) {
    Eigen::LLT<Matrix> llt(M);
    if (llt.info() != Eigen::Success) return 0.0;
    const Matrix Li = llt.matrixL().solve(Matrix::Identity(M.rows(), M.cols()));
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(Li * D * Li.transpose()),
                                             Eigen::EigenvaluesOnly);
    const double lam_min = es.eigenvalues().minCoeff();
    if (lam_min >= 0.0) return std::numeric_limits<double>::infinity();
    return -1.0 / lam_min;
}

struct CoreResult {
    bool converged = false;
    Vector x;
    double gap = 0.0;
    double primal_residual = 0.0;
    int iterations = 0;
};

// Solves min c^T x s.t. F(x) >= 0 from a strictly feasible x0.
// Slack feasibility S = F(x) is maintained exactly; the multiplier side
// starts at identity and its constraint residual is driven to zero.
CoreResult ipm_core(const SdpProblem& prob, const Vector& c, const Vector& x0,
                    const NumericsConfig& cfg,
                    double early_exit_var = std::numeric_limits<double>::quiet_NaN(),
                    int early_exit_index = -1) {
    const int m = prob.num_vars();
    const int nblocks = prob.num_blocks();
    double nu = 0.0;
    for (const auto& b : prob.blocks()) nu += b.dim;

    Vector x = x0;
    std::vector<Matrix> S(nblocks), X(nblocks);
    for (int b = 0; b < nblocks; ++b) {
        S[b] = prob.eval_block(b, x);
        X[b] = Matrix::Identity(prob.blocks()[b].dim, prob.blocks()[b].dim);
    }

    const double cscale = 1.0 + c.cwiseAbs().maxCoeff();
    CoreResult res;
    res.x = x;

    for (int iter = 0; iter < cfg.sdp_max_iterations; ++iter) {
        res.iterations = iter;

        // residual of the multiplier constraint tr(F_i X) = c_i
        Vector r = c;
        for (int b = 0; b < nblocks; ++b)
            for (const auto& [v, F] : prob.blocks()[b].terms)
                r(v) -= (F.array() * X[b].array()).sum();

        double gap = 0.0;
        for (int b = 0; b < nblocks; ++b) gap += (X[b].array() * S[b].array()).sum();
        const double mu = gap / nu;

        res.gap = gap;
        res.primal_residual = r.cwiseAbs().maxCoeff();
        res.x = x;

        const double obj = c.dot(x);
        if (std::getenv("SAFEOBS_SDP_TRACE"))
            std::fprintf(stderr, "it %3d obj %.6e mu %.3e resid %.3e\n", iter, obj, mu,
                         res.primal_residual);
        if (gap <= cfg.duality_gap_tol * (1.0 + std::abs(obj)) &&
            res.primal_residual <= 10.0 * cfg.scalar_constraint_tol * cscale) {
            res.converged = true;
            return res;
        }
        if (early_exit_index >= 0 && x(early_exit_index) <= early_exit_var) {
            res.converged = true;
            return res;
        }

        // NT scaling and S^{-1} per block; eigen-floored so that a slack that
        // brushed the boundary through roundoff cannot poison the directions
        std::vector<Matrix> W(nblocks), Sinv(nblocks);
        bool scaling_ok = true;
        for (int b = 0; b < nblocks; ++b) {
            Eigen::SelfAdjointEigenSolver<Matrix> es(S[b]);
            const double floor_eig =
                1e-14 * (1.0 + es.eigenvalues().cwiseAbs().maxCoeff());
            if (es.eigenvalues().minCoeff() < -1e3 * floor_eig) scaling_ok = false;
            const Vector d = es.eigenvalues().cwiseMax(floor_eig);
            const Matrix& V = es.eigenvectors();
            Sinv[b] = symmetrize(V * d.cwiseInverse().asDiagonal() * V.transpose());
            const Matrix S_reg = symmetrize(V * d.asDiagonal() * V.transpose());
            W[b] = nt_scaling(X[b], S_reg);
        }
        if (!scaling_ok || !(mu > 0.0)) return res; // numerically exhausted

        // Schur matrix M_ij = sum_b tr(F_i W F_j W)
        Matrix Msc = Matrix::Zero(m, m);
        for (int b = 0; b < nblocks; ++b) {
            const auto& terms = prob.blocks()[b].terms;
            std::vector<Matrix> H(terms.size());
            for (size_t k = 0; k < terms.size(); ++k)
                H[k] = W[b] * terms[k].second * W[b];
            for (size_t k = 0; k < terms.size(); ++k)
                for (size_t l = 0; l <= k; ++l) {
                    const double val = (H[k].array() * terms[l].second.array()).sum();
                    Msc(terms[k].first, terms[l].first) += val;
                    if (terms[k].first != terms[l].first)
                        Msc(terms[l].first, terms[k].first) += val;
                }
        }
        Msc.diagonal().array() += 1e-13 * (1.0 + Msc.diagonal().cwiseAbs().maxCoeff());
        Eigen::LDLT<Matrix> ldlt(Msc);

        auto solve_direction = [&](double sigma, std::vector<Matrix>& dS,
                                   std::vector<Matrix>& dX, Vector& dx) {
            Vector g = -c;
            for (int b = 0; b < nblocks; ++b)
                for (const auto& [v, F] : prob.blocks()[b].terms)
                    g(v) += sigma * mu * (F.array() * Sinv[b].array()).sum();
            dx = ldlt.solve(g);
            dS.assign(nblocks, Matrix());
            dX.assign(nblocks, Matrix());
            for (int b = 0; b < nblocks; ++b) {
                dS[b] = Matrix::Zero(S[b].rows(), S[b].cols());
                for (const auto& [v, F] : prob.blocks()[b].terms) dS[b] += dx(v) * F;
                dX[b] = symmetrize(sigma * mu * Sinv[b] - X[b] - W[b] * dS[b] * W[b]);
            }
        };

        // predictor
        std::vector<Matrix> dS, dX;
        Vector dx;
        solve_direction(0.0, dS, dX, dx);
        double a_s = 1.0, a_x = 1.0;
        for (int b = 0; b < nblocks; ++b) {
            a_s = std::min(a_s, 0.99 * max_step(S[b], dS[b]));
            a_x = std::min(a_x, 0.99 * max_step(X[b], dX[b]));
        }
        double gap_aff = 0.0;
        for (int b = 0; b < nblocks; ++b)
            gap_aff += ((X[b] + a_x * dX[b]).array() * (S[b] + a_s * dS[b]).array()).sum();
        double sigma = std::pow(std::max(gap_aff, 0.0) / gap, 3.0);
        // feasibility safeguard: complementarity must not outrun the
        // multiplier residual, or the iterate locks onto a non-optimal face
        const double r_rel = res.primal_residual / cscale;
        const double gap_rel = gap / (1.0 + std::abs(obj));
        if (r_rel > 0.1 * gap_rel) sigma = std::max(sigma, 0.9);
        sigma = std::clamp(sigma, 1e-3, 0.95);

        // corrector, separate slack-side and multiplier-side step lengths
        solve_direction(sigma, dS, dX, dx);
        a_s = a_x = 1.0;
        for (int b = 0; b < nblocks; ++b) {
            a_s = std::min(a_s, 0.98 * max_step(S[b], dS[b]));
            a_x = std::min(a_x, 0.98 * max_step(X[b], dX[b]));
        }
        a_s = std::min(1.0, a_s);
        a_x = std::min(1.0, a_x);
        if (a_s < 1e-13 && a_x < 1e-13) return res; // stalled on the boundary

        x += a_s * dx;
        for (int b = 0; b < nblocks; ++b) {
            S[b] = prob.eval_block(b, x);
            X[b] = symmetrize(X[b] + a_x * dX[b]);
        }
    }
    return res;
}

} // namespace

FeasibilityVerdict sdp_strictly_feasible(const SdpProblem& prob, double margin,
                                         const NumericsConfig& cfg) {
    FeasibilityVerdict out;
    const int m = prob.num_vars();
    const double min_eig0 = prob.min_block_eig(Vector::Zero(m));
    if (min_eig0 > margin) {
        out.strictly_feasible = true;
        out.measure = -min_eig0;
        return out;
    }
    SdpProblem aux = prob;
    const int tvar = aux.add_scalar("_feas_t");
    for (int b = 0; b < aux.num_blocks(); ++b)
        aux.block_add_term(b, tvar, Matrix::Identity(aux.blocks()[b].dim, aux.blocks()[b].dim));
    aux.add_scalar_constraint("_feas_floor", 1.0, {{tvar, 1.0}});
    Vector cx = Vector::Zero(m + 1);
    cx(tvar) = 1.0;
    Vector start = Vector::Zero(m + 1);
    start(tvar) = std::max(0.0, -min_eig0) + 1.0;
    CoreResult res = ipm_core(aux, cx, start, cfg, -margin, tvar);
    out.measure = res.x(tvar);
    out.strictly_feasible = res.x(tvar) <= -margin;
    return out;
}

SdpSolution sdp_solve(const SdpProblem& prob, const NumericsConfig& cfg) {
    if (prob.num_vars() > cfg.sdp_variable_cap)
        throw InvalidInputError("sdp_solve: variable count exceeds configured cap");
    if (prob.num_blocks() == 0)
        throw InvalidInputError("sdp_solve: problem has no blocks");
    for (const auto& b : prob.blocks())
        if (b.terms.empty())
            // constant block: still fine, but a variable-free problem is likely a bug
            continue;

    const int m = prob.num_vars();
    const Vector c = prob.objective();

    SdpSolution out;
    out.x = Vector::Zero(m);

    // phase 1: find strictly feasible x, or measure infeasibility.
    Vector x0 = Vector::Zero(m);
    const double min_eig0 = prob.min_block_eig(x0);
    double feas_margin = 1e-3;
    if (min_eig0 <= feas_margin) {
        SdpProblem aux = prob;
        const int tvar = aux.add_scalar("_phase1_t");
        for (int b = 0; b < aux.num_blocks(); ++b)
            aux.block_add_term(b, tvar, Matrix::Identity(aux.blocks()[b].dim, aux.blocks()[b].dim));
        aux.add_scalar_constraint("_phase1_floor", 1.0, {{tvar, 1.0}}); // t >= -1
        Vector cx = Vector::Zero(m + 1);
        cx(tvar) = 1.0;
        Vector start = Vector::Zero(m + 1);
        start(tvar) = std::max(0.0, -min_eig0) + 1.0;
        CoreResult ph1 = ipm_core(aux, cx, start, cfg, -feas_margin, tvar);
        if (!ph1.converged) {
            out.status = SdpStatus::MaxIterations;
            out.x = ph1.x.head(m);
            out.objective = c.dot(out.x);
            out.iterations = ph1.iterations;
            return out;
        }
        if (ph1.x(tvar) > -feas_margin) {
            // no comfortably interior point found; accept weak feasibility, else infeasible
            if (ph1.x(tvar) > cfg.kappa_zero_tol) {
                out.status = SdpStatus::Infeasible;
                out.infeasibility = ph1.x(tvar);
                out.x = ph1.x.head(m);
                out.objective = c.dot(out.x);
                out.iterations = ph1.iterations;
                return out;
            }
            feas_margin = 0.0; // boundary case, proceed with what we have
        }
        x0 = ph1.x.head(m);
        out.iterations = ph1.iterations;
    }

    CoreResult core = ipm_core(prob, c, x0, cfg);
    out.x = core.x;
    out.objective = c.dot(core.x);
    out.duality_gap = core.gap;
    out.primal_residual = core.primal_residual;
    out.iterations += core.iterations;
    out.status = core.converged ? SdpStatus::Optimal : SdpStatus::MaxIterations;
    return out;
}

} // namespace safeobs
