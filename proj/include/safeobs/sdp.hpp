#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "safeobs/matrixcore.hpp"
#include "safeobs/numerics.hpp"

namespace safeobs {

// Linear SDP over a product of PSD cones, inequality form:
//
//     minimize    c^T x
//     subject to  F_b(x) = F0_b + sum_i x_i Fi_b  >= 0   for every block b
//
// Scalar inequalities are 1x1 blocks. Symmetric matrix variables are
// registered as packed collections of scalar unknowns; an index matrix maps
// (i,j) entries to variable ids so builders can assemble affine blocks
// entry by entry.
class SdpProblem {
  public:
    struct Block {
        std::string name;
        int dim = 0;
        Matrix f0;                                    // constant part
        std::vector<std::pair<int, Matrix>> terms;    // per-variable coefficient
    };

    int add_scalar(const std::string& name);
    // Returns idx where idx(i,j) is the scalar variable id of entry (i,j);
    // symmetric entries share one id.
    Eigen::MatrixXi add_sym_matrix(const std::string& name, int dim);
    // Dense rectangular matrix of independent scalars.
    Eigen::MatrixXi add_matrix(const std::string& name, int rows, int cols);

    int add_block(const std::string& name, int dim);
    void block_add_const(int block, const Matrix& m);
    void block_add_term(int block, int var, const Matrix& m);
    // convenience for 1x1 blocks: affine scalar constraint  const + c^T x >= 0
    int add_scalar_constraint(const std::string& name, double constant,
                              const std::vector<std::pair<int, double>>& coeffs);

    void add_objective_term(int var, double coeff);

    int num_vars() const { return static_cast<int>(var_names_.size()); }
    int num_blocks() const { return static_cast<int>(blocks_.size()); }
    const std::vector<Block>& blocks() const { return blocks_; }
    const Vector objective() const;
    const std::string& var_name(int v) const { return var_names_[v]; }

    // F_b(x) for one block
    Matrix eval_block(int block, const Vector& x) const;
    // min over blocks of the smallest eigenvalue of F_b(x)
    double min_block_eig(const Vector& x) const;

    nlohmann::json to_json() const;

  private:
    std::vector<std::string> var_names_;
    std::vector<Block> blocks_;
    std::vector<std::pair<int, double>> objective_;
};

enum class SdpStatus { Optimal, Infeasible, MaxIterations };

struct SdpSolution {
    SdpStatus status = SdpStatus::MaxIterations;
    Vector x;
    double objective = 0.0;
    double duality_gap = 0.0;
    double primal_residual = 0.0;
    double infeasibility = 0.0; // phase-1 measure when status == Infeasible
    int iterations = 0;

    nlohmann::json to_json() const;
};

// Primal-dual interior-point solve with Nesterov-Todd scaling. A phase-1
// subproblem finds a strictly feasible start (or an infeasibility measure).
SdpSolution sdp_solve(const SdpProblem& prob,
                      const NumericsConfig& cfg = default_numerics());

struct FeasibilityVerdict {
    bool strictly_feasible = false;
    double measure = 0.0; // attained min over blocks of the slack shift
};

// Phase-1 style strict-feasibility test: minimizes a uniform slack shift and
// stops as soon as an interior point with the given margin is found. Far more
// robust than optimizing through a degenerate objective when only the verdict
// is needed.
FeasibilityVerdict sdp_strictly_feasible(const SdpProblem& prob, double margin = 1e-3,
                                         const NumericsConfig& cfg = default_numerics());

} // namespace safeobs
