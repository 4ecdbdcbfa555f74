#pragma once

#include <Eigen/Dense>
#include <utility>

#include "safeobs/numerics.hpp"

namespace safeobs {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Dense real symmetric matrix. Construction validates symmetry so downstream
// code can assume entries(i,j) == entries(j,i).
class SymMatrix {
  public:
    explicit SymMatrix(Matrix m, const NumericsConfig& cfg = default_numerics());

    static SymMatrix identity(int dim) { return SymMatrix(Matrix::Identity(dim, dim)); }
    static SymMatrix from_diag(const Vector& d) {
        return SymMatrix(Matrix(d.asDiagonal()));
    }

    int dim() const { return static_cast<int>(m_.rows()); }
    const Matrix& entries() const { return m_; }
    double operator()(int i, int j) const { return m_(i, j); }

  private:
    Matrix m_;
};

struct SymEigResult {
    Vector eigenvalues; // ascending
    Matrix eigenvectors;
};

// eigendecomposition of a symmetric matrix; eigenvalues ascending,
// eigenvectors orthonormal columns
SymEigResult sym_eig(const SymMatrix& m);

double min_eig(const SymMatrix& m);
double max_eig(const SymMatrix& m);

// lower-triangular factor of m + jitter*I; throws NotPositiveDefiniteError
// with the failing pivot if the shifted matrix is not positive definite
Matrix cholesky(const SymMatrix& m, double jitter = 0.0);

double frobenius_norm(const Matrix& m);

// max |eigenvalue| of a general square matrix
double spectral_radius(const Matrix& m);

// rank of the observability matrix [C; CA; ...; CA^{n-1}]
int observability_rank(const Matrix& A, const Matrix& C);

} // namespace safeobs
