#include "safeobs/matrixcore.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace safeobs {

SymMatrix::SymMatrix(Matrix m, const NumericsConfig& cfg) : m_(std::move(m)) {
    if (m_.rows() < 1 || m_.rows() != m_.cols())
        throw InvalidInputError("SymMatrix: dimension must be square and >= 1");
    if (!m_.allFinite())
        throw InvalidInputError("SymMatrix: non-finite entries");
    const double scale = 1.0 + m_.cwiseAbs().maxCoeff();
    if ((m_ - m_.transpose()).cwiseAbs().maxCoeff() > cfg.sym_tol * scale)
        throw InvalidInputError("SymMatrix: entries are not symmetric");
    m_ = 0.5 * (m_ + m_.transpose().eval());
}

SymEigResult sym_eig(const SymMatrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m.entries());
    if (es.info() != Eigen::Success)
        throw InvalidInputError("sym_eig: eigensolver failed to converge");
    return {es.eigenvalues(), es.eigenvectors()};
}

double min_eig(const SymMatrix& m) { return sym_eig(m).eigenvalues(0); }

double max_eig(const SymMatrix& m) {
    const auto r = sym_eig(m);
    return r.eigenvalues(r.eigenvalues.size() - 1);
}

Matrix cholesky(const SymMatrix& m, double jitter) {
    if (jitter < 0.0) throw InvalidInputError("cholesky: jitter must be nonnegative");
    const int n = m.dim();
    Matrix a = m.entries();
    a.diagonal().array() += jitter;
    // Unblocked factorization so the failing pivot index is exact.
    Matrix L = Matrix::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        double d = a(j, j) - L.row(j).head(j).squaredNorm();
        if (!(d > 0.0))
            throw NotPositiveDefiniteError(
                "cholesky: matrix is not positive definite at pivot " + std::to_string(j), j);
        L(j, j) = std::sqrt(d);
        for (int i = j + 1; i < n; ++i) {
            L(i, j) = (a(i, j) - L.row(i).head(j).dot(L.row(j).head(j))) / L(j, j);
        }
    }
    return L;
}

double frobenius_norm(const Matrix& m) {
    if (!m.allFinite()) throw InvalidInputError("frobenius_norm: non-finite entries");
    return m.norm();
}

double spectral_radius(const Matrix& m) {
    if (m.rows() != m.cols()) throw InvalidInputError("spectral_radius: matrix not square");
    if (!m.allFinite()) throw InvalidInputError("spectral_radius: non-finite entries");
    Eigen::EigenSolver<Matrix> es(m, /*computeEigenvectors=*/false);
    if (es.info() != Eigen::Success)
        throw InvalidInputError("spectral_radius: eigensolver failed");
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

int observability_rank(const Matrix& A, const Matrix& C) {
    const int n = static_cast<int>(A.rows());
    const int ny = static_cast<int>(C.rows());
    Matrix obs(n * ny, n);
    Matrix block = C;
    for (int k = 0; k < n; ++k) {
        obs.middleRows(k * ny, ny) = block;
        block = block * A;
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(obs);
    qr.setThreshold(1e-10);
    return static_cast<int>(qr.rank());
}

} // namespace safeobs
