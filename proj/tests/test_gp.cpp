#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "safeobs/gp.hpp"
#include "safeobs/rng.hpp"

using namespace safeobs;

namespace {

KernelSpec se_spec(double s0, double l) {
    KernelSpec k;
    k.kind = KernelKind::SquaredExponential;
    k.sigma0 = s0;
    k.lengthscales = Vector::Constant(1, l);
    return k;
}

KernelSpec m52_spec(double s0, double l) {
    KernelSpec k;
    k.kind = KernelKind::Matern52;
    k.sigma0 = s0;
    k.lengthscales = Vector::Constant(1, l);
    return k;
}

Matrix random_inputs(int n, int d, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix X(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) X(i, j) = rng.uniform(lo, hi);
    return X;
}

} // namespace

TEST_CASE("kernel values at coincident and separated points") {
    Vector a = Vector::Zero(3), b = Vector::Zero(3);

    auto se = se_spec(2.0, 1.0);
    CHECK(kernel_eval(se, a, a) == doctest::Approx(4.0)); // sigma0^2 at r = 0

    auto m = m52_spec(2.0, 1.0);
    CHECK(kernel_eval(m, a, a) == doctest::Approx(2.0)); // sigma0 prefactor as printed
    auto msq = m;
    msq.squared_prefactor = true;
    CHECK(kernel_eval(msq, a, a) == doctest::Approx(4.0));

    // SE with unit hyperparameters at distance sqrt(2): e^{-1}
    b(0) = 1.0;
    b(1) = 1.0;
    CHECK(kernel_eval(se_spec(1.0, 1.0), a, b) == doctest::Approx(std::exp(-1.0)));

    // symmetry
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Vector x = random_inputs(1, 3, rng).row(0);
        Vector y = random_inputs(1, 3, rng).row(0);
        CHECK(kernel_eval(m, x, y) == doctest::Approx(kernel_eval(m, y, x)));
    }
}

TEST_CASE("fit interpolates: one point and duplicate handling") {
    Matrix X(1, 2);
    X << 0.3, -0.4;
    Vector y(1);
    y << 3.0;
    auto model = fit(X, y, m52_spec(1.0, 0.5));
    auto pr = predict(model, X.row(0));
    CHECK(pr.mean == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(pr.variance <= 1e-6);

    // duplicated input with jitter 0 is singular
    Matrix X2(2, 2);
    X2 << 0.3, -0.4, 0.3, -0.4;
    Vector y2(2);
    y2 << 1.0, 2.0;
    auto spec0 = m52_spec(1.0, 0.5);
    spec0.jitter = 0.0;
    bool threw = false;
    try {
        fit(X2, y2, spec0);
    } catch (const IllConditionedGramError&) {
        threw = true;
    }
    // jitter escalation may succeed numerically only if roundoff separates the
    // rows; with exact duplicates the factorization must eventually fail
    CHECK(threw);
}

TEST_CASE("two-point prediction matches a direct linear solve") {
    Matrix X(2, 1);
    X << 0.0, 1.0;
    Vector y(2);
    y << 1.0, -2.0;
    auto spec = se_spec(1.3, 0.7);
    spec.jitter = 0.0;
    auto model = fit(X, y, spec);

    Vector q = Vector::Constant(1, 0.4);
    // 2x2 oracle by hand
    Matrix K(2, 2);
    K << kernel_eval(spec, X.row(0), X.row(0)), kernel_eval(spec, X.row(0), X.row(1)),
        kernel_eval(spec, X.row(1), X.row(0)), kernel_eval(spec, X.row(1), X.row(1));
    Vector k(2);
    k << kernel_eval(spec, X.row(0), q), kernel_eval(spec, X.row(1), q);
    const Vector alpha = K.inverse() * y;
    const double mu_oracle = k.dot(alpha);
    const double var_oracle = kernel_eval(spec, q, q) - k.dot(K.inverse() * k);

    auto pr = predict(model, q);
    CHECK(pr.mean == doctest::Approx(mu_oracle).epsilon(1e-10));
    CHECK(pr.variance == doctest::Approx(var_oracle).epsilon(1e-10));
}

TEST_CASE("predictions match the explicit-inverse oracle on random sets") {
    Rng rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform() * 18);
        const int d = 1 + static_cast<int>(rng.uniform() * 4);
        const bool matern = trial % 2 == 0;
        KernelSpec spec = matern ? m52_spec(1.0 + rng.uniform(), 0.3 + rng.uniform())
                                 : se_spec(1.0 + rng.uniform(), 0.3 + rng.uniform());
        spec.jitter = 1e-10;
        Matrix X = random_inputs(n, d, rng);
        Vector y(n);
        for (int i = 0; i < n; ++i) y(i) = rng.uniform(-2.0, 2.0);
        auto model = fit(X, y, spec);

        Matrix K(n, n);
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) K(a, b) = kernel_eval(spec, X.row(a), X.row(b));
        K.diagonal().array() += model.jitter_used;
        const Matrix Kinv = K.inverse();

        for (int q = 0; q < 5; ++q) {
            Vector query = random_inputs(1, d, rng).row(0);
            Vector k(n);
            for (int i = 0; i < n; ++i) k(i) = kernel_eval(spec, X.row(i), query);
            const double mu_oracle = k.dot(Kinv * y);
            const double var_oracle =
                std::max(0.0, kernel_eval(spec, query, query) - k.dot(Kinv * k));
            auto pr = predict(model, query);
            CHECK(pr.mean == doctest::Approx(mu_oracle).epsilon(1e-9));
            CHECK(std::abs(pr.variance - var_oracle) <= 1e-9 * (1.0 + var_oracle));
        }
    }
}

TEST_CASE("training-point reproduction within tolerance") {
    Rng rng(7);
    Matrix X = random_inputs(12, 3, rng);
    Vector y(12);
    for (int i = 0; i < 12; ++i) y(i) = std::sin(3.0 * X(i, 0)) + X(i, 1);
    auto spec = m52_spec(1.0, 0.8);
    auto model = fit(X, y, spec);
    for (int i = 0; i < 12; ++i) {
        auto pr = predict(model, X.row(i));
        CHECK(std::abs(pr.mean - y(i)) <=
              std::max(1e-6, 10.0 * model.jitter_used * y.norm()));
    }
}

TEST_CASE("prior recovery far from the data") {
    Matrix X(3, 1);
    X << 0.0, 0.1, -0.1;
    Vector y(3);
    y << 1.0, 0.8, 1.2;
    auto spec = se_spec(2.0, 0.2);
    auto model = fit(X, y, spec);
    auto pr = predict(model, Vector::Constant(1, 50.0));
    CHECK(std::abs(pr.mean) <= 1e-8);
    CHECK(pr.variance == doctest::Approx(4.0).epsilon(1e-8)); // sigma0^2
}

TEST_CASE("log marginal likelihood values") {
    // one point, K(p,p) = 1, target 0: -0.5 log 2 pi
    Matrix X(1, 1);
    X << 0.0;
    Vector y0(1);
    y0 << 0.0;
    auto spec = se_spec(1.0, 1.0);
    spec.jitter = 0.0;
    auto m0 = fit(X, y0, spec);
    CHECK(log_marginal_likelihood(m0) == doctest::Approx(-0.9189385332046727));

    // zero targets kill the quadratic term
    Matrix X3(3, 1);
    X3 << 0.0, 1.0, 2.5;
    Vector z = Vector::Zero(3);
    auto mz = fit(X3, z, spec);
    Matrix K(3, 3);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) K(a, b) = kernel_eval(spec, X3.row(a), X3.row(b));
    K.diagonal().array() += mz.jitter_used;
    const double expect_z = -0.5 * std::log(K.determinant()) - 1.5 * std::log(2 * M_PI);
    CHECK(log_marginal_likelihood(mz) == doctest::Approx(expect_z).epsilon(1e-9));

    // three-point set against the explicit determinant oracle
    Vector y3(3);
    y3 << 0.5, -0.25, 1.0;
    auto m3 = fit(X3, y3, spec);
    const double expect =
        -0.5 * y3.dot(K.inverse() * y3) - 0.5 * std::log(K.determinant()) -
        1.5 * std::log(2 * M_PI);
    CHECK(log_marginal_likelihood(m3) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("posterior variance: nonnegative, bounded by the prior, monotone") {
    Rng rng(2025);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 3 + static_cast<int>(rng.uniform() * 10);
        const int d = 1 + static_cast<int>(rng.uniform() * 3);
        auto spec = trial % 2 ? se_spec(1.5, 0.5) : m52_spec(1.5, 0.5);
        Matrix X = random_inputs(n, d, rng);
        Vector y(n);
        for (int i = 0; i < n; ++i) y(i) = rng.uniform(-1.0, 1.0);
        auto model = fit(X, y, spec);

        for (int q = 0; q < 500; ++q) {
            Vector query = random_inputs(1, d, rng, -1.5, 1.5).row(0);
            auto pr = predict(model, query);
            CHECK(pr.variance >= 0.0);
            CHECK(pr.variance <= kernel_eval(spec, query, query) + 1e-9);
        }

        // adding a training point never increases posterior variance
        Matrix X2(n + 1, d);
        X2.topRows(n) = X;
        X2.row(n) = random_inputs(1, d, rng).row(0);
        Vector y2(n + 1);
        y2.head(n) = y;
        y2(n) = rng.uniform(-1.0, 1.0);
        auto model2 = fit(X2, y2, spec);
        for (int q = 0; q < 50; ++q) {
            Vector query = random_inputs(1, d, rng, -1.5, 1.5).row(0);
            CHECK(predict(model2, query).variance <=
                  predict(model, query).variance + 1e-8);
        }
    }
}

TEST_CASE("kernel Gram matrices are PSD on random point sets") {
    Rng rng(31337);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 50;
        const int d = 1 + static_cast<int>(rng.uniform() * 9);
        Matrix X = random_inputs(n, d, rng, -3.0, 3.0);
        for (auto kind : {KernelKind::SquaredExponential, KernelKind::Matern52}) {
            KernelSpec spec = kind == KernelKind::Matern52 ? m52_spec(1.0, 0.7)
                                                           : se_spec(1.0, 0.7);
            Matrix K(n, n);
            for (int a = 0; a < n; ++a)
                for (int b = 0; b < n; ++b) K(a, b) = kernel_eval(spec, X.row(a), X.row(b));
            CHECK(min_eig(SymMatrix(K)) >= -1e-8);
        }
    }
}

TEST_CASE("hyperparameter recovery on synthetic squared-exponential data") {
    // 1-D data generated from a known SE kernel with lengthscale 0.5
    Rng rng(10);
    const int n = 200;
    Matrix X = random_inputs(n, 1, rng, -2.0, 2.0);
    auto gen_spec = se_spec(1.0, 0.5);
    Matrix K(n, n);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) K(a, b) = kernel_eval(gen_spec, X.row(a), X.row(b));
    K.diagonal().array() += 1e-8;
    const Matrix Lc = cholesky(SymMatrix(K));
    Vector z(n);
    for (int i = 0; i < n; ++i) z(i) = rng.normal();
    const Vector y = Lc * z;

    Rng hrng(11);
    auto res = optimize_hyperparameters(X, y, KernelKind::SquaredExponential, 5, hrng,
                                        /*ard=*/false, 1e-8);
    CHECK(res.spec.lengthscales(0) >= 0.3);
    CHECK(res.spec.lengthscales(0) <= 0.8);
}

TEST_CASE("hyperopt degeneracies and monotonicity in restarts") {
    Rng rng(20);
    Matrix X = random_inputs(10, 2, rng);
    const Vector y_const = Vector::Constant(10, 1.5);

    // equal targets drive sigma0 toward the configured floor
    Rng r1(1);
    auto res = optimize_hyperparameters(X, y_const, KernelKind::SquaredExponential, 5, r1);
    CHECK(res.spec.sigma0 <= 1e-2);
    CHECK(res.spec.sigma0 >= 1e-4); // bounded below by the floor

    // more restarts never lose likelihood (same start sequence prefix)
    Vector y(10);
    for (int i = 0; i < 10; ++i) y(i) = std::sin(2.0 * X(i, 0)) * std::cos(X(i, 1));
    Rng ra(42), rb(42);
    auto one = optimize_hyperparameters(X, y, KernelKind::Matern52, 1, ra);
    auto five = optimize_hyperparameters(X, y, KernelKind::Matern52, 5, rb);
    CHECK(five.log_likelihood >= one.log_likelihood - 1e-9);
}

TEST_CASE("analytic likelihood gradients match finite differences") {
    Rng rng(77);
    Matrix X = random_inputs(8, 2, rng);
    Vector y(8);
    for (int i = 0; i < 8; ++i) y(i) = rng.uniform(-1.0, 1.0);

    // probe the gradient through the public interface: the optimizer result
    // must be a stationary point or a bound; verify NLL decreases from a
    // perturbed spec toward the returned one
    Rng hrng(3);
    auto res = optimize_hyperparameters(X, y, KernelKind::Matern52, 5, hrng, true, 1e-10);
    auto nll_of = [&](const KernelSpec& s) {
        auto m = fit(X, y, s);
        return -log_marginal_likelihood(m);
    };
    const double at_opt = nll_of(res.spec);
    for (int t = 0; t < 6; ++t) {
        KernelSpec pert = res.spec;
        pert.sigma0 *= (t % 2 ? 1.4 : 0.7);
        pert.lengthscales *= (t % 3 ? 1.3 : 0.8);
        CHECK(at_opt <= nll_of(pert) + 1e-6);
    }
}

TEST_CASE("GpModel serializes to JSON") {
    Matrix X(2, 1);
    X << 0.0, 1.0;
    Vector y(2);
    y << 1.0, 2.0;
    auto model = fit(X, y, m52_spec(1.0, 0.5));
    auto j = model.to_json();
    CHECK(j["inputs"].size() == 2);
    CHECK(j["targets"].size() == 2);
    CHECK(j["kernel"]["kind"] == "matern52");
}
