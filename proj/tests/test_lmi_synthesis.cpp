#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "safeobs/lmi_synthesis.hpp"

using namespace safeobs;

namespace {

SystemModel stable_scalar_system() {
    SystemModel s;
    s.A = Matrix::Constant(1, 1, 0.5);
    s.B = Matrix::Zero(1, 1);
    s.C = Matrix::Constant(1, 1, 1.0);
    s.Cq = Matrix::Constant(1, 1, 1.0);
    s.phi_bound = 1.0;
    s.true_phi = [](const Vector& q) { return Vector::Zero(1); };
    return s;
}

} // namespace

TEST_CASE("Van der Pol initial design near the reported boundary") {
    auto v = van_der_pol_model(0.01);
    auto r = line_search_lipschitz(v.sys, 1e-2, 0.0, 10.0, 0.01, 1e-3);
    // solver-dependent; require the documented +-15% window around 4.332
    CHECK(r.lipschitz >= 0.85 * 4.332);
    CHECK(r.lipschitz <= 1.15 * 4.332);
    CHECK(r.solution.kappa[0] <= 1e-6);

    auto rep = verify_certificate(r.solution, v.sys, r.lipschitz, 1e-2,
                                  CertificateMode::Initial);
    CHECK(rep.passed);
    CHECK(rep.lyap_residual <= 1e-6);
    CHECK(rep.gain_cond_slack <= 0.0);
    CHECK(rep.schur_radius < 1.0);

    // gain consistency ||P L - K|| <= tol (1 + ||K||)
    CHECK((r.solution.P * r.solution.L - r.solution.K).norm() <=
          1e-8 * (1.0 + r.solution.K.norm()));

    // the paper reports the gain under the opposite sign convention; record both
    const double rho_plus = spectral_radius(v.sys.A + r.solution.L * v.sys.C);
    CHECK(rho_plus < 1.0);
}

TEST_CASE("zero Lipschitz constant reduces to plain Lyapunov design") {
    auto v = van_der_pol_model(0.01);
    auto r = line_search_lipschitz(v.sys, 1e-2, 0.0, 0.0, 0.01, 1e-3);
    CHECK(r.lipschitz == 0.0);
    auto rep = verify_certificate(r.solution, v.sys, 0.0, 1e-2, CertificateMode::Initial);
    CHECK(rep.passed);
    CHECK(rep.schur_radius < 1.0);

    // any observable system is feasible at zero
    CHECK(initial_design_feasible(stable_scalar_system(), 1.0, 0.0));
}

TEST_CASE("oversized Lipschitz constant leaves a positive slack") {
    auto v = van_der_pol_model(0.01);
    NumericsConfig cfg;
    // kappa-bound arithmetic oracle: P >= I forces kappa2 >= 1, so the scalar
    // condition needs kappa1 >= 4 L^2 pbar^2 = 4e4, and the Lyapunov block then
    // needs a slack of at least kappa1 - lambda_max(P) at the optimum. Bracket
    // the minimal slack by capping it and testing strict feasibility.
    auto probe_cap = [&](double cap) {
        auto d = build_initial_design_problem(v.sys, 1.0, 100.0, 0.0, cfg);
        d.prob.add_scalar_constraint("cap", cap, {{d.k0, -1.0}});
        return sdp_strictly_feasible(d.prob, 1e-3, cfg).strictly_feasible;
    };
    CHECK_FALSE(probe_cap(1e3));  // slack cannot be brought near zero
    CHECK(probe_cap(1e5));        // but a relaxed design exists
    CHECK_FALSE(initial_design_feasible(v.sys, 1.0, 100.0));
}

TEST_CASE("non-observable pair is rejected") {
    SystemModel s = stable_scalar_system();
    s.C = Matrix::Zero(1, 1);
    CHECK_THROWS_AS(build_initial_design_problem(s, 1.0, 1.0, 1e-3), InvalidInputError);
}

TEST_CASE("monotone feasibility in the Lipschitz constant") {
    auto v = van_der_pol_model(0.01);
    bool prev = true;
    for (double lip : {0.5, 2.0, 4.0, 5.0, 7.0, 10.0}) {
        const bool f = initial_design_feasible(v.sys, 1e-2, lip);
        if (!prev) CHECK_FALSE(f); // once infeasible, stays infeasible
        prev = f;
    }
}

TEST_CASE("line search agrees with a dense grid sweep on the scalar system") {
    auto sys = stable_scalar_system();
    const double tol = 0.05;
    auto r = line_search_lipschitz(sys, 1e-2, 0.0, 80.0, tol, 1e-3);
    // oracle: dense grid sweep of the same feasibility probe
    double grid_boundary = 0.0;
    for (double lip = 0.0; lip <= 80.0; lip += tol) {
        if (initial_design_feasible(sys, 1e-2, lip)) grid_boundary = lip;
        else break;
    }
    CHECK(std::abs(r.lipschitz - grid_boundary) <= 2.0 * tol);
}

TEST_CASE("golden-section variant lands at the same boundary") {
    auto v = van_der_pol_model(0.01);
    auto bis = line_search_lipschitz(v.sys, 1e-2, 0.0, 10.0, 0.02, 1e-3,
                                     LineSearchMethod::Bisection);
    auto gold = line_search_lipschitz(v.sys, 1e-2, 0.0, 10.0, 0.02, 1e-3,
                                      LineSearchMethod::GoldenSection);
    CHECK(std::abs(bis.lipschitz - gold.lipschitz) <= 0.05);
}

TEST_CASE("verify_certificate flags corrupted certificates") {
    auto v = van_der_pol_model(0.01);
    auto r = line_search_lipschitz(v.sys, 1e-2, 0.0, 10.0, 0.02, 1e-3);

    SUBCASE("zero gain on this (unstable A) system fails the Schur check") {
        LmiSolution bad = r.solution;
        bad.L.setZero();
        bad.K.setZero();
        auto rep = verify_certificate(bad, v.sys, r.lipschitz, 1e-2, CertificateMode::Initial);
        CHECK_FALSE(rep.passed);
        CHECK(rep.schur_radius >= 1.0);
    }
    SUBCASE("negated P fails through the Lyapunov residual") {
        LmiSolution bad = r.solution;
        bad.P = -bad.P;
        auto rep = verify_certificate(bad, v.sys, r.lipschitz, 1e-2, CertificateMode::Initial);
        CHECK_FALSE(rep.passed);
        CHECK(rep.lyap_residual > 1e-6);
    }
    SUBCASE("non-optimal status is rejected") {
        LmiSolution bad = r.solution;
        bad.status = SdpStatus::Infeasible;
        CHECK_THROWS_AS(
            verify_certificate(bad, v.sys, r.lipschitz, 1e-2, CertificateMode::Initial),
            InvalidInputError);
    }
}

TEST_CASE("redesign problem: paper-scale constant is infeasible, small ones certify") {
    auto v = van_der_pol_model(0.01);
    Matrix B_phi(2, 1);
    B_phi << 0.0, 1.0;

    // the reported 24.537 cannot satisfy the 4-block condition with C_q = I:
    // rows {1,4} force P >= Lhat^2 I while the third diagonal caps the
    // selected entry of P at one
    CHECK_FALSE(solve_redesign_at(v.sys, 24.537, 1.65e-2, B_phi).has_value());

    auto sol = solve_redesign_at(v.sys, 0.05, 1.65e-2, B_phi);
    REQUIRE(sol.has_value());
    auto rep = verify_certificate(*sol, v.sys, 0.05, 1.65e-2, CertificateMode::Redesign);
    CHECK(rep.passed);
    CHECK(rep.schur_radius < 1.0);
    CHECK(sol->delta0 > 0.5 * min_eig(SymMatrix(sol->Q)));
}

TEST_CASE("redesign block matches an eigenvalue oracle on a scalar system") {
    auto sys = stable_scalar_system();
    Matrix B_phi = Matrix::Identity(1, 1);
    auto sol = solve_redesign_at(sys, 0.2, 0.5, B_phi);
    REQUIRE(sol.has_value());
    // assemble the unrelaxed block by hand and eigen-check it
    const double P = sol->P(0, 0), Q = sol->Q(0, 0), K = sol->K(0, 0);
    const double PAKC = 0.5 * P + K;
    const double lip = 0.2;
    Matrix m4(4, 4);
    m4 << -P + Q, PAKC, PAKC, lip,
          PAKC, -P, 0.0, 0.0,
          PAKC, 0.0, P - 1.0, 0.0,
          lip, 0.0, 0.0, -1.0;
    CHECK(max_eig(SymMatrix(m4)) <= 1e-6);

    auto rep = verify_certificate(*sol, sys, lip, 0.5, CertificateMode::Redesign);
    CHECK(rep.passed);
}

TEST_CASE("redesign certifiable bound is monotone-capped below one on Van der Pol") {
    auto v = van_der_pol_model(0.01);
    Matrix B_phi(2, 1);
    B_phi << 0.0, 1.0;
    auto bound = redesign_certifiable_bound(v.sys, 5.0, 1.65e-2, B_phi);
    REQUIRE(bound.has_value());
    CHECK(bound->lipschitz < 1.0); // structural cap with C_q = I
    CHECK(bound->lipschitz > 0.01);
    auto rep = verify_certificate(bound->solution, v.sys, bound->lipschitz, 1.65e-2,
                                  CertificateMode::Redesign);
    CHECK(rep.passed);
}

TEST_CASE("fixed-gain redesign certification") {
    auto v = van_der_pol_model(0.01);
    Matrix B_phi(2, 1);
    B_phi << 0.0, 1.0;
    Matrix L(2, 1);
    L << -1.02, -1.07;
    auto bound = redesign_certifiable_bound(v.sys, 1.0, 1.65e-2, B_phi, L);
    REQUIRE(bound.has_value());
    CHECK((bound->solution.L - L).norm() <= 1e-12);
    auto rep = verify_certificate(bound->solution, v.sys, bound->lipschitz, 1.65e-2,
                                  CertificateMode::Redesign);
    CHECK(rep.passed);
}

TEST_CASE("LmiSolution JSON round trip") {
    auto v = van_der_pol_model(0.01);
    auto r = line_search_lipschitz(v.sys, 1e-2, 0.0, 10.0, 0.05, 1e-3);
    auto j = r.solution.to_json();
    auto back = LmiSolution::from_json(j);
    CHECK((back.P - r.solution.P).norm() == 0.0);
    CHECK((back.L - r.solution.L).norm() == 0.0);
    CHECK(back.mode == r.solution.mode);
    auto rep = verify_certificate(back, v.sys, r.lipschitz, 1e-2, CertificateMode::Initial);
    CHECK(rep.passed);
}
