#pragma once

#include "sgt/field.hpp"

namespace sgt {

enum class Gauge { MeanZero, None };

// Linear problem a_ij d_ij u + b_i d_i u + c u = rhs on the torus.
// a must be symmetric and uniformly positive definite on the grid; c must be
// <= 0 wherever nonzero. MeanZero gauge requires c identically zero and fixes
// the additive constant by mean(u) = 0.
struct EllipticProblem {
    MatrixField a;
    VectorField b;
    Field c;
    Field rhs;
    Gauge gauge = Gauge::MeanZero;
};

// Numbers observed during a solve, for logging and tests.
struct EllipticReport {
    double rhs_mean_before = 0.0;   // mean removed from the rhs by the gauge
    double gauge_row_residual = 0.0; // operator residual at the node whose row the gauge replaced
    double residual_sup = 0.0;      // sup of the discrete residual after the solve
};

// Applies the non-divergence operator of the problem to u.
Field apply_operator(const EllipticProblem& p, const Field& u);

// Applies div(A grad u).
Field divform_operator(const MatrixField& A, const Field& u);

// Dense spectral-collocation solve. Post: sup residual <= tol*(1+sup|rhs|),
// and mean(u) = 0 to 1e-12 under MeanZero. Throws EllipticSingular on
// ellipticity loss, factorization breakdown, or an unmet residual bound;
// IncompatibleRHS when gauge = MeanZero and |mean(rhs)| > 1e-8.
Field solve(const EllipticProblem& problem, double tol, EllipticReport* report = nullptr);

// Solves div(A grad u) = div(flux_rhs) for mean-zero u.
Field solve_divform(const MatrixField& A, const VectorField& flux_rhs, double tol,
                    EllipticReport* report = nullptr);

} // namespace sgt
