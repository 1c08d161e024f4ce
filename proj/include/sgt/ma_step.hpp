#pragma once

#include "sgt/coriolis.hpp"
#include "sgt/elliptic.hpp"
#include "sgt/field.hpp"
#include "sgt/implicit_map.hpp"

#include <limits>
#include <utility>

namespace sgt {

enum class Model { SG, SGSW };

struct MAStepParams {
    double newton_tol = 1e-11;  // sup-norm target for the nonlinear residual
    int max_newton = 30;
    int damping = 8;            // max halvings of a rejected Newton update
    double convexity_floor = 0.5; // required lambda_min of the stability matrix (c0/2 scale)
    double ab_bound = 0.125;      // sup-norm cap on the A and B matrices (c0/8 scale)
    MapSolveParams map{};
    double elliptic_tol = 1e-10;
    bool fd_jacobian = false;     // debug mode: dense finite-difference Newton matrix
};

struct ABReport {
    double sup_a = 0.0, sup_b = 0.0; // max over nodes of the pointwise operator norm
};

struct LinearizedCoefficients {
    MatrixField a;
    VectorField b;
    Field c;
    Gauge gauge = Gauge::MeanZero;
    double lambda_min_s = 0.0; // min over nodes of lambda_min(sym S) at the expansion state
    double lambda_min_a = 0.0; // ellipticity certificate of the principal part
};

struct MAStepReport {
    int newton_iterations = 0;
    double final_residual = 0.0;
    double lambda_min_s_q = 0.0;        // stability certificate at the accepted field
    double lambda_min_certificate = 0.0; // min eigenvalue of the segment-integral matrix C
    double sup_a = 0.0, sup_b = 0.0;
    double rhs_mean_last = 0.0;         // compatibility mean seen by the last elliptic solve
};

struct MAStepResult {
    Field q;
    PeriodicMap zmap;
    MAStepReport report;
};

// S = I + f^-1 grad p (x) grad(f^-1) + f^-2 D^2 p, per node. Not symmetric for
// variable f; eigenvalue monitors use the symmetric part.
MatrixField stability_matrix(const Field& p, const CoriolisContext& cor);

// Same matrix in the nested-derivative form I + f^-1 D(f^-1 D p); agrees with
// stability_matrix up to aliasing of the pointwise products.
MatrixField stability_matrix_nested(const Field& p, const CoriolisContext& cor);

// min over nodes of lambda_min(sym m).
double min_lambda_min(const MatrixField& m);

// Correction matrices of the pulled-back determinant equation for the solved
// backward map. Throws ABTooLarge when either sup operator norm exceeds
// ab_bound.
std::pair<MatrixField, MatrixField> matrices_AB(
    const StepContext& ctx, const PeriodicMap& zmap,
    double ab_bound = std::numeric_limits<double>::infinity(), ABReport* report = nullptr);

// Nonlinear step residual for a given certified backward map.
// SG:   det[S_q + A] / det[S_p(F^-1) + B] - 1
// SGSW: p(F^-1) det[S_q + A] / det[S_p(F^-1) + B] - q, with p the depth field.
// Throws DegenerateDeterminant if the denominator determinant is <= 0 anywhere.
Field residual_with_map(const StepContext& ctx, const PeriodicMap& zmap, Model model);

// Convenience wrapper: builds the step context, solves the backward map, and
// evaluates the residual.
Field residual(const Field& q, const Field& p, double dt, Model model, const CoriolisContext& cor,
               const MapSolveParams& map_params = {});

// Coefficients of the elliptic linearization of the residual in its first
// argument at state p (dt = 0 base point). SG: mean-zero gauge, c = 0;
// SGSW: no gauge, c = -1, coefficients carry the depth weighting.
LinearizedCoefficients linearized_coefficients(const Field& p, Model model,
                                               const CoriolisContext& cor,
                                               double convexity_floor = 0.0);

// Monitored density: det S (SG) or det S / p (SGSW).
Field nu_field(const Field& p, Model model, const CoriolisContext& cor);

// Segment-integral certificate matrix C(x) tying the map displacement to
// grad(q - p); its symmetric-part eigenvalue floor is the step certificate.
MatrixField certificate_matrix(const StepContext& ctx, const PeriodicMap& zmap);

// One implicit time step: damped quasi-Newton on the residual, starting from
// q = p, with the elliptic linearization as the Newton matrix (or a dense
// finite-difference matrix in debug mode). Returns the accepted field, its
// certified backward map, and the certificates.
MAStepResult ma_solve(const Field& p, double dt, Model model, const CoriolisContext& cor,
                      const MAStepParams& params);

// Reference solve of the same one-step system along an independent route:
// every field sample and both displacement components of the backward map are
// unknowns of a single dense Newton iteration with a central finite-difference
// Jacobian (gauge row, determinant relation at all nodes but the first, the
// implicit step relation at every node). Cross-checks ma_solve; practical only
// for n <= 8.
MAStepResult ma_solve_coupled_reference(const Field& p, double dt, Model model,
                                 const CoriolisContext& cor, double tol = 1e-11,
                                 int max_iter = 25);

} // namespace sgt
