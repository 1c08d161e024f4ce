#pragma once

#include "sgt/coriolis.hpp"
#include "sgt/field.hpp"

namespace sgt {

struct MapSolveParams {
    double tol = 1e-12;     // sup-norm residual target per point
    int max_iter = 50;      // Newton iteration cap per point
    double guard_c0 = 0.25; // lower bound demanded of lambda_min(sym(-qhat_dz))
};

// Shared data for one implicit step: previous field p, candidate field q,
// step size dt, and the derivative caches both map solves and the residual
// assembly need. Spectra of every referenced field are primed at build time
// so later off-grid evaluation is read-only and thread-safe.
struct StepContext {
    const CoriolisContext* coriolis = nullptr;
    Field p, q;
    double dt = 0.0;
    VectorField grad_p, grad_q;
    MatrixField hess_p, hess_q;

    static StepContext build(const CoriolisContext& cor, Field p_prev, Field q_cand, double dt);

    // Replaces the candidate field and refreshes its derivative caches.
    void set_q(Field q_new);

    const GridSpec& grid() const { return p.grid(); }
};

// Values of the previous-field side of the step relation at an off-grid
// point w: entries of the Coriolis caches, p itself, grad p, the p Hessian.
struct ZFields {
    double f = 0.0, f_inv = 0.0, f_inv_sq = 0.0;
    double p = 0.0;
    Vec2 grad_p = Vec2::Zero();
    Vec2 grad_f = Vec2::Zero(), grad_f_inv = Vec2::Zero(), grad_f_inv_sq = Vec2::Zero();
    Mat2 hess_p = Mat2::Zero();
};

// Candidate-field side values at an off-grid point x.
struct XFields {
    double f_inv = 0.0;
    Vec2 grad_q = Vec2::Zero();
    Vec2 grad_f_inv = Vec2::Zero();
    Mat2 hess_q = Mat2::Zero();
};

ZFields eval_z(const StepContext& ctx, const Vec2& w);
XFields eval_x(const StepContext& ctx, const Vec2& x);

// Counterclockwise rotation by angle a.
Mat2 rotation(double a);

// Residual of the implicit step relation at (x, w): zero exactly when w is
// the preimage of x under the step map.
Vec2 qhat(const Vec2& x, const Vec2& w, const StepContext& ctx);

// Derivative of qhat with respect to its second argument.
Mat2 qhat_dz(const Vec2& x, const Vec2& w, const StepContext& ctx);

// Derivative of qhat with respect to its first argument.
Mat2 qhat_dx(const Vec2& x, const Vec2& w, const StepContext& ctx);

// Solves qhat(x, w) = 0 for w at every grid node x, returning the inverse
// step map. Throws MapSolveFailed if any point exhausts the iteration or
// damping budget, ContractionLost if the contraction certificate
// lambda_min(sym(-qhat_dz)) >= guard_c0 fails at a solution point; the
// failure with the lowest row-major node index is the one reported.
PeriodicMap solve_backward(const StepContext& ctx, const MapSolveParams& params);

// Solves qhat(y, x) = 0 for y at every grid node x, returning the forward
// step map. Same failure contract as solve_backward.
PeriodicMap solve_forward(const StepContext& ctx, const MapSolveParams& params);

} // namespace sgt
