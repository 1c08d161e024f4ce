#pragma once

#include <vector>

#include "sgt/stepper.hpp"

namespace sgt {

// Eulerian reconstruction at one time level: balanced velocity, physical
// velocity, the field's time derivative, and how well they satisfy the
// continuous equations. residual_mass is the velocity divergence for SG and
// the continuity residual for SGSW.
struct EulerianSnapshot {
    VectorField u_g;
    VectorField u;
    Field dt_field;
    VectorField residual_momentum;
    Field residual_mass;
};

// Balanced velocity u_g = f^-1 (-d2 p, d1 p).
VectorField geostrophic_velocity(const Field& p, const CoriolisContext& cor);

// Time derivative of the field from its elliptic equation: SG solves the
// divergence-form problem for dt p (mean-zero), SGSW the height-weighted one
// with the zeroth-order term for dt h. Never a finite time difference.
Field dt_field(const Field& field, Model model, const CoriolisContext& cor,
               double elliptic_tol = 1e-10);

// Physical velocity u = S^-1 (f^-1 J grad field - f^-2 grad dtf), pointwise
// 2x2 solves against the stability matrix.
VectorField physical_velocity(const Field& field, const Field& dtf, const CoriolisContext& cor);

// Full reconstruction with the momentum and mass residuals of the continuous
// system evaluated on the grid.
EulerianSnapshot eulerian_snapshot(const Field& field, Model model, const CoriolisContext& cor,
                                   double elliptic_tol = 1e-10);

// Sup over labels of the discrete balanced-motion residual at interior
// snapshot times: centered time differences of particle positions and of the
// balanced velocity along particles against the balanced velocity itself.
// Uses the longest uniformly spaced snapshot prefix; needs at least three.
std::vector<double> lagrangian_residual(const Trajectory& traj, const CoriolisContext& cor);

// Constant-rotation variant: centered difference of grad P along particles
// against its exact rotation image, P the field plus |x|^2/2. Only meaningful
// when f is constant 1.
std::vector<double> lagrangian_residual_dual(const Trajectory& traj);

// Runs both configs and returns max over snapshot times of
// sup|field_a - field_b| divided by the initial sup difference. Identical
// configs return exactly zero.
double stability_probe(const RunConfig& cfg_a, const RunConfig& cfg_b);

} // namespace sgt
