#pragma once

#include <string>

#include "sgt/coriolis.hpp"
#include "sgt/ma_step.hpp"

namespace sgt {

// Solver tolerances a run is allowed to tune. Everything else (damping
// budgets, iteration caps) is fixed policy.
struct Tolerances {
    double map_tol = 1e-12;      // point solves for the per-step maps
    double newton_tol = 1e-11;   // sup-norm target for the outer field update
    double elliptic_tol = 1e-10; // linear solve residual target
};

// A fully deterministic run description. No seeds: initial data and the
// rotation rate are trigonometric polynomials given coefficient by
// coefficient, so two parses of the same document produce bit-identical runs.
struct RunConfig {
    Model model = Model::SG;
    int n = 16;
    double dt = 1e-2;
    double T = 0.1;
    TrigPoly f_spec;    // rotation rate; f_spec.c0 is the constant part f0 > 0
    TrigPoly init_spec; // initial field; SG uses it mean-projected, SGSW adds +1
    double c0_declared = 0.25; // claimed floor for the initial min eigenvalue
    Tolerances tol;
    double convexity_slack = 0.0; // subtracted from the measured floor before deriving guards
    double lip_cap = 50.0;        // cap for per-step field increment / dt
    int snapshot_every = 1;       // store every k-th step (initial and final always kept)
    std::string out_dir = ".";
};

// Parses the flat INI-like document (sections [model], [grid], [coriolis],
// [init], [tolerances], [output]; one key=value per line; '#' comments) and
// validates every invariant, collecting all violations before throwing
// ConfigInvalid. See README for the full key list.
RunConfig parse_and_validate(const std::string& text);

// Reads the file at path and parses its contents.
RunConfig parse_and_validate_file(const std::string& path);

// Initial field on the configured grid: SG projects the series to mean zero,
// SGSW returns 1 + series.
Field initial_field(const RunConfig& cfg);

// Rotation-rate context on the configured grid.
CoriolisContext coriolis_from(const RunConfig& cfg);

} // namespace sgt
