#pragma once

#include <functional>
#include <vector>

#include "sgt/config.hpp"
#include "sgt/ma_step.hpp"

namespace sgt {

// Scalar health indicators recorded after every step.
struct Monitors {
    double nu_sup = 0.0;        // sup of the transported-invariant field
    double convexity_min = 0.0; // min eigenvalue of sym(S) over the grid
    double step_increment = 0.0; // sup over derivatives up to order 3 of the field update
    double det_err = 0.0;       // sup of the flow determinant check
    double mass = 0.0;          // mean of the field
};

// One time level: the field, both accumulated flow maps, the per-node
// determinant check behind det_err, and the monitors at this level.
struct StepState {
    Model model = Model::SG;
    double t = 0.0;
    Field field;
    PeriodicMap flow;     // label -> current position
    PeriodicMap flow_inv; // current position -> label
    Field det_check;      // det D(flow) minus its exact target, per node
    Monitors monitors;
};

// Everything step() needs beyond the state itself. reference_field is the
// initial height for the SGSW determinant check; SG ignores it.
struct StepConfig {
    Model model = Model::SG;
    const CoriolisContext* coriolis = nullptr;
    MAStepParams params;
    double lip_cap = 50.0;
    const Field* reference_field = nullptr;
};

// State at t=0: identity flows, zero determinant check, monitors measured
// from the initial field.
StepState initial_state(Model model, const Field& field0, const CoriolisContext& cor);

// Certificate thresholds derived from the slack-adjusted initial eigenvalue
// floor c0: the running convexity floor is c0/2, the map contraction guard
// c0/4, and the correction-matrix bound c0/8.
MAStepParams derived_params(const Tolerances& tol, double c0);

// Advances one time level: solves the field update, extends both flow maps by
// composition, and refreshes the monitors. dt=0 returns the state unchanged.
// Throws LipschitzCapExceeded when the field update is too large for the step
// size and FlowRoundTripFailed when flow and flow_inv stop inverting each
// other within 10x the map tolerance; solver errors propagate.
StepState step(const StepState& state, double dt, const StepConfig& cfg);

// Monitor time series entry, one per executed step.
struct StepRecord {
    int step = 0;
    double t = 0.0;
    Monitors monitors;
};

struct RunSummary {
    double max_det_err = 0.0;
    double min_convexity = 0.0;
    double nu_drift = 0.0; // max deviation of nu_sup from its initial value
};

// Result of a run: stored snapshots (initial state first, then every
// snapshot_stride-th step, final state always), the full monitor series, and
// the summary. Snapshot times are strictly increasing with uniform step dt.
struct Trajectory {
    std::vector<StepState> snapshots;
    std::vector<StepRecord> series;
    RunSummary summary;
    double dt = 0.0;
    int snapshot_stride = 1;
};

// Executes floor(T/dt) steps from the configured initial data. T < dt yields
// just the initial state. Callbacks, when set, fire for every stored snapshot
// (including the initial one) and every step record as they are produced.
// Errors from inside a step are rethrown with the step index and time
// prepended to the message.
Trajectory run(const RunConfig& cfg,
               const std::function<void(int, const StepState&)>& on_snapshot,
               const std::function<void(const StepRecord&)>& on_step);
Trajectory run(const RunConfig& cfg);

} // namespace sgt
