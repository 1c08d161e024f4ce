#include "sgt/stepper.hpp"

#include <cmath>
#include <sstream>

#include "sgt/errors.hpp"
#include "sgt/implicit_map.hpp"
#include "sgt/parallel.hpp"

namespace sgt {

namespace {

// Sup over all derivatives of order <= 3 of the difference between two fields.
double increment_norm(const Field& next, const Field& prev) {
    const Field diff = scale_add(next, 1.0, prev, -1.0);
    double sup = 0.0;
    for (int d1 = 0; d1 <= 3; ++d1) {
        for (int d2 = 0; d1 + d2 <= 3; ++d2) {
            sup = std::max(sup, sup_abs(derivative(diff, d1, d2)));
        }
    }
    return sup;
}

// Per-node determinant check for the accumulated flow: SG flows preserve
// area, SGSW flows push the initial height forward onto the current one.
Field flow_det_check(const PeriodicMap& flow, Model model, const Field& field,
                     const Field* reference_field) {
    const GridSpec g = flow.grid();
    const Field det = det_jacobian(flow);
    std::vector<double> vals(static_cast<std::size_t>(g.n) * g.n, 0.0);
    if (model == Model::SG) {
        for (std::size_t k = 0; k < vals.size(); ++k) vals[k] = det.samples()[k] - 1.0;
        return Field(g, std::move(vals));
    }
    if (reference_field == nullptr) {
        throw std::invalid_argument("flow determinant check needs the initial height field");
    }
    const Spectrum& hs = field.spectrum();
    const std::vector<double>& h0 = reference_field->samples();
    run_indexed(vals.size(), [&](std::size_t k) {
        const int i = static_cast<int>(k) / g.n;
        const int j = static_cast<int>(k) % g.n;
        const Vec2 x = g.node(i, j);
        const Vec2 y(x(0) + flow.w1.sample(i, j), x(1) + flow.w2.sample(i, j));
        const PhasePair ph = phases(g, y);
        const double h_at = eval_offgrid(hs, ph);
        if (h_at <= 0.0) {
            std::ostringstream os;
            os << "height nonpositive along the flow: " << h_at << " at node (" << i << "," << j
               << ")";
            throw PositivityLost(os.str());
        }
        vals[k] = det.samples()[k] - h0[k] / h_at;
    });
    return Field(g, std::move(vals));
}

Monitors measure_monitors(const Field& field, Model model, const CoriolisContext& cor,
                          double step_increment, double det_err) {
    Monitors m;
    m.nu_sup = sup_abs(nu_field(field, model, cor));
    m.convexity_min = min_lambda_min(stability_matrix(field, cor));
    m.step_increment = step_increment;
    m.det_err = det_err;
    m.mass = mean(field);
    return m;
}

std::string step_prefix(int step_index, double t) {
    std::ostringstream os;
    os << "step " << step_index << " (t=" << t << "): ";
    return os.str();
}

} // namespace

StepState initial_state(Model model, const Field& field0, const CoriolisContext& cor) {
    if (field0.grid().n != cor.f.grid().n) {
        throw std::invalid_argument("initial field and rotation context use different grids");
    }
    if (model == Model::SGSW) {
        double mn = field0.samples()[0];
        for (double v : field0.samples()) mn = std::min(mn, v);
        if (mn <= 0.0) {
            std::ostringstream os;
            os << "initial height not positive: min=" << mn;
            throw PositivityLost(os.str());
        }
    }
    StepState s;
    s.model = model;
    s.t = 0.0;
    s.field = field0;
    s.flow = PeriodicMap::identity(field0.grid());
    s.flow_inv = PeriodicMap::identity(field0.grid());
    s.det_check = Field(field0.grid(),
                        std::vector<double>(static_cast<std::size_t>(field0.grid().n) *
                                                field0.grid().n,
                                            0.0));
    s.monitors = measure_monitors(field0, model, cor, 0.0, 0.0);
    return s;
}

MAStepParams derived_params(const Tolerances& tol, double c0) {
    if (!(c0 > 0.0)) {
        std::ostringstream os;
        os << "derived_params: eigenvalue floor " << c0 << " not positive";
        throw ConvexityLost(os.str());
    }
    MAStepParams params;
    params.newton_tol = tol.newton_tol;
    params.elliptic_tol = tol.elliptic_tol;
    params.map.tol = tol.map_tol;
    params.convexity_floor = 0.5 * c0;
    params.map.guard_c0 = 0.25 * c0;
    params.ab_bound = 0.125 * c0;
    return params;
}

StepState step(const StepState& state, double dt, const StepConfig& cfg) {
    if (cfg.coriolis == nullptr) {
        throw std::invalid_argument("step config has no rotation context");
    }
    if (!(dt >= 0.0) || !std::isfinite(dt)) {
        throw std::invalid_argument("step size must be finite and nonnegative");
    }
    if (dt == 0.0) return state;
    const CoriolisContext& cor = *cfg.coriolis;

    MAStepResult result = ma_solve(state.field, dt, cfg.model, cor, cfg.params);

    // Forward map for this step, then both accumulated flows by composition.
    StepContext fwd_ctx = StepContext::build(cor, state.field, result.q, dt);
    const PeriodicMap fmap = solve_forward(fwd_ctx, cfg.params.map);
    PeriodicMap flow = compose(fmap, state.flow);
    // Composition alone lets resampling error accumulate roughly one solver
    // tolerance per step, so the composed inverse serves as a warm start for a
    // Newton polish against the new flow; that pins the round trip near the
    // map tolerance for the whole run.
    const PeriodicMap flow_inv_seed = compose(state.flow_inv, result.zmap);
    PeriodicMap flow_inv = invert_map(flow, cfg.params.map.tol, cfg.params.map.max_iter,
                                      &flow_inv_seed);

    const PeriodicMap round_trip = compose(flow, flow_inv);
    const double rt_err = sup_abs(displacement_norm(round_trip));
    if (rt_err > 10.0 * cfg.params.map.tol) {
        std::ostringstream os;
        os << "flow round trip drifted to " << rt_err << " (allowed "
           << 10.0 * cfg.params.map.tol << ")";
        throw FlowRoundTripFailed(os.str());
    }

    const double inc = increment_norm(result.q, state.field);
    if (inc > cfg.lip_cap * dt) {
        std::ostringstream os;
        os << "field increment " << inc << " exceeds cap " << cfg.lip_cap * dt << " (cap "
           << cfg.lip_cap << " x dt " << dt << ")";
        throw LipschitzCapExceeded(os.str());
    }

    const Field det_check = flow_det_check(flow, cfg.model, result.q, cfg.reference_field);

    StepState next;
    next.model = cfg.model;
    next.t = state.t + dt;
    next.field = result.q;
    next.flow = std::move(flow);
    next.flow_inv = std::move(flow_inv);
    next.monitors = measure_monitors(result.q, cfg.model, cor, inc, sup_abs(det_check));
    next.det_check = std::move(det_check);
    return next;
}

Trajectory run(const RunConfig& cfg,
               const std::function<void(int, const StepState&)>& on_snapshot,
               const std::function<void(const StepRecord&)>& on_step) {
    const CoriolisContext cor = coriolis_from(cfg);
    const Field field0 = initial_field(cfg);
    StepState state = initial_state(cfg.model, field0, cor);

    // Derive the certificate thresholds from the measured initial floor.
    StepConfig scfg;
    scfg.model = cfg.model;
    scfg.coriolis = &cor;
    scfg.lip_cap = cfg.lip_cap;
    scfg.reference_field = &field0;
    scfg.params = derived_params(cfg.tol, state.monitors.convexity_min - cfg.convexity_slack);

    Trajectory traj;
    traj.dt = cfg.dt;
    traj.snapshot_stride = cfg.snapshot_every;
    traj.snapshots.push_back(state);
    if (on_snapshot) on_snapshot(0, state);
    traj.summary.max_det_err = 0.0;
    traj.summary.min_convexity = state.monitors.convexity_min;
    traj.summary.nu_drift = 0.0;
    const double nu0 = state.monitors.nu_sup;

    const int nsteps = static_cast<int>(std::floor(cfg.T / cfg.dt + 1e-9));
    for (int k = 1; k <= nsteps; ++k) {
        try {
            state = step(state, cfg.dt, scfg);
        }
#define SGT_ANNOTATE(E) \
    catch (const E& e) { throw E(step_prefix(k, state.t) + e.what()); }
        SGT_ANNOTATE(NonFiniteField)
        SGT_ANNOTATE(MapSolveFailed)
        SGT_ANNOTATE(ContractionLost)
        SGT_ANNOTATE(EllipticSingular)
        SGT_ANNOTATE(IncompatibleRHS)
        SGT_ANNOTATE(ABTooLarge)
        SGT_ANNOTATE(DegenerateDeterminant)
        SGT_ANNOTATE(ConvexityLost)
        SGT_ANNOTATE(NewtonDiverged)
        SGT_ANNOTATE(PositivityLost)
        SGT_ANNOTATE(LipschitzCapExceeded)
        SGT_ANNOTATE(FlowRoundTripFailed)
#undef SGT_ANNOTATE

        StepRecord rec;
        rec.step = k;
        rec.t = state.t;
        rec.monitors = state.monitors;
        traj.series.push_back(rec);
        if (on_step) on_step(rec);

        traj.summary.max_det_err = std::max(traj.summary.max_det_err, state.monitors.det_err);
        traj.summary.min_convexity =
            std::min(traj.summary.min_convexity, state.monitors.convexity_min);
        traj.summary.nu_drift =
            std::max(traj.summary.nu_drift, std::abs(state.monitors.nu_sup - nu0));

        if (k % cfg.snapshot_every == 0 || k == nsteps) {
            traj.snapshots.push_back(state);
            if (on_snapshot) on_snapshot(k, state);
        }
    }
    return traj;
}

Trajectory run(const RunConfig& cfg) { return run(cfg, nullptr, nullptr); }

} // namespace sgt
