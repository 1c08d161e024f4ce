#include "sgt/implicit_map.hpp"

#include "sgt/errors.hpp"
#include "sgt/parallel.hpp"

#include <cmath>
#include <sstream>

namespace sgt {

namespace {

const Mat2 kJ = (Mat2() << 0.0, -1.0, 1.0, 0.0).finished();

// z-side values needed by qhat alone; the rest only matter for Jacobians.
struct ZCore {
    double f, f_inv, f_inv_sq;
    Vec2 grad_p;
};

ZCore eval_z_core(const StepContext& ctx, const PhasePair& ph) {
    const CoriolisContext& c = *ctx.coriolis;
    ZCore z;
    z.f = eval_offgrid(c.f.spectrum(), ph);
    z.f_inv = eval_offgrid(c.f_inv.spectrum(), ph);
    // Squared quantities are derived from the interpolated inverse rate, not
    // read from the sampled square's own spectrum: off grid those differ by
    // aliasing, and the splitting identities behind the determinant ratio
    // need the chain rule to hold exactly in this arithmetic.
    z.f_inv_sq = z.f_inv * z.f_inv;
    // Gradients differentiate the parent interpolant at the point instead of
    // interpolating the sampled derivative field: sampling a derivative drops
    // the sine content it creates at the grid's highest frequency, and the
    // Jacobians below must be the exact derivatives of the values used here.
    z.grad_p = Vec2(eval_offgrid_deriv(ctx.p.spectrum(), ph, 1, 0),
                    eval_offgrid_deriv(ctx.p.spectrum(), ph, 0, 1));
    return z;
}

ZFields eval_z_full(const StepContext& ctx, const PhasePair& ph, const ZCore& core) {
    const CoriolisContext& c = *ctx.coriolis;
    ZFields z;
    z.f = core.f;
    z.f_inv = core.f_inv;
    z.f_inv_sq = core.f_inv_sq;
    z.p = eval_offgrid(ctx.p.spectrum(), ph);
    z.grad_p = core.grad_p;
    z.grad_f = Vec2(eval_offgrid_deriv(c.f.spectrum(), ph, 1, 0),
                    eval_offgrid_deriv(c.f.spectrum(), ph, 0, 1));
    z.grad_f_inv = Vec2(eval_offgrid_deriv(c.f_inv.spectrum(), ph, 1, 0),
                        eval_offgrid_deriv(c.f_inv.spectrum(), ph, 0, 1));
    z.grad_f_inv_sq = 2.0 * z.f_inv * z.grad_f_inv;
    z.hess_p(0, 0) = eval_offgrid_deriv(ctx.p.spectrum(), ph, 2, 0);
    z.hess_p(0, 1) = eval_offgrid_deriv(ctx.p.spectrum(), ph, 1, 1);
    z.hess_p(1, 0) = z.hess_p(0, 1);
    z.hess_p(1, 1) = eval_offgrid_deriv(ctx.p.spectrum(), ph, 0, 2);
    return z;
}

Vec2 qhat_from(const Vec2& x, double f_inv_x, const Vec2& grad_q_x, const Vec2& w,
               const ZCore& z, double dt) {
    const Mat2 rot = rotation(z.f * dt);
    return x + (f_inv_x * z.f_inv) * grad_q_x - w - z.f_inv_sq * (rot * z.grad_p);
}

Mat2 qhat_dz_from(double f_inv_x, const Vec2& grad_q_x, const ZFields& z, double dt) {
    const Mat2 rot = rotation(z.f * dt);
    const Vec2 rp = rot * z.grad_p;
    Mat2 dg = rp * z.grad_f_inv_sq.transpose();
    dg += (z.f_inv_sq * dt) * (kJ * rp) * z.grad_f.transpose();
    dg += z.f_inv_sq * (rot * z.hess_p);
    return f_inv_x * grad_q_x * z.grad_f_inv.transpose() - Mat2::Identity() - dg;
}

Mat2 qhat_dx_from(const XFields& x, double f_inv_w) {
    Mat2 m = x.grad_q * x.grad_f_inv.transpose() + x.f_inv * x.hess_q;
    return Mat2::Identity() + f_inv_w * m;
}

[[noreturn]] void throw_solve_failure(const char* op, const GridSpec& g, int i, int j,
                                      const char* what, double value) {
    std::ostringstream os;
    os << op << ": " << what << " at node (" << i << "," << j << ") of " << g.n << "x" << g.n
       << " grid, value " << value;
    throw MapSolveFailed(os.str());
}

[[noreturn]] void throw_contraction(const char* op, const GridSpec& g, int i, int j,
                                    double lmin, double guard) {
    std::ostringstream os;
    os << op << ": contraction certificate failed at node (" << i << "," << j << ") of " << g.n
       << "x" << g.n << " grid: lambda_min " << lmin << " < guard " << guard;
    throw ContractionLost(os.str());
}

void validate_params(const MapSolveParams& p) {
    if (!(p.tol > 0.0)) throw std::invalid_argument("MapSolveParams: tol must be positive");
    if (p.max_iter < 1) throw std::invalid_argument("MapSolveParams: max_iter must be >= 1");
    if (!(p.guard_c0 > 0.0)) throw std::invalid_argument("MapSolveParams: guard_c0 must be positive");
}

void prime_spectra(const StepContext& ctx) {
    // Every off-grid evaluation differentiates one of these four interpolants,
    // so these are the only spectra the point solvers touch. Building them
    // here keeps the lazy cache out of the worker threads.
    const CoriolisContext& c = *ctx.coriolis;
    c.f.spectrum();
    c.f_inv.spectrum();
    ctx.p.spectrum();
    ctx.q.spectrum();
}

} // namespace

StepContext StepContext::build(const CoriolisContext& cor, Field p_prev, Field q_cand, double dt) {
    if (!(p_prev.grid() == cor.f.grid()) || !(q_cand.grid() == cor.f.grid()))
        throw std::invalid_argument("StepContext: fields and Coriolis context must share a grid");
    StepContext ctx;
    ctx.coriolis = &cor;
    ctx.p = std::move(p_prev);
    ctx.q = std::move(q_cand);
    ctx.dt = dt;
    ctx.grad_p = VectorField{derivative(ctx.p, 1, 0), derivative(ctx.p, 0, 1)};
    ctx.hess_p = MatrixField{derivative(ctx.p, 2, 0), derivative(ctx.p, 1, 1),
                             derivative(ctx.p, 1, 1), derivative(ctx.p, 0, 2)};
    ctx.set_q(std::move(ctx.q));
    prime_spectra(ctx);
    return ctx;
}

void StepContext::set_q(Field q_new) {
    if (!(q_new.grid() == p.grid()))
        throw std::invalid_argument("StepContext: replacement field grid mismatch");
    q = std::move(q_new);
    grad_q = VectorField{derivative(q, 1, 0), derivative(q, 0, 1)};
    hess_q = MatrixField{derivative(q, 2, 0), derivative(q, 1, 1), derivative(q, 1, 1),
                         derivative(q, 0, 2)};
    q.spectrum();
}

ZFields eval_z(const StepContext& ctx, const Vec2& w) {
    const PhasePair ph = phases(ctx.grid(), w);
    return eval_z_full(ctx, ph, eval_z_core(ctx, ph));
}

XFields eval_x(const StepContext& ctx, const Vec2& x) {
    const PhasePair ph = phases(ctx.grid(), x);
    const CoriolisContext& c = *ctx.coriolis;
    XFields v;
    v.f_inv = eval_offgrid(c.f_inv.spectrum(), ph);
    v.grad_q = Vec2(eval_offgrid_deriv(ctx.q.spectrum(), ph, 1, 0),
                    eval_offgrid_deriv(ctx.q.spectrum(), ph, 0, 1));
    v.grad_f_inv = Vec2(eval_offgrid_deriv(c.f_inv.spectrum(), ph, 1, 0),
                        eval_offgrid_deriv(c.f_inv.spectrum(), ph, 0, 1));
    v.hess_q(0, 0) = eval_offgrid_deriv(ctx.q.spectrum(), ph, 2, 0);
    v.hess_q(0, 1) = eval_offgrid_deriv(ctx.q.spectrum(), ph, 1, 1);
    v.hess_q(1, 0) = v.hess_q(0, 1);
    v.hess_q(1, 1) = eval_offgrid_deriv(ctx.q.spectrum(), ph, 0, 2);
    return v;
}

Mat2 rotation(double a) {
    const double c = std::cos(a);
    const double s = std::sin(a);
    return (Mat2() << c, -s, s, c).finished();
}

Vec2 qhat(const Vec2& x, const Vec2& w, const StepContext& ctx) {
    const PhasePair phx = phases(ctx.grid(), x);
    const double f_inv_x = eval_offgrid(ctx.coriolis->f_inv.spectrum(), phx);
    const Vec2 gq(eval_offgrid_deriv(ctx.q.spectrum(), phx, 1, 0),
                  eval_offgrid_deriv(ctx.q.spectrum(), phx, 0, 1));
    const PhasePair phw = phases(ctx.grid(), w);
    return qhat_from(x, f_inv_x, gq, w, eval_z_core(ctx, phw), ctx.dt);
}

Mat2 qhat_dz(const Vec2& x, const Vec2& w, const StepContext& ctx) {
    const PhasePair phx = phases(ctx.grid(), x);
    const double f_inv_x = eval_offgrid(ctx.coriolis->f_inv.spectrum(), phx);
    const Vec2 gq(eval_offgrid_deriv(ctx.q.spectrum(), phx, 1, 0),
                  eval_offgrid_deriv(ctx.q.spectrum(), phx, 0, 1));
    const PhasePair phw = phases(ctx.grid(), w);
    return qhat_dz_from(f_inv_x, gq, eval_z_full(ctx, phw, eval_z_core(ctx, phw)), ctx.dt);
}

Mat2 qhat_dx(const Vec2& x, const Vec2& w, const StepContext& ctx) {
    const PhasePair phw = phases(ctx.grid(), w);
    const double f_inv_w = eval_offgrid(ctx.coriolis->f_inv.spectrum(), phw);
    return qhat_dx_from(eval_x(ctx, x), f_inv_w);
}

PeriodicMap solve_backward(const StepContext& ctx, const MapSolveParams& params) {
    validate_params(params);
    const GridSpec g = ctx.grid();
    const int n = g.n;
    PeriodicMap out{Field(g), Field(g)};
    std::vector<double> w1(g.size()), w2(g.size());

    run_indexed(g.size(), [&](std::size_t idx) {
        const int i = static_cast<int>(idx) / n;
        const int j = static_cast<int>(idx) % n;
        const Vec2 x = g.node(i, j);
        const double f_inv_x = ctx.coriolis->f_inv.sample(i, j);
        const Vec2 gq(ctx.grad_q.x1.sample(i, j), ctx.grad_q.x2.sample(i, j));

        Vec2 z = x;
        PhasePair ph = phases(g, z);
        ZCore core = eval_z_core(ctx, ph);
        Vec2 r = qhat_from(x, f_inv_x, gq, z, core, ctx.dt);
        double rn = r.cwiseAbs().maxCoeff();
        int iter = 0;
        while (rn > params.tol) {
            if (iter++ >= params.max_iter)
                throw_solve_failure("solve_backward", g, i, j, "iteration budget exhausted, residual", rn);
            const Mat2 jac = qhat_dz_from(f_inv_x, gq, eval_z_full(ctx, ph, core), ctx.dt);
            const double det = jac.determinant();
            if (!std::isfinite(det) || std::abs(det) < 1e-14)
                throw_solve_failure("solve_backward", g, i, j, "singular Jacobian, det", det);
            const Vec2 step = jac.partialPivLu().solve(-r);
            double lam = 1.0;
            bool accepted = false;
            for (int h = 0; h <= 8; ++h) {
                const Vec2 zt = z + lam * step;
                const PhasePair pht = phases(g, zt);
                const ZCore ct = eval_z_core(ctx, pht);
                const Vec2 rt = qhat_from(x, f_inv_x, gq, zt, ct, ctx.dt);
                const double rtn = rt.cwiseAbs().maxCoeff();
                if (std::isfinite(rtn) && rtn < rn) {
                    z = zt;
                    ph = pht;
                    core = ct;
                    r = rt;
                    rn = rtn;
                    accepted = true;
                    break;
                }
                lam *= 0.5;
            }
            if (!accepted)
                throw_solve_failure("solve_backward", g, i, j, "damping exhausted, residual", rn);
        }
        const Mat2 jac = qhat_dz_from(f_inv_x, gq, eval_z_full(ctx, ph, core), ctx.dt);
        const double lmin = lambda_min_sym(-jac);
        if (!(lmin >= params.guard_c0))
            throw_contraction("solve_backward", g, i, j, lmin, params.guard_c0);
        w1[idx] = z(0) - x(0);
        w2[idx] = z(1) - x(1);
    });

    return PeriodicMap{Field(g, std::move(w1)), Field(g, std::move(w2))};
}

PeriodicMap solve_forward(const StepContext& ctx, const MapSolveParams& params) {
    validate_params(params);
    const GridSpec g = ctx.grid();
    const int n = g.n;
    std::vector<double> w1(g.size()), w2(g.size());

    run_indexed(g.size(), [&](std::size_t idx) {
        const int i = static_cast<int>(idx) / n;
        const int j = static_cast<int>(idx) % n;
        const Vec2 y = g.node(i, j);
        // Second-argument values sit at the grid node and never move.
        ZCore core{ctx.coriolis->f.sample(i, j), ctx.coriolis->f_inv.sample(i, j),
                   ctx.coriolis->f_inv_sq.sample(i, j),
                   Vec2(ctx.grad_p.x1.sample(i, j), ctx.grad_p.x2.sample(i, j))};

        auto residual_at = [&](const Vec2& xt, double& f_inv_xt, Vec2& gq_xt) {
            const PhasePair ph = phases(g, xt);
            f_inv_xt = eval_offgrid(ctx.coriolis->f_inv.spectrum(), ph);
            gq_xt = Vec2(eval_offgrid_deriv(ctx.q.spectrum(), ph, 1, 0),
                         eval_offgrid_deriv(ctx.q.spectrum(), ph, 0, 1));
            return qhat_from(xt, f_inv_xt, gq_xt, y, core, ctx.dt);
        };

        Vec2 x = y;
        double f_inv_x;
        Vec2 gq;
        Vec2 r = residual_at(x, f_inv_x, gq);
        double rn = r.cwiseAbs().maxCoeff();
        int iter = 0;
        while (rn > params.tol) {
            if (iter++ >= params.max_iter)
                throw_solve_failure("solve_forward", g, i, j, "iteration budget exhausted, residual", rn);
            const Mat2 jac = qhat_dx(x, y, ctx);
            const double det = jac.determinant();
            if (!std::isfinite(det) || std::abs(det) < 1e-14)
                throw_solve_failure("solve_forward", g, i, j, "singular Jacobian, det", det);
            const Vec2 step = jac.partialPivLu().solve(-r);
            double lam = 1.0;
            bool accepted = false;
            for (int h = 0; h <= 8; ++h) {
                const Vec2 xt = x + lam * step;
                double f_inv_t;
                Vec2 gq_t;
                const Vec2 rt = residual_at(xt, f_inv_t, gq_t);
                const double rtn = rt.cwiseAbs().maxCoeff();
                if (std::isfinite(rtn) && rtn < rn) {
                    x = xt;
                    f_inv_x = f_inv_t;
                    gq = gq_t;
                    r = rt;
                    rn = rtn;
                    accepted = true;
                    break;
                }
                lam *= 0.5;
            }
            if (!accepted)
                throw_solve_failure("solve_forward", g, i, j, "damping exhausted, residual", rn);
        }
        const double lmin = lambda_min_sym(qhat_dx(x, y, ctx));
        if (!(lmin >= params.guard_c0))
            throw_contraction("solve_forward", g, i, j, lmin, params.guard_c0);
        w1[idx] = x(0) - y(0);
        w2[idx] = x(1) - y(1);
    });

    return PeriodicMap{Field(g, std::move(w1)), Field(g, std::move(w2))};
}

} // namespace sgt
