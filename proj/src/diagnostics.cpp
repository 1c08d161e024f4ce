#include "sgt/diagnostics.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

#include "sgt/elliptic.hpp"
#include "sgt/errors.hpp"
#include "sgt/parallel.hpp"

namespace sgt {

namespace {

const Mat2 kJ = (Mat2() << 0.0, -1.0, 1.0, 0.0).finished();

double mul(double a, double b) { return a * b; }

// Pointwise A(x) = S(x)^-1 * w(x) and G(x) = S(x)^-1 g(x) for the dt-field
// problems; checks positivity of sym(S) along the way.
struct InverseStability {
    MatrixField a;
    VectorField flux;

    InverseStability(GridSpec g) : a(g), flux(g) {}
};

InverseStability inverse_stability_parts(const Field& field, const CoriolisContext& cor,
                                         const Field& weight, const VectorField& g) {
    const GridSpec grid = field.grid();
    const MatrixField s = stability_matrix(field, cor);
    std::vector<Mat2> amats(static_cast<std::size_t>(grid.n) * grid.n);
    std::vector<double> f1(amats.size()), f2(amats.size());
    run_indexed(amats.size(), [&](std::size_t k) {
        const int i = static_cast<int>(k) / grid.n;
        const int j = static_cast<int>(k) % grid.n;
        const Mat2 sm = s.at(i, j);
        const double lam = lambda_min_sym(sm);
        if (!(sm.determinant() > 0.0) || !(lam > 0.0)) {
            std::ostringstream os;
            os << "stability matrix not positive at node (" << i << "," << j
               << "): min eigenvalue=" << lam;
            throw ConvexityLost(os.str());
        }
        const Mat2 inv = sm.inverse();
        amats[k] = inv * weight.sample(i, j);
        const Vec2 flux = inv * g.at(i, j);
        f1[k] = flux(0);
        f2[k] = flux(1);
    });
    InverseStability out(grid);
    out.a = MatrixField::from_values(grid, amats);
    out.flux = VectorField(Field(grid, std::move(f1)), Field(grid, std::move(f2)));
    return out;
}

} // namespace

VectorField geostrophic_velocity(const Field& p, const CoriolisContext& cor) {
    const GridSpec g = p.grid();
    const Field d1 = derivative(p, 1, 0);
    const Field d2 = derivative(p, 0, 1);
    std::vector<double> u1(static_cast<std::size_t>(g.n) * g.n), u2(u1.size());
    for (std::size_t k = 0; k < u1.size(); ++k) {
        const double fi = cor.f_inv[k];
        u1[k] = -fi * d2[k];
        u2[k] = fi * d1[k];
    }
    return VectorField(Field(g, std::move(u1)), Field(g, std::move(u2)));
}

Field dt_field(const Field& field, Model model, const CoriolisContext& cor, double elliptic_tol) {
    const GridSpec g = field.grid();
    const VectorField ug = geostrophic_velocity(field, cor);
    if (model == Model::SG) {
        // flux form: div(S^-1 f^-2 grad w) = div(S^-1 u_g)
        const InverseStability parts = inverse_stability_parts(field, cor, cor.f_inv_sq, ug);
        return solve_divform(parts.a, parts.flux, elliptic_tol);
    }
    // div(S^-1 f^-2 h grad w) - w = div(S^-1 f^-1 h J grad h)
    const Field weight = pointwise(cor.f_inv_sq, field, mul);
    const VectorField rhs_flux(pointwise(field, ug.x1, mul), pointwise(field, ug.x2, mul));
    const InverseStability parts = inverse_stability_parts(field, cor, weight, rhs_flux);

    // Expand div(A grad w) - w into the general operator: the second-order
    // coefficient only sees the symmetric part of A, the column divergence of
    // A becomes the drift, and the zeroth-order coefficient is -1.
    EllipticProblem prob{MatrixField(g), VectorField(g), Field(g), Field(g), Gauge::None};
    std::vector<Mat2> sym(static_cast<std::size_t>(g.n) * g.n);
    for (int i = 0; i < g.n; ++i) {
        for (int j = 0; j < g.n; ++j) {
            const Mat2 m = parts.a.at(i, j);
            sym[static_cast<std::size_t>(i) * g.n + j] = 0.5 * (m + m.transpose());
        }
    }
    prob.a = MatrixField::from_values(g, sym);
    prob.b = VectorField(
        scale_add(derivative(parts.a.m11, 1, 0), 1.0, derivative(parts.a.m21, 0, 1), 1.0),
        scale_add(derivative(parts.a.m12, 1, 0), 1.0, derivative(parts.a.m22, 0, 1), 1.0));
    prob.c = Field(g, std::vector<double>(static_cast<std::size_t>(g.n) * g.n, -1.0));
    prob.rhs = divergence(parts.flux);
    prob.gauge = Gauge::None;
    return solve(prob, elliptic_tol);
}

VectorField physical_velocity(const Field& field, const Field& dtf, const CoriolisContext& cor) {
    const GridSpec g = field.grid();
    const MatrixField s = stability_matrix(field, cor);
    const VectorField ug = geostrophic_velocity(field, cor);
    const VectorField gdt(derivative(dtf, 1, 0), derivative(dtf, 0, 1));
    std::vector<double> u1(static_cast<std::size_t>(g.n) * g.n), u2(u1.size());
    run_indexed(u1.size(), [&](std::size_t k) {
        const int i = static_cast<int>(k) / g.n;
        const int j = static_cast<int>(k) % g.n;
        const Mat2 sm = s.at(i, j);
        if (!(lambda_min_sym(sm) > 0.0)) {
            std::ostringstream os;
            os << "stability matrix not positive at node (" << i << "," << j << ")";
            throw ConvexityLost(os.str());
        }
        const Vec2 rhs = ug.at(i, j) - cor.f_inv_sq.sample(i, j) * gdt.at(i, j);
        const Vec2 u = sm.inverse() * rhs;
        u1[k] = u(0);
        u2[k] = u(1);
    });
    return VectorField(Field(g, std::move(u1)), Field(g, std::move(u2)));
}

EulerianSnapshot eulerian_snapshot(const Field& field, Model model, const CoriolisContext& cor,
                                   double elliptic_tol) {
    const GridSpec g = field.grid();
    VectorField ug = geostrophic_velocity(field, cor);
    Field dtf = dt_field(field, model, cor, elliptic_tol);
    VectorField u = physical_velocity(field, dtf, cor);

    // Momentum residual D_t u_g + grad(field) + f J u, with dt u_g expressed
    // through dtf since f is static.
    const VectorField gdt(derivative(dtf, 1, 0), derivative(dtf, 0, 1));
    const VectorField gfield(derivative(field, 1, 0), derivative(field, 0, 1));
    const Field d11 = derivative(ug.x1, 1, 0);
    const Field d12 = derivative(ug.x1, 0, 1);
    const Field d21 = derivative(ug.x2, 1, 0);
    const Field d22 = derivative(ug.x2, 0, 1);
    std::vector<double> r1(static_cast<std::size_t>(g.n) * g.n), r2(r1.size());
    for (int i = 0; i < g.n; ++i) {
        for (int j = 0; j < g.n; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * g.n + j;
            const double fi = cor.f_inv.sample(i, j);
            const Vec2 dt_ug = fi * (kJ * gdt.at(i, j));
            Mat2 dug;
            dug << d11.sample(i, j), d12.sample(i, j), d21.sample(i, j), d22.sample(i, j);
            const Vec2 adv = dug * u.at(i, j);
            const Vec2 res =
                dt_ug + adv + gfield.at(i, j) + cor.f.sample(i, j) * (kJ * u.at(i, j));
            r1[k] = res(0);
            r2[k] = res(1);
        }
    }
    VectorField rm(Field(g, std::move(r1)), Field(g, std::move(r2)));

    Field rmass(g);
    if (model == Model::SG) {
        rmass = divergence(u);
    } else {
        const VectorField hu(pointwise(field, u.x1, mul), pointwise(field, u.x2, mul));
        rmass = scale_add(dtf, 1.0, divergence(hu), 1.0);
    }

    EulerianSnapshot out{std::move(ug), std::move(u), std::move(dtf), std::move(rm),
                         std::move(rmass)};
    return out;
}

namespace {

// Longest uniformly spaced snapshot prefix (the final snapshot may sit off
// the stored stride when the step count is not a multiple of it).
std::size_t uniform_prefix(const std::vector<StepState>& snaps) {
    if (snaps.size() < 2) return snaps.size();
    const double spacing = snaps[1].t - snaps[0].t;
    std::size_t m = 2;
    while (m < snaps.size() &&
           std::abs(snaps[m].t - snaps[m - 1].t - spacing) <= 1e-12 * (1.0 + std::abs(spacing))) {
        ++m;
    }
    return m;
}

Vec2 position(const StepState& s, int i, int j) {
    const Vec2 x = s.field.grid().node(i, j);
    return Vec2(x(0) + s.flow.w1.sample(i, j), x(1) + s.flow.w2.sample(i, j));
}

} // namespace

std::vector<double> lagrangian_residual(const Trajectory& traj, const CoriolisContext& cor) {
    const std::size_t m = uniform_prefix(traj.snapshots);
    if (m < 3) throw InsufficientSnapshots("need at least 3 uniformly spaced snapshots");
    const GridSpec g = traj.snapshots.front().field.grid();
    const double delta = traj.snapshots[1].t - traj.snapshots[0].t;

    // Balanced velocity fields at every snapshot time, sampled along particles.
    std::vector<VectorField> ug;
    ug.reserve(m);
    for (std::size_t k = 0; k < m; ++k) {
        ug.push_back(geostrophic_velocity(traj.snapshots[k].field, cor));
        // spectra are cached lazily, so build them before the workers share them
        ug.back().x1.spectrum();
        ug.back().x2.spectrum();
    }
    cor.f_inv.spectrum();
    const std::size_t count = static_cast<std::size_t>(g.n) * g.n;
    std::vector<double> series(m - 2, 0.0);
    for (std::size_t mid = 1; mid + 1 < m; ++mid) {
        const StepState& prev = traj.snapshots[mid - 1];
        const StepState& cur = traj.snapshots[mid];
        const StepState& next = traj.snapshots[mid + 1];
        std::vector<double> norms(count, 0.0);
        run_indexed(count, [&](std::size_t k) {
            const int i = static_cast<int>(k) / g.n;
            const int j = static_cast<int>(k) % g.n;
            const Vec2 phi_prev = position(prev, i, j);
            const Vec2 phi_cur = position(cur, i, j);
            const Vec2 phi_next = position(next, i, j);
            auto vg_at = [&](const VectorField& v, const Vec2& x) {
                const PhasePair ph = phases(g, x);
                return Vec2(eval_offgrid(v.x1.spectrum(), ph), eval_offgrid(v.x2.spectrum(), ph));
            };
            const Vec2 vg_prev = vg_at(ug[mid - 1], phi_prev);
            const Vec2 vg_cur = vg_at(ug[mid], phi_cur);
            const Vec2 vg_next = vg_at(ug[mid + 1], phi_next);
            const Vec2 dphi = (phi_next - phi_prev) / (2.0 * delta);
            const Vec2 dvg = (vg_next - vg_prev) / (2.0 * delta);
            const double fi = eval_offgrid(cor.f_inv.spectrum(), phases(g, phi_cur));
            const Vec2 res = dphi + fi * (-(kJ * dvg)) - vg_cur;
            norms[k] = res.norm();
        });
        double sup = 0.0;
        for (double v : norms) sup = std::max(sup, v);
        series[mid - 1] = sup;
    }
    return series;
}

std::vector<double> lagrangian_residual_dual(const Trajectory& traj) {
    const std::size_t m = uniform_prefix(traj.snapshots);
    if (m < 3) throw InsufficientSnapshots("need at least 3 uniformly spaced snapshots");
    const GridSpec g = traj.snapshots.front().field.grid();
    const double delta = traj.snapshots[1].t - traj.snapshots[0].t;

    for (std::size_t k = 0; k < m; ++k) traj.snapshots[k].field.spectrum();
    const std::size_t count = static_cast<std::size_t>(g.n) * g.n;
    std::vector<double> series(m - 2, 0.0);
    for (std::size_t mid = 1; mid + 1 < m; ++mid) {
        std::vector<double> norms(count, 0.0);
        run_indexed(count, [&](std::size_t k) {
            const int i = static_cast<int>(k) / g.n;
            const int j = static_cast<int>(k) % g.n;
            auto x_of = [&](std::size_t idx) {
                const Vec2 phi = position(traj.snapshots[idx], i, j);
                const PhasePair ph = phases(g, phi);
                const Spectrum& sp = traj.snapshots[idx].field.spectrum();
                return std::pair<Vec2, Vec2>(
                    phi, Vec2(eval_offgrid_deriv(sp, ph, 1, 0),
                              eval_offgrid_deriv(sp, ph, 0, 1)));
            };
            const auto [phi_prev, gp_prev] = x_of(mid - 1);
            const auto [phi_cur, gp_cur] = x_of(mid);
            const auto [phi_next, gp_next] = x_of(mid + 1);
            const Vec2 x_prev = gp_prev + phi_prev;
            const Vec2 x_next = gp_next + phi_next;
            const Vec2 res = (x_next - x_prev) / (2.0 * delta) - kJ * gp_cur;
            norms[k] = res.norm();
        });
        double sup = 0.0;
        for (double v : norms) sup = std::max(sup, v);
        series[mid - 1] = sup;
    }
    return series;
}

double stability_probe(const RunConfig& cfg_a, const RunConfig& cfg_b) {
    if (cfg_a.n != cfg_b.n || cfg_a.dt != cfg_b.dt || cfg_a.T != cfg_b.T ||
        cfg_a.snapshot_every != cfg_b.snapshot_every || cfg_a.model != cfg_b.model) {
        throw std::invalid_argument("stability probe configs must differ only in initial data");
    }
    const Trajectory ta = run(cfg_a);
    const Trajectory tb = run(cfg_b);
    if (ta.snapshots.size() != tb.snapshots.size()) {
        throw InsufficientSnapshots("runs produced different snapshot counts");
    }
    const Field diff0 =
        scale_add(ta.snapshots.front().field, 1.0, tb.snapshots.front().field, -1.0);
    const double eps = sup_abs(diff0);
    if (eps == 0.0) {
        // Identical configs stay identical: still verify and return 0 exactly.
        double sup = 0.0;
        for (std::size_t k = 0; k < ta.snapshots.size(); ++k) {
            const Field d = scale_add(ta.snapshots[k].field, 1.0, tb.snapshots[k].field, -1.0);
            sup = std::max(sup, sup_abs(d));
        }
        return sup == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < ta.snapshots.size(); ++k) {
        const Field d = scale_add(ta.snapshots[k].field, 1.0, tb.snapshots[k].field, -1.0);
        worst = std::max(worst, sup_abs(d));
    }
    return worst / eps;
}

} // namespace sgt
