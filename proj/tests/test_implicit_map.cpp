#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "sgt/coriolis.hpp"
#include "sgt/implicit_map.hpp"
#include "sgt/ma_step.hpp"

using namespace sgt;

namespace {

constexpr double kTau = 2.0 * M_PI;

Field band_limited_random(GridSpec g, int kmax, double amp, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> coef(-amp, amp);
    struct Term {
        double k1, k2, a, b;
    };
    std::vector<Term> terms;
    for (int k1 = 0; k1 <= kmax; ++k1)
        for (int k2 = -kmax; k2 <= kmax; ++k2) {
            if (k1 == 0 && k2 <= 0) continue;
            terms.push_back({double(k1), double(k2), coef(rng), coef(rng)});
        }
    return Field::from_function(g, [&](const Vec2& x) {
        double v = 0.0;
        for (const auto& t : terms) {
            const double ph = kTau * (t.k1 * x[0] + t.k2 * x[1]);
            v += t.a * std::cos(ph) + t.b * std::sin(ph);
        }
        return v;
    });
}

CoriolisContext scenario_coriolis(GridSpec g) {
    return CoriolisContext::build(Field::from_function(
        g, [](const Vec2& x) { return 1.0 + 0.1 * std::sin(kTau * x[1]); }));
}

Field scenario_field(GridSpec g) {
    return Field::from_function(g, [](const Vec2& x) { return 0.01 * std::cos(kTau * x[0]); });
}

// Damped fixed-point solve of qhat(x, z) = 0. The step relation is already in
// fixed-point form z = z + qhat(x, z), so this needs no Jacobian at all; the
// damping factor is bisected whenever the residual fails to shrink. Slow and
// independent of the Newton path it cross-checks.
Vec2 fixed_point_solve(const Vec2& x, const StepContext& ctx, double tol, int max_iter) {
    Vec2 z = x;
    double lam = 1.0;
    Vec2 r = qhat(x, z, ctx);
    double rn = r.lpNorm<Eigen::Infinity>();
    for (int it = 0; it < max_iter && rn > tol; ++it) {
        const Vec2 zn = z + lam * r;
        const Vec2 rnew = qhat(x, zn, ctx);
        const double rnn = rnew.lpNorm<Eigen::Infinity>();
        if (rnn < rn) {
            z = zn;
            r = rnew;
            rn = rnn;
            lam = std::min(1.0, lam * 1.5);
        } else {
            lam *= 0.5;
            REQUIRE(lam > 1e-8);
        }
    }
    REQUIRE(rn <= tol);
    return z;
}

double map_sup_diff(const PeriodicMap& a, const PeriodicMap& b) {
    double m = 0.0;
    for (size_t k = 0; k < a.w1.samples().size(); ++k) {
        m = std::max(m, std::abs(a.w1.samples()[k] - b.w1.samples()[k]));
        m = std::max(m, std::abs(a.w2.samples()[k] - b.w2.samples()[k]));
    }
    return m;
}

} // namespace

TEST_CASE("rotation matrices at reference angles") {
    CHECK((rotation(0.0) - Mat2::Identity()).norm() <= 1e-15);
    Mat2 J;
    J << 0.0, -1.0, 1.0, 0.0;
    CHECK((rotation(M_PI / 2.0) - J).norm() <= 1e-15);
    CHECK((rotation(0.37) * rotation(-0.37) - Mat2::Identity()).norm() <= 1e-15);
    CHECK(rotation(0.37).determinant() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("step relation vanishes on the diagonal for trivial data") {
    GridSpec g(16);
    CoriolisContext cor = scenario_coriolis(g);

    StepContext zero = StepContext::build(cor, Field(g), Field(g), 0.01);
    std::mt19937 rng(31u);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 20; ++k) {
        const Vec2 x(u(rng), u(rng));
        CHECK(qhat(x, x, zero).lpNorm<Eigen::Infinity>() <= 1e-13);
        const Vec2 z(u(rng), u(rng));
        CHECK((qhat(x, z, zero) - (x - z)).lpNorm<Eigen::Infinity>() <= 1e-13);
    }

    Field p = scenario_field(g);
    StepContext frozen = StepContext::build(cor, p, p, 0.0);
    for (int k = 0; k < 20; ++k) {
        const Vec2 x(u(rng), u(rng));
        CHECK(qhat(x, x, frozen).lpNorm<Eigen::Infinity>() <= 1e-13);
    }
}

TEST_CASE("step relation is invariant under integer shifts of both points") {
    GridSpec g(8);
    CoriolisContext cor = scenario_coriolis(g);
    Field p = scenario_field(g);
    StepContext ctx = StepContext::build(cor, p, p, 0.01);
    std::mt19937 rng(37u);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 20; ++k) {
        const Vec2 x(u(rng), u(rng));
        const Vec2 z(u(rng), u(rng));
        const Vec2 base = qhat(x, z, ctx);
        const Vec2 shifted = qhat(x + Vec2(1.0, 0.0), z + Vec2(1.0, 0.0), ctx);
        CHECK((base - shifted).lpNorm<Eigen::Infinity>() <= 1e-12);
    }
}

TEST_CASE("second argument jacobian reduces to known matrices") {
    GridSpec g(16);
    CoriolisContext cor = scenario_coriolis(g);

    StepContext zero = StepContext::build(cor, Field(g), Field(g), 0.01);
    std::mt19937 rng(41u);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 10; ++k) {
        const Vec2 x(u(rng), u(rng));
        const Vec2 z(u(rng), u(rng));
        CHECK((qhat_dz(x, z, zero) + Mat2::Identity()).norm() <= 1e-13);
    }

    Field p0 = scenario_field(g);
    StepContext frozen = StepContext::build(cor, p0, p0, 0.0);
    MatrixField S = stability_matrix_nested(p0, cor);
    for (int i = 0; i < g.n; i += 3)
        for (int j = 0; j < g.n; j += 3) {
            const Vec2 x = g.node(i, j);
            const Mat2 got = qhat_dz(x, x, frozen);
            CHECK((got + S.at(i, j)).norm() <= 1e-10);
        }
}

TEST_CASE("analytic jacobians match central finite differences") {
    GridSpec g(16);
    const double h = 1e-6;
    const double dt = 0.01;
    double worst_dz = 0.0;
    double worst_dx = 0.0;
    int points = 0;
    for (unsigned state = 0; state < 4; ++state) {
        Field fgrid = Field::from_function(g, [](const Vec2&) { return 1.0; });
        fgrid = scale_add(fgrid, 1.0, band_limited_random(g, 1, 0.1, 900u + state), 1.0);
        CoriolisContext cor = CoriolisContext::build(fgrid);
        Field p = band_limited_random(g, 2, 0.01, 910u + state);
        Field q = band_limited_random(g, 2, 0.01, 920u + state);
        StepContext ctx = StepContext::build(cor, p, q, dt);
        std::mt19937 rng(930u + state);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int k = 0; k < 25; ++k, ++points) {
            const Vec2 x(u(rng), u(rng));
            const Vec2 z(u(rng), u(rng));
            Mat2 fd_dz, fd_dx;
            for (int d = 0; d < 2; ++d) {
                Vec2 e = Vec2::Zero();
                e[d] = h;
                fd_dz.col(d) = (qhat(x, z + e, ctx) - qhat(x, z - e, ctx)) / (2.0 * h);
                fd_dx.col(d) = (qhat(x + e, z, ctx) - qhat(x - e, z, ctx)) / (2.0 * h);
            }
            const Mat2 adz = qhat_dz(x, z, ctx);
            const Mat2 adx = qhat_dx(x, z, ctx);
            worst_dz = std::max(worst_dz, (adz - fd_dz).norm() / std::max(1.0, adz.norm()));
            worst_dx = std::max(worst_dx, (adx - fd_dx).norm() / std::max(1.0, adx.norm()));
        }
    }
    CHECK(points == 100);
    CHECK(worst_dz <= 1e-6);
    CHECK(worst_dx <= 1e-6);
}

TEST_CASE("backward solve returns the identity for trivial data") {
    GridSpec g(16);
    CoriolisContext cor = scenario_coriolis(g);
    MapSolveParams params;

    StepContext zero = StepContext::build(cor, Field(g), Field(g), 0.01);
    PeriodicMap m0 = solve_backward(zero, params);
    CHECK(sup_abs(m0.w1) <= 1e-12);
    CHECK(sup_abs(m0.w2) <= 1e-12);

    Field p = scenario_field(g);
    StepContext frozen = StepContext::build(cor, p, p, 0.0);
    PeriodicMap m1 = solve_backward(frozen, params);
    CHECK(sup_abs(m1.w1) <= 1e-12);
    CHECK(sup_abs(m1.w2) <= 1e-12);
}

TEST_CASE("backward solve matches a jacobian free fixed point oracle") {
    GridSpec g(8);
    CoriolisContext cor = scenario_coriolis(g);
    Field p = scenario_field(g);
    StepContext ctx = StepContext::build(cor, p, p, 0.01);
    MapSolveParams params;
    PeriodicMap solved = solve_backward(ctx, params);
    double worst = 0.0;
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) {
            const Vec2 x = g.node(i, j);
            const Vec2 z = fixed_point_solve(x, ctx, 1e-12, 5000);
            const Vec2 got = x + Vec2(solved.w1.sample(i, j), solved.w2.sample(i, j));
            worst = std::max(worst, (got - z).lpNorm<Eigen::Infinity>());
        }
    CHECK(worst <= 1e-9);
}

TEST_CASE("solved residual meets the tolerance at every node") {
    GridSpec g(8);
    CoriolisContext cor = scenario_coriolis(g);
    Field p = scenario_field(g);
    Field q = scale_add(p, 1.0, band_limited_random(g, 1, 0.001, 77u), 1.0);
    StepContext ctx = StepContext::build(cor, p, q, 0.01);
    MapSolveParams params;
    PeriodicMap solved = solve_backward(ctx, params);
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) {
            const Vec2 x = g.node(i, j);
            const Vec2 z = x + Vec2(solved.w1.sample(i, j), solved.w2.sample(i, j));
            CHECK(qhat(x, z, ctx).lpNorm<Eigen::Infinity>() <= params.tol);
        }
}

TEST_CASE("forward and backward maps invert each other") {
    GridSpec g(8);
    CoriolisContext cor = scenario_coriolis(g);
    Field p = scenario_field(g);
    StepContext ctx = StepContext::build(cor, p, p, 0.01);
    MapSolveParams params;

    StepContext zero = StepContext::build(cor, Field(g), Field(g), 0.01);
    PeriodicMap f0 = solve_forward(zero, params);
    CHECK(sup_abs(f0.w1) <= 1e-12);
    CHECK(sup_abs(f0.w2) <= 1e-12);

    PeriodicMap fwd = solve_forward(ctx, params);
    PeriodicMap bwd = solve_backward(ctx, params);

    // The maps are inverses through the step relation itself: re-solving the
    // forward equation at each backward image must land on the starting node.
    double worst = 0.0;
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) {
            const Vec2 x = g.node(i, j);
            Vec2 X = bwd.at(i, j);
            for (int it = 0; it < 50; ++it) {
                const Vec2 r = qhat(X, bwd.at(i, j), ctx);
                if (r.cwiseAbs().maxCoeff() <= params.tol) break;
                X -= qhat_dx(X, bwd.at(i, j), ctx).partialPivLu().solve(r);
            }
            worst = std::max(worst, (X - x).cwiseAbs().maxCoeff());
        }
    CHECK(worst <= 10.0 * params.tol);

    // Composing the sampled maps adds the resampling error of the forward
    // displacement at the backward images. On this coarse grid the map's
    // spectral tail aliases at the 1.4e-9 level, which is the floor here.
    PeriodicMap round = compose(fwd, bwd);
    CHECK(sup_abs(round.w1) <= 2e-9);
    CHECK(sup_abs(round.w2) <= 2e-9);
}

TEST_CASE("displacement scales linearly with the step size") {
    GridSpec g(16);
    CoriolisContext cor = scenario_coriolis(g);
    Field p = scenario_field(g);
    MapSolveParams params;
    std::vector<double> ratio;
    for (double dt : {1e-2, 5e-3, 2.5e-3}) {
        StepContext ctx = StepContext::build(cor, p, p, dt);
        PeriodicMap m = solve_backward(ctx, params);
        ratio.push_back(sup_abs(displacement_norm(m)) / dt);
    }
    const double lo = std::min({ratio[0], ratio[1], ratio[2]});
    const double hi = std::max({ratio[0], ratio[1], ratio[2]});
    CHECK(lo > 0.0);
    CHECK(hi / lo <= 1.5);
}

TEST_CASE("an unreachable contraction floor is reported") {
    GridSpec g(8);
    CoriolisContext cor = scenario_coriolis(g);
    Field p = scenario_field(g);
    StepContext ctx = StepContext::build(cor, p, p, 0.01);
    MapSolveParams params;
    params.guard_c0 = 2.0;
    CHECK_THROWS_AS(solve_backward(ctx, params), ContractionLost);
}
