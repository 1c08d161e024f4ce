#include "doctest.h"

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "sgt/field.hpp"

using namespace sgt;

namespace {

constexpr double kTau = 2.0 * M_PI;

// Random trigonometric polynomial with modes |k1|,|k2| <= kmax, coefficient
// magnitude <= amp. Returned as a sampling closure so tests can evaluate it
// analytically off the grid as well.
struct RandomTrig {
    struct Term {
        double k1, k2, a, b;
    };
    std::vector<Term> terms;

    RandomTrig(int kmax, double amp, unsigned seed) {
        std::mt19937 rng(seed);
        std::uniform_real_distribution<double> coef(-amp, amp);
        for (int k1 = 0; k1 <= kmax; ++k1)
            for (int k2 = -kmax; k2 <= kmax; ++k2) {
                if (k1 == 0 && k2 <= 0) continue;
                terms.push_back({double(k1), double(k2), coef(rng), coef(rng)});
            }
    }

    double eval(const Vec2& x) const {
        double v = 0.0;
        for (const auto& t : terms) {
            const double ph = kTau * (t.k1 * x[0] + t.k2 * x[1]);
            v += t.a * std::cos(ph) + t.b * std::sin(ph);
        }
        return v;
    }

    Field sample(GridSpec g) const {
        return Field::from_function(g, [&](const Vec2& x) { return eval(x); });
    }
};

double sup_diff(const Field& a, const Field& b) {
    double m = 0.0;
    for (size_t k = 0; k < a.samples().size(); ++k)
        m = std::max(m, std::abs(a.samples()[k] - b.samples()[k]));
    return m;
}

// Sixth order centered first difference along one axis, wrapping indices.
Field fd_derivative(const Field& f, int axis, int ord) {
    const int n = f.n();
    const double h = 1.0 / n;
    std::vector<double> out(f.samples().size());
    auto at = [&](int i, int j) {
        i = ((i % n) + n) % n;
        j = ((j % n) + n) % n;
        return f.sample(i, j);
    };
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            auto s = [&](int o) { return axis == 0 ? at(i + o, j) : at(i, j + o); };
            double v;
            if (ord == 1) {
                v = (45.0 * (s(1) - s(-1)) - 9.0 * (s(2) - s(-2)) + (s(3) - s(-3))) /
                    (60.0 * h);
            } else {
                v = (-490.0 * s(0) + 270.0 * (s(1) + s(-1)) - 27.0 * (s(2) + s(-2)) +
                     2.0 * (s(3) + s(-3))) /
                    (180.0 * h * h);
            }
            out[size_t(i) * n + j] = v;
        }
    return Field(f.grid(), std::move(out));
}

// Direct double sum over every stored coefficient, no phase caching. Mirrors
// the documented interpolant formula and nothing else.
double brute_force_eval(const Field& f, const Vec2& x) {
    const Spectrum& sp = f.spectrum();
    const int n = sp.grid.n;
    std::complex<double> acc = 0.0;
    for (int k1 = 0; k1 < n; ++k1)
        for (int k2 = 0; k2 < n; ++k2) {
            const double ph = kTau * (sp.grid.freq(k1) * x[0] + sp.grid.freq(k2) * x[1]);
            acc += sp.c[size_t(k1) * n + k2] * std::complex<double>(std::cos(ph), std::sin(ph));
        }
    return acc.real();
}

PeriodicMap sine_map(GridSpec g, double amp) {
    Field w1 = Field::from_function(g, [&](const Vec2& x) { return amp * std::sin(kTau * x[1]); });
    Field w2 = Field::from_function(g, [&](const Vec2& x) { return amp * std::sin(kTau * x[0]); });
    return PeriodicMap(std::move(w1), std::move(w2));
}

} // namespace

TEST_CASE("derivative of a constant field is zero") {
    GridSpec g(16);
    Field c = Field::from_function(g, [](const Vec2&) { return 3.7; });
    CHECK(sup_abs(derivative(c, 1, 0)) <= 1e-13);
    CHECK(sup_abs(derivative(c, 0, 1)) <= 1e-13);
    CHECK(sup_abs(derivative(c, 2, 1)) <= 1e-10);
}

TEST_CASE("derivative of a single mode matches the analytic value") {
    GridSpec g(32);
    Field f = Field::from_function(g, [](const Vec2& x) { return std::sin(kTau * x[0]); });
    Field d = derivative(f, 1, 0);
    CHECK(d.sample(0, 0) == doctest::Approx(kTau).epsilon(1e-12));
    Field exact = Field::from_function(g, [](const Vec2& x) { return kTau * std::cos(kTau * x[0]); });
    CHECK(sup_diff(d, exact) <= 1e-11);
}

TEST_CASE("spectral derivatives match sixth order finite differences") {
    // Modes <= 1 and small amplitude keep the seventh derivative truncation
    // term of the stencil below the comparison tolerance at n = 64.
    GridSpec g(64);
    RandomTrig rt(1, 0.05, 42u);
    Field f = rt.sample(g);
    CHECK(sup_diff(derivative(f, 1, 0), fd_derivative(f, 0, 1)) <= 1e-8);
    CHECK(sup_diff(derivative(f, 0, 1), fd_derivative(f, 1, 1)) <= 1e-8);
    CHECK(sup_diff(derivative(f, 2, 0), fd_derivative(f, 0, 2)) <= 1e-7);
}

TEST_CASE("first derivatives have zero mean") {
    GridSpec g(24);
    RandomTrig rt(3, 0.5, 7u);
    Field f = rt.sample(g);
    CHECK(std::abs(mean(derivative(f, 1, 0))) <= 1e-12);
    CHECK(std::abs(mean(derivative(f, 0, 1))) <= 1e-12);
}

TEST_CASE("mixed partial derivatives commute") {
    GridSpec g(32);
    RandomTrig rt(4, 0.3, 11u);
    Field f = rt.sample(g);
    Field dxy = derivative(derivative(f, 1, 0), 0, 1);
    Field dyx = derivative(derivative(f, 0, 1), 1, 0);
    CHECK(sup_diff(dxy, dyx) <= 1e-10);
    CHECK(sup_diff(dxy, derivative(f, 1, 1)) <= 1e-10);
}

TEST_CASE("samples to spectrum and back reproduces the field") {
    GridSpec g(20);
    std::mt19937 rng(3u);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> s(g.size());
    for (double& v : s) v = u(rng);
    Field f(g, s);
    Field back = derivative(f, 0, 0);
    CHECK(sup_diff(f, back) <= 1e-12);
}

TEST_CASE("mean projection removes exactly the mean") {
    GridSpec g(16);
    Field c5 = Field::from_function(g, [](const Vec2&) { return 5.0; });
    CHECK(sup_abs(mean_project(c5)) <= 1e-14);

    Field s = Field::from_function(g, [](const Vec2& x) { return std::sin(kTau * x[0]); });
    CHECK(sup_diff(mean_project(s), s) <= 1e-14);

    RandomTrig rt(2, 0.4, 5u);
    Field f = Field::from_function(g, [&](const Vec2& x) { return rt.eval(x) + 0.25; });
    Field p = mean_project(f);
    CHECK(std::abs(mean(p)) <= 1e-14);
    Field shift = scale_add(f, 1.0, p, -1.0);
    CHECK(std::abs(sup_abs(shift) - std::abs(mean(f))) <= 1e-13);
}

TEST_CASE("off grid evaluation reproduces grid nodes") {
    GridSpec g(16);
    std::mt19937 rng(9u);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> s(g.size());
    for (double& v : s) v = u(rng);
    Field f(g, s);
    for (int i = 0; i < g.n; i += 3)
        for (int j = 0; j < g.n; j += 3)
            CHECK(std::abs(eval_offgrid(f, g.node(i, j)) - f.sample(i, j)) <= 1e-12);
}

TEST_CASE("off grid evaluation of a quarter period cosine vanishes") {
    GridSpec g(16);
    Field f = Field::from_function(g, [](const Vec2& x) { return std::cos(kTau * x[1]); });
    CHECK(std::abs(eval_offgrid(f, Vec2(0.3, 0.25))) <= 1e-13);
}

TEST_CASE("off grid evaluation agrees with a brute force coefficient sum") {
    GridSpec g(16);
    std::mt19937 rng(17u);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> s(g.size());
    for (double& v : s) v = u(rng);
    Field f(g, s);
    std::uniform_real_distribution<double> pt(0.0, 1.0);
    for (int k = 0; k < 100; ++k) {
        Vec2 x(pt(rng), pt(rng));
        CHECK(std::abs(eval_offgrid(f, x) - brute_force_eval(f, x)) <= 1e-12);
    }
}

TEST_CASE("bicubic evaluation reproduces nodes and tracks the interpolant") {
    GridSpec g(64);
    Field f = Field::from_function(
        g, [](const Vec2& x) { return std::cos(kTau * x[0]) * std::sin(kTau * x[1]); });
    for (int i = 0; i < g.n; i += 7)
        for (int j = 0; j < g.n; j += 7)
            CHECK(std::abs(eval_bicubic(f, g.node(i, j)) - f.sample(i, j)) <= 1e-13);
    std::mt19937 rng(23u);
    std::uniform_real_distribution<double> pt(0.0, 1.0);
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        Vec2 x(pt(rng), pt(rng));
        worst = std::max(worst, std::abs(eval_bicubic(f, x) - eval_offgrid(f, x)));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("composition with the identity and constant shifts") {
    GridSpec g(16);
    PeriodicMap id = PeriodicMap::identity(g);
    PeriodicMap both = compose(id, id);
    CHECK(sup_abs(both.w1) <= 1e-14);
    CHECK(sup_abs(both.w2) <= 1e-14);

    Field c1 = Field::from_function(g, [](const Vec2&) { return 0.3; });
    Field c2 = Field::from_function(g, [](const Vec2&) { return -0.2; });
    PeriodicMap shift(c1, c2);
    PeriodicMap after = compose(shift, id);
    CHECK(sup_diff(after.w1, c1) <= 1e-13);
    CHECK(sup_diff(after.w2, c2) <= 1e-13);
}

TEST_CASE("map inversion of the identity and of constant shifts") {
    GridSpec g(16);
    PeriodicMap id = PeriodicMap::identity(g);
    PeriodicMap inv = invert_map(id);
    CHECK(sup_abs(inv.w1) <= 1e-13);
    CHECK(sup_abs(inv.w2) <= 1e-13);

    Field c1 = Field::from_function(g, [](const Vec2&) { return 0.3; });
    Field c2 = Field::from_function(g, [](const Vec2&) { return -0.2; });
    PeriodicMap shift(c1, c2);
    PeriodicMap sinv = invert_map(shift);
    for (size_t k = 0; k < sinv.w1.samples().size(); ++k) {
        CHECK(std::abs(sinv.w1.samples()[k] + 0.3) <= 1e-12);
        CHECK(std::abs(sinv.w2.samples()[k] - 0.2) <= 1e-12);
    }
}

TEST_CASE("inverting a smooth displacement and composing returns the identity") {
    GridSpec g(32);
    PeriodicMap G = sine_map(g, 0.01);
    PeriodicMap Ginv = invert_map(G, 1e-12, 50);
    PeriodicMap round = compose(G, Ginv);
    CHECK(sup_abs(round.w1) <= 1e-10);
    CHECK(sup_abs(round.w2) <= 1e-10);
    PeriodicMap round2 = compose(Ginv, G);
    CHECK(sup_abs(round2.w1) <= 1e-11);
    CHECK(sup_abs(round2.w2) <= 1e-11);
}

TEST_CASE("map inversion reports an exhausted iteration budget") {
    GridSpec g(16);
    // One Newton update cannot reach the tolerance from the first-order
    // initial guess at this displacement size, so the budget trips.
    PeriodicMap G = sine_map(g, 0.1);
    CHECK_THROWS_AS(invert_map(G, 1e-12, 1), MapSolveFailed);
}

TEST_CASE("jacobian of simple maps") {
    GridSpec g(16);
    PeriodicMap id = PeriodicMap::identity(g);
    MatrixField J = jacobian(id);
    Field det = det_jacobian(id);
    for (int i = 0; i < g.n; i += 5)
        for (int j = 0; j < g.n; j += 5) {
            CHECK((J.at(i, j) - Mat2::Identity()).norm() <= 1e-13);
            CHECK(det.sample(i, j) == doctest::Approx(1.0).epsilon(1e-13));
        }

    // Shear in one axis only: the Jacobian is triangular, so the determinant
    // is exactly one regardless of the displacement amplitude.
    Field w1 = Field::from_function(g, [](const Vec2& x) { return 0.05 * std::sin(kTau * x[1]); });
    PeriodicMap shear(w1, Field(g));
    Field sdet = det_jacobian(shear);
    for (double v : sdet.samples()) CHECK(std::abs(v - 1.0) <= 1e-12);
}

TEST_CASE("change of variables preserves the grid mean at spectral accuracy") {
    RandomTrig rt(3, 0.3, 29u);
    auto err_at = [&](int n) {
        GridSpec g(n);
        PeriodicMap G = sine_map(g, 0.1);
        Field det = det_jacobian(G);
        std::vector<double> s(g.size());
        for (int i = 0; i < g.n; ++i)
            for (int j = 0; j < g.n; ++j)
                s[size_t(i) * g.n + j] = rt.eval(G.at(i, j)) * det.sample(i, j);
        Field composed(g, std::move(s));
        GridSpec gf(64);
        return std::abs(mean(composed) - mean(rt.sample(gf)));
    };
    const double e16 = err_at(16);
    const double e32 = err_at(32);
    CHECK(e16 <= 1e-6);
    CHECK(e32 <= 1e-12);
    CHECK(e32 <= e16);
}

TEST_CASE("divergence of an analytic vector field") {
    GridSpec g(32);
    Field f1 = Field::from_function(g, [](const Vec2& x) { return std::sin(kTau * x[0]); });
    Field f2 = Field::from_function(g, [](const Vec2& x) { return std::sin(kTau * x[1]); });
    Field div = divergence(VectorField(f1, f2));
    Field exact = Field::from_function(g, [](const Vec2& x) {
        return kTau * (std::cos(kTau * x[0]) + std::cos(kTau * x[1]));
    });
    CHECK(sup_diff(div, exact) <= 1e-10);
}

TEST_CASE("displacement norm reads the pointwise displacement length") {
    GridSpec g(8);
    Field c1 = Field::from_function(g, [](const Vec2&) { return 0.3; });
    Field c2 = Field::from_function(g, [](const Vec2&) { return 0.4; });
    Field nrm = displacement_norm(PeriodicMap(c1, c2));
    for (double v : nrm.samples()) CHECK(v == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("smallest symmetric part eigenvalue of simple matrices") {
    Mat2 I = Mat2::Identity();
    CHECK(lambda_min_sym(I) == doctest::Approx(1.0).epsilon(1e-14));
    Mat2 shearm;
    shearm << 1.0, 2.0, 0.0, 1.0;
    CHECK(std::abs(lambda_min_sym(shearm)) <= 1e-14);
    Mat2 diag;
    diag << 2.0, 0.0, 0.0, 5.0;
    CHECK(lambda_min_sym(diag) == doctest::Approx(2.0).epsilon(1e-14));
}
