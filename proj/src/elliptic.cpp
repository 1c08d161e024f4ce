#include "sgt/elliptic.hpp"

#include "sgt/errors.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include <Eigen/Dense>

namespace sgt {

namespace {

constexpr double kCompatTol = 1e-8;

void require_same_grid(const GridSpec& g, const Field& f, const char* what) {
    if (!(f.grid() == g)) throw std::invalid_argument(std::string("elliptic: grid mismatch in ") + what);
}

// Dense collocation core shared by both forms. The matrix column for unit
// vector e_k is op(e_k) sampled on the grid, so the assembled matrix agrees
// with the residual evaluation path to rounding.
Field dense_solve(const GridSpec& g, const std::function<Field(const Field&)>& op, Field rhs,
                  bool mean_gauge, bool pin_invisible_modes, double tol, EllipticReport* report,
                  const char* what) {
    const int N = g.size();
    Eigen::MatrixXd M(N, N);
    std::vector<double> unit(N, 0.0);
    for (int k = 0; k < N; ++k) {
        unit[k] = 1.0;
        const Field col = op(Field(g, unit));
        unit[k] = 0.0;
        for (int r = 0; r < N; ++r) M(r, k) = col[r];
    }

    Eigen::VectorXd b(N);
    for (int r = 0; r < N; ++r) b(r) = rhs[r];
    if (mean_gauge) {
        M.row(0).setConstant(1.0 / N);
        b(0) = 0.0;
    }
    if (pin_invisible_modes) {
        // A first-order-only operator cannot see the three alternating-sign
        // modes at the grid's highest frequency: their spectral first
        // derivatives are identically zero, so they sit in the kernel on both
        // sides of the system. Normalized rank-one updates pin them to zero
        // without disturbing the solved equations, which carry no content in
        // those modes either.
        Eigen::VectorXd v1(N), v2(N), v3(N);
        for (int i = 0; i < g.n; ++i)
            for (int j = 0; j < g.n; ++j) {
                const int r = i * g.n + j;
                const double si = (i % 2 == 0) ? 1.0 : -1.0;
                const double sj = (j % 2 == 0) ? 1.0 : -1.0;
                v1(r) = si / g.n;
                v2(r) = sj / g.n;
                v3(r) = si * sj / g.n;
            }
        M += v1 * v1.transpose() + v2 * v2.transpose() + v3 * v3.transpose();
    }

    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
    const Eigen::VectorXd ud = lu.matrixLU().diagonal().cwiseAbs();
    const double dmax = ud.maxCoeff();
    const double dmin = ud.minCoeff();
    if (!(dmax > 0.0) || !std::isfinite(dmax) || dmin < 1e-13 * dmax) {
        std::ostringstream os;
        os << what << ": factorization breakdown, pivot ratio " << (dmax > 0 ? dmin / dmax : 0.0);
        throw EllipticSingular(os.str());
    }
    const Eigen::VectorXd x = lu.solve(b);
    if (!x.allFinite()) throw EllipticSingular(std::string(what) + ": non-finite solution");

    std::vector<double> s(N);
    for (int r = 0; r < N; ++r) s[r] = x(r);
    Field u(g, std::move(s));
    if (mean_gauge) u = mean_project(u);

    // Under the mean gauge, row 0 of the original collocation system is
    // replaced by the mean constraint; its leftover defect equals
    // n^2 * mean(op(u) - rhs), a compatibility/aliasing quantity that no
    // solver choice can reduce. It is recorded, not gated.
    const Field res = scale_add(op(u), 1.0, rhs, -1.0);
    double sup = 0.0;
    const double row0 = std::abs(res[0]);
    for (int r = mean_gauge ? 1 : 0; r < N; ++r) sup = std::max(sup, std::abs(res[r]));
    if (report) {
        report->gauge_row_residual = mean_gauge ? row0 : 0.0;
        report->residual_sup = sup;
    }
    const double bound = tol * (1.0 + sup_abs(rhs));
    if (!(sup <= bound)) {
        std::ostringstream os;
        os << what << ": residual " << sup << " exceeds bound " << bound;
        throw EllipticSingular(os.str());
    }
    return u;
}

} // namespace

Field apply_operator(const EllipticProblem& p, const Field& u) {
    const GridSpec g = u.grid();
    const Field d20 = derivative(u, 2, 0);
    const Field d11 = derivative(u, 1, 1);
    const Field d02 = derivative(u, 0, 2);
    const Field d10 = derivative(u, 1, 0);
    const Field d01 = derivative(u, 0, 1);
    std::vector<double> s(g.size());
    for (int k = 0; k < g.size(); ++k) {
        s[k] = p.a.m11[k] * d20[k] + (p.a.m12[k] + p.a.m21[k]) * d11[k] + p.a.m22[k] * d02[k] +
               p.b.x1[k] * d10[k] + p.b.x2[k] * d01[k] + p.c[k] * u[k];
    }
    return Field(g, std::move(s));
}

Field divform_operator(const MatrixField& A, const Field& u) {
    const GridSpec g = u.grid();
    const Field d10 = derivative(u, 1, 0);
    const Field d01 = derivative(u, 0, 1);
    std::vector<double> f1(g.size()), f2(g.size());
    for (int k = 0; k < g.size(); ++k) {
        f1[k] = A.m11[k] * d10[k] + A.m12[k] * d01[k];
        f2[k] = A.m21[k] * d10[k] + A.m22[k] * d01[k];
    }
    return divergence(VectorField(Field(g, std::move(f1)), Field(g, std::move(f2))));
}

Field solve(const EllipticProblem& p, double tol, EllipticReport* report) {
    if (!(tol > 0.0)) throw std::invalid_argument("elliptic solve: tol must be positive");
    const GridSpec g = p.rhs.grid();
    for (const Field* f : {&p.a.m11, &p.a.m12, &p.a.m21, &p.a.m22}) require_same_grid(g, *f, "a");
    require_same_grid(g, p.b.x1, "b");
    require_same_grid(g, p.b.x2, "b");
    require_same_grid(g, p.c, "c");

    const double a_scale = std::max({sup_abs(p.a.m11), sup_abs(p.a.m12), sup_abs(p.a.m22), 1.0});
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) {
            const Mat2 a = p.a.at(i, j);
            if (std::abs(a(0, 1) - a(1, 0)) > 1e-12 * a_scale)
                throw std::invalid_argument("elliptic solve: principal part not symmetric");
            const double lm = lambda_min_sym(a);
            if (!(lm > 0.0)) {
                std::ostringstream os;
                os << "elliptic solve: ellipticity lost, lambda_min " << lm << " at node (" << i
                   << "," << j << ")";
                throw EllipticSingular(os.str());
            }
        }
    for (int k = 0; k < g.size(); ++k)
        if (p.c[k] > 0.0)
            throw std::invalid_argument("elliptic solve: zero-order coefficient must be <= 0");

    Field rhs = p.rhs;
    const bool mean_gauge = p.gauge == Gauge::MeanZero;
    EllipticReport local;
    EllipticReport* rep = report ? report : &local;
    if (mean_gauge) {
        if (sup_abs(p.c) != 0.0)
            throw std::invalid_argument("elliptic solve: MeanZero gauge requires c = 0");
        const double m = mean(rhs);
        rep->rhs_mean_before = m;
        if (std::abs(m) > kCompatTol) {
            std::ostringstream os;
            os << "elliptic solve: rhs mean " << m << " exceeds compatibility tolerance "
               << kCompatTol;
            throw IncompatibleRHS(os.str());
        }
        rhs = mean_project(rhs);
    }

    auto op = [&p](const Field& u) { return apply_operator(p, u); };
    return dense_solve(g, op, std::move(rhs), mean_gauge, false, tol, rep, "elliptic solve");
}

Field solve_divform(const MatrixField& A, const VectorField& flux_rhs, double tol,
                    EllipticReport* report) {
    if (!(tol > 0.0)) throw std::invalid_argument("solve_divform: tol must be positive");
    const GridSpec g = A.m11.grid();
    require_same_grid(g, flux_rhs.x1, "flux_rhs");
    require_same_grid(g, flux_rhs.x2, "flux_rhs");
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) {
            const double lm = lambda_min_sym(A.at(i, j));
            if (!(lm > 0.0)) {
                std::ostringstream os;
                os << "solve_divform: ellipticity lost, lambda_min " << lm << " at node (" << i
                   << "," << j << ")";
                throw EllipticSingular(os.str());
            }
        }

    Field rhs = divergence(flux_rhs);
    EllipticReport local;
    EllipticReport* rep = report ? report : &local;
    rep->rhs_mean_before = mean(rhs);
    rhs = mean_project(rhs);

    auto op = [&A](const Field& u) { return divform_operator(A, u); };
    return dense_solve(g, op, std::move(rhs), true, true, tol, rep, "solve_divform");
}

} // namespace sgt
