#include "sgt/ma_step.hpp"

#include "sgt/errors.hpp"
#include "sgt/parallel.hpp"

#include <cmath>
#include <sstream>

namespace sgt {

namespace {

const Mat2 kJ = (Mat2() << 0.0, -1.0, 1.0, 0.0).finished();

// Largest singular value of a 2x2 matrix.
double op_norm(const Mat2& m) {
    const double fro2 = m.squaredNorm();
    const double det = m.determinant();
    const double disc = std::max(0.0, fro2 * fro2 - 4.0 * det * det);
    return std::sqrt(0.5 * (fro2 + std::sqrt(disc)));
}

Mat2 stability_at(const CoriolisContext& cor, const VectorField& grad_p,
                  const MatrixField& hess_p, int i, int j) {
    const Vec2 gp = grad_p.at(i, j);
    const Vec2 gfi = cor.grad_f_inv.at(i, j);
    Mat2 s = Mat2::Identity();
    s += cor.f_inv.sample(i, j) * gp * gfi.transpose();
    s += cor.f_inv_sq.sample(i, j) * hess_p.at(i, j);
    return s;
}

// Stability matrix of the previous field evaluated at an off-grid point,
// assembled from the same caches the map solver uses.
Mat2 stability_from_z(const ZFields& z) {
    Mat2 s = Mat2::Identity();
    s += z.f_inv * z.grad_p * z.grad_f_inv.transpose();
    s += z.f_inv_sq * z.hess_p;
    return s;
}

struct PointAB {
    Mat2 a, b;
};

PointAB point_ab(const StepContext& ctx, int i, int j, const ZFields& z) {
    const CoriolisContext& cor = *ctx.coriolis;
    const double f_inv_x = cor.f_inv.sample(i, j);
    const Vec2 gq = ctx.grad_q.at(i, j);
    const Vec2 gfi_x = cor.grad_f_inv.at(i, j);
    const Mat2 hq = ctx.hess_q.at(i, j);

    PointAB out;
    const double dfi = z.f_inv - f_inv_x;
    out.a = dfi * gq * gfi_x.transpose() + (f_inv_x * dfi) * hq;

    const Mat2 rot = rotation(z.f * ctx.dt);
    const Vec2 rp = rot * z.grad_p;
    out.b = (z.f_inv * z.grad_p - f_inv_x * gq) * z.grad_f_inv.transpose();
    out.b += (rp - z.grad_p) * z.grad_f_inv_sq.transpose();
    out.b += (z.f_inv_sq * ctx.dt) * (kJ * rp) * z.grad_f.transpose();
    out.b += z.f_inv_sq * ((rot - Mat2::Identity()) * z.hess_p);
    return out;
}

Mat2 q_side_stability(const StepContext& ctx, int i, int j) {
    const CoriolisContext& cor = *ctx.coriolis;
    Mat2 s = Mat2::Identity();
    s += cor.f_inv.sample(i, j) * ctx.grad_q.at(i, j) * cor.grad_f_inv.at(i, j).transpose();
    s += cor.f_inv_sq.sample(i, j) * ctx.hess_q.at(i, j);
    return s;
}

void validate_model_state(const Field& p, Model model) {
    if (model != Model::SGSW) return;
    double mn = p[0];
    for (double v : p.samples()) mn = std::min(mn, v);
    if (!(mn > 0.0))
        throw PositivityLost("depth field must be positive, min = " + std::to_string(mn));
}

// Gauss-Legendre nodes and weights on [0,1], 8 points.
constexpr int kSegNodes = 8;
const double kSegT[kSegNodes] = {0.01985507175123188, 0.10166676129318664, 0.2372337950418355,
                                 0.40828267875217505, 0.59171732124782495, 0.7627662049581645,
                                 0.89833323870681336, 0.98014492824876812};
const double kSegW[kSegNodes] = {0.05061426814518813, 0.11119051722668724, 0.15685332293894364,
                                 0.18134189168918099, 0.18134189168918099, 0.15685332293894364,
                                 0.11119051722668724, 0.05061426814518813};

} // namespace

MatrixField stability_matrix(const Field& p, const CoriolisContext& cor) {
    const GridSpec g = p.grid();
    const VectorField grad_p(derivative(p, 1, 0), derivative(p, 0, 1));
    const MatrixField hess_p(derivative(p, 2, 0), derivative(p, 1, 1), derivative(p, 1, 1),
                             derivative(p, 0, 2));
    std::vector<Mat2> v(g.size());
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j)
            v[size_t(i) * g.n + j] = stability_at(cor, grad_p, hess_p, i, j);
    return MatrixField::from_values(g, v);
}

MatrixField stability_matrix_nested(const Field& p, const CoriolisContext& cor) {
    const GridSpec g = p.grid();
    const Field dp1 = derivative(p, 1, 0);
    const Field dp2 = derivative(p, 0, 1);
    // v_i = f^-1 d_i p as sampled products, then one more spectral derivative
    const Field v1 = pointwise(cor.f_inv, dp1, [](double a, double b) { return a * b; });
    const Field v2 = pointwise(cor.f_inv, dp2, [](double a, double b) { return a * b; });
    MatrixField out(g);
    const Field t11 = derivative(v1, 1, 0), t12 = derivative(v1, 0, 1);
    const Field t21 = derivative(v2, 1, 0), t22 = derivative(v2, 0, 1);
    std::vector<Mat2> v(g.size());
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) {
            const double fi = cor.f_inv.sample(i, j);
            Mat2 m;
            m << t11.sample(i, j), t12.sample(i, j), t21.sample(i, j), t22.sample(i, j);
            v[size_t(i) * g.n + j] = Mat2::Identity() + fi * m;
        }
    return MatrixField::from_values(g, v);
}

double min_lambda_min(const MatrixField& m) {
    const GridSpec g = m.m11.grid();
    double mn = std::numeric_limits<double>::infinity();
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) mn = std::min(mn, lambda_min_sym(m.at(i, j)));
    return mn;
}

std::pair<MatrixField, MatrixField> matrices_AB(const StepContext& ctx, const PeriodicMap& zmap,
                                                double ab_bound, ABReport* report) {
    const GridSpec g = ctx.grid();
    std::vector<Mat2> va(g.size()), vb(g.size());
    std::vector<double> na(g.size()), nb(g.size());
    run_indexed(g.size(), [&](std::size_t idx) {
        const int i = static_cast<int>(idx) / g.n;
        const int j = static_cast<int>(idx) % g.n;
        const ZFields z = eval_z(ctx, zmap.at(i, j));
        const PointAB ab = point_ab(ctx, i, j, z);
        va[idx] = ab.a;
        vb[idx] = ab.b;
        na[idx] = op_norm(ab.a);
        nb[idx] = op_norm(ab.b);
    });
    double sup_a = 0.0, sup_b = 0.0;
    for (int k = 0; k < g.size(); ++k) {
        sup_a = std::max(sup_a, na[k]);
        sup_b = std::max(sup_b, nb[k]);
    }
    if (report) {
        report->sup_a = sup_a;
        report->sup_b = sup_b;
    }
    if (sup_a > ab_bound || sup_b > ab_bound) {
        std::ostringstream os;
        os << "matrices_AB: correction norm " << std::max(sup_a, sup_b) << " exceeds bound "
           << ab_bound;
        throw ABTooLarge(os.str());
    }
    return {MatrixField::from_values(g, va), MatrixField::from_values(g, vb)};
}

Field residual_with_map(const StepContext& ctx, const PeriodicMap& zmap, Model model) {
    const GridSpec g = ctx.grid();
    std::vector<double> r(g.size());
    std::vector<double> den_min(g.size());
    run_indexed(g.size(), [&](std::size_t idx) {
        const int i = static_cast<int>(idx) / g.n;
        const int j = static_cast<int>(idx) % g.n;
        const ZFields z = eval_z(ctx, zmap.at(i, j));
        const PointAB ab = point_ab(ctx, i, j, z);
        const double num = (q_side_stability(ctx, i, j) + ab.a).determinant();
        const double den = (stability_from_z(z) + ab.b).determinant();
        den_min[idx] = den;
        if (den > 0.0) {
            if (model == Model::SG)
                r[idx] = num / den - 1.0;
            else
                r[idx] = z.p * num / den - ctx.q.sample(i, j);
        }
    });
    for (int k = 0; k < g.size(); ++k)
        if (!(den_min[k] > 0.0)) {
            std::ostringstream os;
            os << "residual: denominator determinant " << den_min[k] << " at node ("
               << k / g.n << "," << k % g.n << ")";
            throw DegenerateDeterminant(os.str());
        }
    return Field(g, std::move(r));
}

Field residual(const Field& q, const Field& p, double dt, Model model, const CoriolisContext& cor,
               const MapSolveParams& map_params) {
    validate_model_state(p, model);
    const StepContext ctx = StepContext::build(cor, p, q, dt);
    const PeriodicMap zmap = solve_backward(ctx, map_params);
    return residual_with_map(ctx, zmap, model);
}

LinearizedCoefficients linearized_coefficients(const Field& p, Model model,
                                               const CoriolisContext& cor,
                                               double convexity_floor) {
    const GridSpec g = p.grid();
    validate_model_state(p, model);

    const VectorField grad_p(derivative(p, 1, 0), derivative(p, 0, 1));
    const MatrixField hess_p(derivative(p, 2, 0), derivative(p, 1, 1), derivative(p, 1, 1),
                             derivative(p, 0, 2));

    // W[i][m][j] = d_j (f^-1 d_m (f^-1 d_i p)), built in the discrete calculus:
    // sampled products, spectral derivatives.
    auto mul = [](double a, double b) { return a * b; };
    Field t[2][2] = {{Field(g), Field(g)}, {Field(g), Field(g)}};
    for (int i = 0; i < 2; ++i) {
        const Field vi = pointwise(cor.f_inv, i == 0 ? grad_p.x1 : grad_p.x2, mul);
        t[i][0] = pointwise(cor.f_inv, derivative(vi, 1, 0), mul);
        t[i][1] = pointwise(cor.f_inv, derivative(vi, 0, 1), mul);
    }
    Field w[2][2][2] = {{{Field(g), Field(g)}, {Field(g), Field(g)}},
                        {{Field(g), Field(g)}, {Field(g), Field(g)}}};
    for (int i = 0; i < 2; ++i)
        for (int m = 0; m < 2; ++m) {
            w[i][m][0] = derivative(t[i][m], 1, 0);
            w[i][m][1] = derivative(t[i][m], 0, 1);
        }

    std::vector<Mat2> av(g.size());
    std::vector<double> b1(g.size()), b2(g.size()), cv(g.size());
    double lmin_s = std::numeric_limits<double>::infinity();
    double lmin_a = std::numeric_limits<double>::infinity();

    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) {
            const size_t idx = size_t(i) * g.n + j;
            const Mat2 s = stability_at(cor, grad_p, hess_p, i, j);
            const double det = s.determinant();
            lmin_s = std::min(lmin_s, lambda_min_sym(s));
            if (!(det > 0.0) || lambda_min_sym(s) < convexity_floor) {
                std::ostringstream os;
                os << "linearized_coefficients: stability eigenvalue "
                   << lambda_min_sym(s) << " below floor " << convexity_floor << " at node ("
                   << i << "," << j << ")";
                throw ConvexityLost(os.str());
            }
            Mat2 cof;
            cof << s(1, 1), -s(1, 0), -s(0, 1), s(0, 0);
            const double fi = cor.f_inv.sample(i, j);
            const double fi2 = cor.f_inv_sq.sample(i, j);
            const Mat2 sym_cof = 0.5 * (cof + cof.transpose());
            Mat2 a = (fi2 / det) * sym_cof;

            // first-order coefficients: the product-rule term plus the map
            // sensitivity contracted through S^-1
            const Vec2 gfi = cor.grad_f_inv.at(i, j);
            Vec2 b = (2.0 * fi / det) * (cof * gfi);
            const Mat2 s_inv = s.inverse();
            for (int k = 0; k < 2; ++k) {
                double acc = 0.0;
                for (int ii = 0; ii < 2; ++ii)
                    for (int m = 0; m < 2; ++m)
                        for (int jj = 0; jj < 2; ++jj)
                            acc += cof(ii, jj) * w[ii][m][jj].sample(i, j) * s_inv(m, k);
                b(k) -= (fi2 / det) * acc;
            }

            double c = 0.0;
            if (model == Model::SGSW) {
                const double h = p.sample(i, j);
                a *= h;
                b *= h;
                const Vec2 gh = grad_p.at(i, j);
                for (int k = 0; k < 2; ++k) {
                    double acc = 0.0;
                    for (int m = 0; m < 2; ++m) acc += gh(m) * s_inv(m, k);
                    b(k) += fi2 * acc;
                }
                c = -1.0;
            }

            av[idx] = a;
            b1[idx] = b(0);
            b2[idx] = b(1);
            cv[idx] = c;
            lmin_a = std::min(lmin_a, lambda_min_sym(a));
        }

    LinearizedCoefficients out{MatrixField::from_values(g, av),
                               VectorField(Field(g, std::move(b1)), Field(g, std::move(b2))),
                               Field(g, std::move(cv)),
                               model == Model::SG ? Gauge::MeanZero : Gauge::None,
                               lmin_s,
                               lmin_a};
    if (!(out.lambda_min_a > 0.0))
        throw ConvexityLost("linearized_coefficients: principal part not uniformly elliptic");
    return out;
}

Field nu_field(const Field& p, Model model, const CoriolisContext& cor) {
    const GridSpec g = p.grid();
    const MatrixField s = stability_matrix(p, cor);
    std::vector<double> v(g.size());
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) {
            const size_t idx = size_t(i) * g.n + j;
            v[idx] = s.at(i, j).determinant();
            if (model == Model::SGSW) v[idx] /= p.sample(i, j);
        }
    return Field(g, std::move(v));
}

MatrixField certificate_matrix(const StepContext& ctx, const PeriodicMap& zmap) {
    const GridSpec g = ctx.grid();
    const CoriolisContext& cor = *ctx.coriolis;
    std::vector<Mat2> v(g.size());
    run_indexed(g.size(), [&](std::size_t idx) {
        const int i = static_cast<int>(idx) / g.n;
        const int j = static_cast<int>(idx) % g.n;
        const Vec2 x = g.node(i, j);
        const Vec2 zpt = zmap.at(i, j);
        Mat2 seg_d = Mat2::Zero();
        Vec2 seg_gfi = Vec2::Zero();
        for (int t = 0; t < kSegNodes; ++t) {
            const Vec2 y = (1.0 - kSegT[t]) * zpt + kSegT[t] * x;
            const PhasePair ph = phases(g, y);
            const Vec2 gp(eval_offgrid_deriv(ctx.p.spectrum(), ph, 1, 0),
                          eval_offgrid_deriv(ctx.p.spectrum(), ph, 0, 1));
            // squared factors derived from the inverse-rate interpolant, the
            // same representation the step relation differentiates
            const double fi = eval_offgrid(cor.f_inv.spectrum(), ph);
            const Vec2 gfi(eval_offgrid_deriv(cor.f_inv.spectrum(), ph, 1, 0),
                           eval_offgrid_deriv(cor.f_inv.spectrum(), ph, 0, 1));
            const Vec2 gfi2 = 2.0 * fi * gfi;
            const double fi2 = fi * fi;
            Mat2 hp;
            hp(0, 0) = eval_offgrid_deriv(ctx.p.spectrum(), ph, 2, 0);
            hp(0, 1) = eval_offgrid_deriv(ctx.p.spectrum(), ph, 1, 1);
            hp(1, 0) = hp(0, 1);
            hp(1, 1) = eval_offgrid_deriv(ctx.p.spectrum(), ph, 0, 2);
            seg_d += kSegW[t] * (gp * gfi2.transpose() + fi2 * hp);
            seg_gfi += kSegW[t] * gfi;
        }
        const double f_inv_x = cor.f_inv.sample(i, j);
        const Vec2 gp_x = ctx.grad_p.at(i, j);
        v[idx] = Mat2::Identity() + seg_d - f_inv_x * gp_x * seg_gfi.transpose();
    });
    return MatrixField::from_values(g, v);
}

namespace {

struct IterateState {
    PeriodicMap zmap;
    Field res;
    double res_norm;
};

IterateState evaluate_iterate(StepContext& ctx, Model model, const MAStepParams& params) {
    PeriodicMap zmap = solve_backward(ctx, params.map);
    Field res = residual_with_map(ctx, zmap, model);
    // The grid mean of the residual is pinned by the mass identities up to
    // aliasing of the determinant ratio, and gauged updates cannot move it
    // (their derivative along the mean direction vanishes to the same order).
    // Convergence is therefore measured on the projected residual, while the
    // mean itself must stay inside the identity bound.
    const double m = mean(res);
    if (!(std::abs(m) <= 1e-8)) {
        std::ostringstream os;
        os << "ma_solve: residual mean " << m << " breaks the 1e-8 mean identity";
        throw IncompatibleRHS(os.str());
    }
    double rn = 0.0;
    for (double v : res.samples()) rn = std::max(rn, std::abs(v - m));
    return IterateState{std::move(zmap), std::move(res), rn};
}

Field apply_gauge(const Field& q, Model model) {
    if (model == Model::SG) return mean_project(q);
    const double shift = 1.0 - mean(q);
    std::vector<double> s = q.samples();
    for (double& v : s) v += shift;
    return Field(q.grid(), std::move(s));
}

// Dense central-difference Newton matrix over all samples, for the debug mode.
Field fd_newton_update(StepContext& ctx, Model model, const MAStepParams& params,
                       const Field& res0) {
    const GridSpec g = ctx.grid();
    const int N = g.size();
    const double eps = 1e-6;
    const Field q0 = ctx.q;
    Eigen::MatrixXd J(N, N);
    for (int k = 0; k < N; ++k) {
        std::vector<double> sp = q0.samples(), sm = q0.samples();
        sp[k] += eps;
        sm[k] -= eps;
        ctx.set_q(Field(g, std::move(sp)));
        const Field rp = residual_with_map(ctx, solve_backward(ctx, params.map), model);
        ctx.set_q(Field(g, std::move(sm)));
        const Field rm = residual_with_map(ctx, solve_backward(ctx, params.map), model);
        for (int r = 0; r < N; ++r) J(r, k) = (rp[r] - rm[r]) / (2.0 * eps);
    }
    ctx.set_q(q0);
    Eigen::VectorXd rhs(N);
    for (int r = 0; r < N; ++r) rhs(r) = res0[r];
    if (model == Model::SG) {
        // the mean direction is flat; pin it with the mean row
        J.row(0).setConstant(1.0 / N);
        rhs(0) = 0.0;
    }
    const Eigen::VectorXd d = J.partialPivLu().solve(rhs);
    if (!d.allFinite()) throw NewtonDiverged("ma_solve: non-finite debug-mode update");
    std::vector<double> s(N);
    for (int r = 0; r < N; ++r) s[r] = d(r);
    return Field(g, std::move(s));
}

} // namespace

MAStepResult ma_solve(const Field& p, double dt, Model model, const CoriolisContext& cor,
                      const MAStepParams& params) {
    const GridSpec g = p.grid();
    validate_model_state(p, model);
    {
        const double lm = min_lambda_min(stability_matrix(p, cor));
        if (lm < params.convexity_floor) {
            std::ostringstream os;
            os << "ma_solve: input stability eigenvalue " << lm << " below floor "
               << params.convexity_floor;
            throw ConvexityLost(os.str());
        }
    }

    MAStepReport report;
    StepContext ctx = StepContext::build(cor, p, apply_gauge(p, model), dt);
    IterateState cur = evaluate_iterate(ctx, model, params);

    while (cur.res_norm > params.newton_tol) {
        if (report.newton_iterations >= params.max_newton) {
            std::ostringstream os;
            os << "ma_solve: no convergence after " << report.newton_iterations
               << " iterations, residual " << cur.res_norm;
            throw NewtonDiverged(os.str());
        }
        ++report.newton_iterations;

        // Newton matrix and update direction at the current iterate
        Field delta(g);
        if (params.fd_jacobian) {
            delta = fd_newton_update(ctx, model, params, cur.res);
        } else {
            LinearizedCoefficients lin =
                linearized_coefficients(ctx.q, model, cor, params.convexity_floor);
            report.rhs_mean_last = mean(cur.res);
            EllipticProblem prob{std::move(lin.a), std::move(lin.b), std::move(lin.c), cur.res,
                                 lin.gauge};
            delta = solve(prob, params.elliptic_tol);
        }

        // damped update: halve until the residual decreases
        const Field q_base = ctx.q;
        double lam = 1.0;
        bool accepted = false;
        for (int h = 0; h <= params.damping; ++h) {
            Field q_trial = apply_gauge(scale_add(q_base, 1.0, delta, -lam), model);
            if (model == Model::SGSW) {
                double mn = q_trial[0];
                for (double v : q_trial.samples()) mn = std::min(mn, v);
                if (!(mn > 0.0)) {
                    lam *= 0.5;
                    continue;
                }
            }
            ctx.set_q(std::move(q_trial));
            try {
                IterateState trial = evaluate_iterate(ctx, model, params);
                if (trial.res_norm < cur.res_norm) {
                    cur = std::move(trial);
                    accepted = true;
                    break;
                }
            } catch (const Error&) {
                // trial left the certified regime; shorten the step
            }
            lam *= 0.5;
        }
        if (!accepted) {
            ctx.set_q(q_base);
            std::ostringstream os;
            os << "ma_solve: damping exhausted at residual " << cur.res_norm;
            throw NewtonDiverged(os.str());
        }
    }

    // certificates at the accepted solution
    ABReport ab;
    matrices_AB(ctx, cur.zmap, params.ab_bound, &ab);
    report.sup_a = ab.sup_a;
    report.sup_b = ab.sup_b;
    report.final_residual = cur.res_norm;
    report.lambda_min_s_q = min_lambda_min(stability_matrix(ctx.q, cor));
    report.lambda_min_certificate = min_lambda_min(certificate_matrix(ctx, cur.zmap));
    if (!(report.lambda_min_certificate >= params.map.guard_c0)) {
        std::ostringstream os;
        os << "ma_solve: segment certificate " << report.lambda_min_certificate
           << " below guard " << params.map.guard_c0;
        throw ConvexityLost(os.str());
    }
    if (model == Model::SGSW) {
        double mn = ctx.q[0];
        for (double v : ctx.q.samples()) mn = std::min(mn, v);
        if (!(mn > 0.0)) throw PositivityLost("ma_solve: accepted depth not positive");
    }
    return MAStepResult{ctx.q, std::move(cur.zmap), report};
}

MAStepResult ma_solve_coupled_reference(const Field& p, double dt, Model model,
                                 const CoriolisContext& cor, double tol, int max_iter) {
    validate_model_state(p, model);
    const GridSpec g = p.grid();
    if (g.n > 8) throw std::invalid_argument("coupled reference solve is limited to n <= 8");
    const int N = g.size();
    const double target = model == Model::SG ? 0.0 : 1.0;

    StepContext ctx = StepContext::build(cor, p, apply_gauge(p, model), dt);

    // Unknown layout: field samples, then both displacement components of the
    // backward map. Equations: gauge row, determinant relation at every node
    // but (0,0), both components of the step relation at every node.
    Eigen::VectorXd u = Eigen::VectorXd::Zero(3 * N);
    for (int k = 0; k < N; ++k) u(k) = ctx.q[static_cast<std::size_t>(k)];

    auto evaluate = [&](const Eigen::VectorXd& v) {
        std::vector<double> qs(static_cast<std::size_t>(N));
        for (int k = 0; k < N; ++k) qs[static_cast<std::size_t>(k)] = v(k);
        ctx.set_q(Field(g, std::move(qs)));
        Eigen::VectorXd r(3 * N);
        double qmean = 0.0;
        for (int k = 0; k < N; ++k) qmean += v(k);
        r(0) = qmean / N - target;
        // Determinant relation at every node, projected by its grid mean so
        // the reference targets the same gauged system as the staged solver;
        // the (0,0) row is the implied one and carries the gauge instead.
        std::vector<double> det_rows(static_cast<std::size_t>(N));
        for (int k = 0; k < N; ++k) {
            const int i = k / g.n;
            const int j = k % g.n;
            const Vec2 x = g.node(i, j);
            const Vec2 z = x + Vec2(v(N + k), v(2 * N + k));
            const double num = qhat_dx(x, z, ctx).determinant();
            const double den = (-qhat_dz(x, z, ctx)).determinant();
            if (!(den > 0.0)) {
                std::ostringstream os;
                os << "coupled reference: denominator determinant " << den << " at node ("
                   << i << "," << j << ")";
                throw DegenerateDeterminant(os.str());
            }
            if (model == Model::SG) {
                det_rows[static_cast<std::size_t>(k)] = num / den - 1.0;
            } else {
                const double pz = eval_offgrid(ctx.p.spectrum(), phases(g, z));
                det_rows[static_cast<std::size_t>(k)] = pz * num / den - v(k);
            }
            const Vec2 qh = qhat(x, z, ctx);
            r(N + k) = qh(0);
            r(2 * N + k) = qh(1);
        }
        double det_mean = 0.0;
        for (double dv : det_rows) det_mean += dv;
        det_mean /= N;
        for (int k = 1; k < N; ++k) r(k) = det_rows[static_cast<std::size_t>(k)] - det_mean;
        return r;
    };

    Eigen::VectorXd res = evaluate(u);
    double res_norm = res.lpNorm<Eigen::Infinity>();
    const double eps = 1e-6;
    int iterations = 0;
    while (res_norm > tol) {
        if (iterations++ >= max_iter) {
            std::ostringstream os;
            os << "coupled reference: no convergence after " << max_iter
               << " iterations, residual " << res_norm;
            throw NewtonDiverged(os.str());
        }
        Eigen::MatrixXd jac(3 * N, 3 * N);
        for (int c = 0; c < 3 * N; ++c) {
            Eigen::VectorXd up = u;
            Eigen::VectorXd um = u;
            up(c) += eps;
            um(c) -= eps;
            jac.col(c) = (evaluate(up) - evaluate(um)) / (2.0 * eps);
        }
        const Eigen::VectorXd delta = jac.partialPivLu().solve(-res);
        if (!delta.allFinite()) throw NewtonDiverged("coupled reference: non-finite update");

        bool accepted = false;
        double lam = 1.0;
        for (int h = 0; h <= 8; ++h) {
            const Eigen::VectorXd trial = u + lam * delta;
            try {
                const Eigen::VectorXd rt = evaluate(trial);
                const double tn = rt.lpNorm<Eigen::Infinity>();
                if (tn < res_norm) {
                    u = trial;
                    res = rt;
                    res_norm = tn;
                    accepted = true;
                    break;
                }
            } catch (const Error&) {
                // trial outside the solvable regime; shorten the step
            }
            lam *= 0.5;
        }
        if (!accepted) {
            std::ostringstream os;
            os << "coupled reference: damping exhausted at residual " << res_norm;
            throw NewtonDiverged(os.str());
        }
    }

    std::vector<double> qs(static_cast<std::size_t>(N));
    std::vector<double> w1(static_cast<std::size_t>(N)), w2(static_cast<std::size_t>(N));
    for (int k = 0; k < N; ++k) {
        qs[static_cast<std::size_t>(k)] = u(k);
        w1[static_cast<std::size_t>(k)] = u(N + k);
        w2[static_cast<std::size_t>(k)] = u(2 * N + k);
    }
    MAStepResult out;
    out.q = Field(g, std::move(qs));
    out.zmap = PeriodicMap(Field(g, std::move(w1)), Field(g, std::move(w2)));
    out.report.newton_iterations = iterations;
    out.report.final_residual = res_norm;
    return out;
}

} // namespace sgt
