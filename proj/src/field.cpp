#include "sgt/field.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include <fftw3.h>

namespace sgt {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

// Cached FFTW plans per grid size. Plans are created with FFTW_ESTIMATE only:
// planner timing never enters, so the transform algorithm (and therefore the
// bit pattern of every result) is a function of n alone.
class Dft {
  public:
    static const Dft& get(int n) {
        static std::mutex mu;
        static std::map<int, std::unique_ptr<Dft>> registry;
        std::lock_guard<std::mutex> lock(mu);
        auto& slot = registry[n];
        if (!slot) slot.reset(new Dft(n));
        return *slot;
    }

    // coef[k] = (1/n^2) sum_j s[j] exp(-2 pi i j.k/n)
    void forward(const double* s, std::complex<double>* coef) const {
        const int nn = n_ * n_;
        std::vector<std::complex<double>> in(nn);
        for (int k = 0; k < nn; ++k) in[k] = s[k];
        fftw_execute_dft(fwd_, reinterpret_cast<fftw_complex*>(in.data()),
                         reinterpret_cast<fftw_complex*>(coef));
        const double scale = 1.0 / nn;
        for (int k = 0; k < nn; ++k) coef[k] *= scale;
    }

    // s[j] = Re sum_k coef[k] exp(+2 pi i j.k/n)
    void inverse(const std::complex<double>* coef, double* s) const {
        const int nn = n_ * n_;
        std::vector<std::complex<double>> in(coef, coef + nn), out(nn);
        fftw_execute_dft(bwd_, reinterpret_cast<fftw_complex*>(in.data()),
                         reinterpret_cast<fftw_complex*>(out.data()));
        for (int k = 0; k < nn; ++k) s[k] = out[k].real();
    }

  private:
    explicit Dft(int n) : n_(n) {
        std::vector<std::complex<double>> a(size_t(n) * n), b(size_t(n) * n);
        auto* pa = reinterpret_cast<fftw_complex*>(a.data());
        auto* pb = reinterpret_cast<fftw_complex*>(b.data());
        const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
        fwd_ = fftw_plan_dft_2d(n, n, pa, pb, FFTW_FORWARD, flags);
        bwd_ = fftw_plan_dft_2d(n, n, pa, pb, FFTW_BACKWARD, flags);
    }

    int n_;
    fftw_plan fwd_, bwd_;
};

size_t idx(const GridSpec& g, int i, int j) { return size_t(i) * g.n + j; }

} // namespace

GridSpec::GridSpec(int n_) : n(n_) {
    if (n < 8 || n % 2 != 0)
        throw std::invalid_argument("GridSpec: n must be even and >= 8, got " + std::to_string(n_));
}

PeriodicScalarField::PeriodicScalarField(GridSpec g, std::vector<double> samples)
    : grid_(g), s_(std::move(samples)) {
    if (int(s_.size()) != g.size())
        throw std::invalid_argument("PeriodicScalarField: sample count does not match grid");
    for (double v : s_)
        if (!std::isfinite(v)) throw NonFiniteField("PeriodicScalarField: non-finite sample");
}

const Spectrum& PeriodicScalarField::spectrum() const {
    if (!spec_) {
        auto sp = std::make_shared<Spectrum>();
        sp->grid = grid_;
        sp->c.resize(grid_.size());
        Dft::get(grid_.n).forward(s_.data(), sp->c.data());
        spec_ = std::move(sp);
    }
    return *spec_;
}

MatrixField MatrixField::from_values(GridSpec g, const std::vector<Mat2>& v) {
    MatrixField out(g);
    std::vector<double> a(g.size()), b(g.size()), c(g.size()), d(g.size());
    for (int k = 0; k < g.size(); ++k) {
        a[k] = v[k](0, 0);
        b[k] = v[k](0, 1);
        c[k] = v[k](1, 0);
        d[k] = v[k](1, 1);
    }
    out.m11 = Field(g, std::move(a));
    out.m12 = Field(g, std::move(b));
    out.m21 = Field(g, std::move(c));
    out.m22 = Field(g, std::move(d));
    return out;
}

Field derivative(const Field& f, int d1, int d2) {
    if (d1 < 0 || d2 < 0 || d1 + d2 > 3)
        throw std::invalid_argument("derivative: multi-index order must satisfy 0 <= |order| <= 3");
    const GridSpec g = f.grid();
    const Spectrum& sp = f.spectrum();
    std::vector<std::complex<double>> c(g.size());
    for (int k1 = 0; k1 < g.n; ++k1) {
        const std::complex<double> w1 =
            std::pow(std::complex<double>(0.0, two_pi * g.freq(k1)), d1);
        for (int k2 = 0; k2 < g.n; ++k2) {
            const std::complex<double> w2 =
                std::pow(std::complex<double>(0.0, two_pi * g.freq(k2)), d2);
            c[idx(g, k1, k2)] = sp.c[idx(g, k1, k2)] * w1 * w2;
        }
    }
    std::vector<double> s(g.size());
    Dft::get(g.n).inverse(c.data(), s.data());
    for (double v : s)
        if (!std::isfinite(v)) throw NonFiniteField("derivative: non-finite result");
    return Field(g, std::move(s));
}

double mean(const Field& f) {
    // fixed row-major summation so reruns are bit-identical
    double acc = 0.0;
    for (double v : f.samples()) acc += v;
    return acc / f.grid().size();
}

Field mean_project(const Field& f) {
    const double m = mean(f);
    std::vector<double> s = f.samples();
    for (double& v : s) v -= m;
    return Field(f.grid(), std::move(s));
}

double sup_abs(const Field& f) {
    double m = 0.0;
    for (double v : f.samples()) m = std::max(m, std::abs(v));
    return m;
}

Field scale_add(const Field& a, double ca, const Field& b, double cb) {
    std::vector<double> s(a.grid().size());
    for (size_t k = 0; k < s.size(); ++k) s[k] = ca * a[k] + cb * b[k];
    return Field(a.grid(), std::move(s));
}

Field pointwise(const Field& a, const Field& b, double (*op)(double, double)) {
    std::vector<double> s(a.grid().size());
    for (size_t k = 0; k < s.size(); ++k) s[k] = op(a[k], b[k]);
    return Field(a.grid(), std::move(s));
}

PhasePair phases(const GridSpec& g, const Vec2& x) {
    PhasePair ph;
    ph.e1.resize(g.n);
    ph.e2.resize(g.n);
    for (int k = 0; k < g.n; ++k) {
        const double kk = g.freq(k);
        ph.e1[k] = std::polar(1.0, two_pi * kk * x[0]);
        ph.e2[k] = std::polar(1.0, two_pi * kk * x[1]);
    }
    return ph;
}

double eval_offgrid(const Spectrum& sp, const PhasePair& ph) {
    const int n = sp.grid.n;
    std::complex<double> acc(0.0, 0.0);
    for (int k1 = 0; k1 < n; ++k1) {
        std::complex<double> row(0.0, 0.0);
        const std::complex<double>* c = sp.c.data() + size_t(k1) * n;
        for (int k2 = 0; k2 < n; ++k2) row += c[k2] * ph.e2[k2];
        acc += row * ph.e1[k1];
    }
    return acc.real();
}

double eval_offgrid(const Field& f, const Vec2& x) {
    return eval_offgrid(f.spectrum(), phases(f.grid(), x));
}

double eval_offgrid_deriv(const Spectrum& sp, const PhasePair& ph, int d1, int d2) {
    const int n = sp.grid.n;
    auto factor = [](double freq, int d) {
        std::complex<double> v(1.0, 0.0);
        const std::complex<double> ik(0.0, two_pi * freq);
        for (int m = 0; m < d; ++m) v *= ik;
        return v;
    };
    // weighted inner phases, so the contraction shape matches eval_offgrid
    std::vector<std::complex<double>> e2(n);
    for (int k = 0; k < n; ++k) e2[k] = factor(sp.grid.freq(k), d2) * ph.e2[k];
    std::complex<double> acc(0.0, 0.0);
    for (int k1 = 0; k1 < n; ++k1) {
        std::complex<double> row(0.0, 0.0);
        const std::complex<double>* c = sp.c.data() + size_t(k1) * n;
        for (int k2 = 0; k2 < n; ++k2) row += c[k2] * e2[k2];
        acc += row * (factor(sp.grid.freq(k1), d1) * ph.e1[k1]);
    }
    return acc.real();
}

double eval_bicubic(const Field& f, const Vec2& x) {
    const int n = f.n();
    auto wrap = [n](int i) { return ((i % n) + n) % n; };
    auto catmull = [](double pm1, double p0, double p1, double p2, double t) {
        return p0 + 0.5 * t * (p1 - pm1 +
               t * (2.0 * pm1 - 5.0 * p0 + 4.0 * p1 - p2 +
               t * (3.0 * (p0 - p1) + p2 - pm1)));
    };
    const double gx = x[0] * n, gy = x[1] * n;
    const int i0 = int(std::floor(gx)), j0 = int(std::floor(gy));
    const double tx = gx - i0, ty = gy - j0;
    double col[4];
    for (int a = -1; a <= 2; ++a) {
        const int i = wrap(i0 + a);
        col[a + 1] = catmull(f.sample(i, wrap(j0 - 1)), f.sample(i, wrap(j0)),
                             f.sample(i, wrap(j0 + 1)), f.sample(i, wrap(j0 + 2)), ty);
    }
    return catmull(col[0], col[1], col[2], col[3], tx);
}

PeriodicMap compose(const PeriodicMap& outer, const PeriodicMap& inner) {
    const GridSpec g = inner.grid();
    if (!(outer.grid() == g)) throw std::invalid_argument("compose: grid mismatch");
    const Spectrum& o1 = outer.w1.spectrum();
    const Spectrum& o2 = outer.w2.spectrum();
    std::vector<double> w1(g.size()), w2(g.size());
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) {
            const Vec2 y = inner.at(i, j);
            const PhasePair ph = phases(g, y);
            // (outer o inner)(x) - x = (y - x) + w_outer(y)
            w1[idx(g, i, j)] = inner.w1.sample(i, j) + eval_offgrid(o1, ph);
            w2[idx(g, i, j)] = inner.w2.sample(i, j) + eval_offgrid(o2, ph);
        }
    return PeriodicMap(Field(g, std::move(w1)), Field(g, std::move(w2)));
}

MatrixField jacobian(const PeriodicMap& map) {
    const GridSpec g = map.grid();
    MatrixField J(g);
    J.m11 = derivative(map.w1, 1, 0);
    J.m12 = derivative(map.w1, 0, 1);
    J.m21 = derivative(map.w2, 1, 0);
    J.m22 = derivative(map.w2, 0, 1);
    std::vector<double> a = J.m11.samples(), d = J.m22.samples();
    for (double& v : a) v += 1.0;
    for (double& v : d) v += 1.0;
    J.m11 = Field(g, std::move(a));
    J.m22 = Field(g, std::move(d));
    return J;
}

Field det_jacobian(const PeriodicMap& map) {
    const MatrixField J = jacobian(map);
    const GridSpec g = map.grid();
    std::vector<double> s(g.size());
    for (size_t k = 0; k < s.size(); ++k)
        s[k] = J.m11[k] * J.m22[k] - J.m12[k] * J.m21[k];
    return Field(g, std::move(s));
}

Field divergence(const VectorField& F) {
    return scale_add(derivative(F.x1, 1, 0), 1.0, derivative(F.x2, 0, 1), 1.0);
}

double lambda_min_sym(const Mat2& m) {
    const double mid = 0.5 * (m(0, 0) + m(1, 1));
    const double dd = 0.5 * (m(0, 0) - m(1, 1));
    const double off = 0.5 * (m(0, 1) + m(1, 0));
    return mid - std::sqrt(dd * dd + off * off);
}

Field displacement_norm(const PeriodicMap& map) {
    const GridSpec g = map.grid();
    std::vector<double> s(g.size());
    for (size_t k = 0; k < s.size(); ++k) s[k] = std::hypot(map.w1[k], map.w2[k]);
    return Field(g, std::move(s));
}

PeriodicMap invert_map(const PeriodicMap& map, double tol, int max_iter,
                       const PeriodicMap* guess) {
    const GridSpec g = map.grid();
    const Spectrum& w1 = map.w1.spectrum();
    const Spectrum& w2 = map.w2.spectrum();
    // displacement Jacobian entries, evaluated off-grid inside the Newton loop
    const Field j11 = derivative(map.w1, 1, 0);
    const Field j12 = derivative(map.w1, 0, 1);
    const Field j21 = derivative(map.w2, 1, 0);
    const Field j22 = derivative(map.w2, 0, 1);
    const Spectrum& d11 = j11.spectrum();
    const Spectrum& d12 = j12.spectrum();
    const Spectrum& d21 = j21.spectrum();
    const Spectrum& d22 = j22.spectrum();

    std::vector<double> v1(g.size()), v2(g.size());
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.n; ++j) {
            const Vec2 x = g.node(i, j);
            // initial guess: supplied warm start, else y = x - w(x)
            Vec2 y = guess != nullptr
                         ? Vec2(x[0] + guess->w1.sample(i, j), x[1] + guess->w2.sample(i, j))
                         : Vec2(x - Vec2(map.w1.sample(i, j), map.w2.sample(i, j)));
            Vec2 r;
            double rn = 0.0;
            auto residual = [&](const Vec2& yy) {
                const PhasePair ph = phases(g, yy);
                return Vec2(yy[0] + eval_offgrid(w1, ph) - x[0],
                            yy[1] + eval_offgrid(w2, ph) - x[1]);
            };
            r = residual(y);
            rn = r.lpNorm<Eigen::Infinity>();
            int it = 0;
            while (rn > tol) {
                if (++it > max_iter)
                    throw MapSolveFailed("invert_map: no convergence at node (" +
                                         std::to_string(i) + "," + std::to_string(j) +
                                         "), residual " + std::to_string(rn));
                const PhasePair ph = phases(g, y);
                Mat2 J;
                J << 1.0 + eval_offgrid(d11, ph), eval_offgrid(d12, ph),
                     eval_offgrid(d21, ph), 1.0 + eval_offgrid(d22, ph);
                const double det = J.determinant();
                if (std::abs(det) < 1e-14)
                    throw MapSolveFailed("invert_map: singular Jacobian at node (" +
                                         std::to_string(i) + "," + std::to_string(j) + ")");
                Vec2 step = -J.inverse() * r;
                // damped update: halve until the residual decreases
                double lam = 1.0;
                Vec2 yn;
                Vec2 rnew;
                double rnn;
                for (int h = 0;; ++h) {
                    yn = y + lam * step;
                    rnew = residual(yn);
                    rnn = rnew.lpNorm<Eigen::Infinity>();
                    if (rnn < rn || h >= 8) break;
                    lam *= 0.5;
                }
                if (rnn >= rn)
                    throw MapSolveFailed("invert_map: stagnation at node (" +
                                         std::to_string(i) + "," + std::to_string(j) + ")");
                y = yn;
                r = rnew;
                rn = rnn;
            }
            v1[idx(g, i, j)] = y[0] - x[0];
            v2[idx(g, i, j)] = y[1] - x[1];
        }
    return PeriodicMap(Field(g, std::move(v1)), Field(g, std::move(v2)));
}

} // namespace sgt
