#pragma once

#include <complex>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "sgt/errors.hpp"

namespace sgt {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

// Uniform n-by-n grid on the unit torus, node (i,j) at x = (i/n, j/n).
struct GridSpec {
    int n = 0;

    GridSpec() = default;
    explicit GridSpec(int n_);

    double spacing() const { return 1.0 / n; }
    int size() const { return n * n; }
    // signed wavenumber for coefficient index k in [0,n): n/2 maps to -n/2
    int freq(int k) const { return k <= n / 2 - 1 ? k : k - n; }
    Vec2 node(int i, int j) const { return {double(i) / n, double(j) / n}; }
    bool operator==(const GridSpec& o) const { return n == o.n; }
};

// Discrete Fourier coefficients, 1/n^2-normalized, row-major [k1*n + k2].
// A real field's interpolant is Re sum_k c_k exp(2*pi*i k.x) with the signed
// frequency convention of GridSpec::freq (symmetric trigonometric interpolant).
struct Spectrum {
    GridSpec grid;
    std::vector<std::complex<double>> c;
};

// Z^2-periodic scalar field sampled on a GridSpec. Treat as immutable after
// construction: the spectral cache is filled lazily and is not guarded, so
// parallel readers must call spectrum() once up front.
class PeriodicScalarField {
  public:
    PeriodicScalarField() = default;
    explicit PeriodicScalarField(GridSpec g) : grid_(g), s_(g.size(), 0.0) {}
    PeriodicScalarField(GridSpec g, std::vector<double> samples);

    const GridSpec& grid() const { return grid_; }
    int n() const { return grid_.n; }
    const std::vector<double>& samples() const { return s_; }
    double sample(int i, int j) const { return s_[size_t(i) * grid_.n + j]; }
    double operator[](size_t k) const { return s_[k]; }

    // Builds a field by evaluating fn at every node.
    template <class F>
    static PeriodicScalarField from_function(GridSpec g, F&& fn) {
        std::vector<double> s(g.size());
        for (int i = 0; i < g.n; ++i)
            for (int j = 0; j < g.n; ++j) s[size_t(i) * g.n + j] = fn(g.node(i, j));
        return PeriodicScalarField(g, std::move(s));
    }

    const Spectrum& spectrum() const;

  private:
    GridSpec grid_;
    std::vector<double> s_;
    mutable std::shared_ptr<const Spectrum> spec_;
};

using Field = PeriodicScalarField;

struct VectorField {
    Field x1, x2;
    VectorField() = default;
    explicit VectorField(GridSpec g) : x1(g), x2(g) {}
    VectorField(Field a, Field b) : x1(std::move(a)), x2(std::move(b)) {}
    Vec2 at(int i, int j) const { return {x1.sample(i, j), x2.sample(i, j)}; }
};

struct MatrixField {
    Field m11, m12, m21, m22;
    MatrixField() = default;
    explicit MatrixField(GridSpec g) : m11(g), m12(g), m21(g), m22(g) {}
    MatrixField(Field a, Field b, Field c, Field d)
        : m11(std::move(a)), m12(std::move(b)), m21(std::move(c)), m22(std::move(d)) {}
    Mat2 at(int i, int j) const {
        Mat2 m;
        m << m11.sample(i, j), m12.sample(i, j), m21.sample(i, j), m22.sample(i, j);
        return m;
    }
    static MatrixField from_values(GridSpec g, const std::vector<Mat2>& v);
};

// Map of the torus stored as identity plus periodic displacement,
// map(x) = x + w(x); this representation makes map(x+h) = map(x)+h structural
// for integer h.
struct PeriodicMap {
    Field w1, w2;
    PeriodicMap() = default;
    explicit PeriodicMap(GridSpec g) : w1(g), w2(g) {}
    PeriodicMap(Field a, Field b) : w1(std::move(a)), w2(std::move(b)) {}
    static PeriodicMap identity(GridSpec g) { return PeriodicMap(g); }
    const GridSpec& grid() const { return w1.grid(); }
    // image of node (i,j)
    Vec2 at(int i, int j) const {
        return w1.grid().node(i, j) + Vec2(w1.sample(i, j), w2.sample(i, j));
    }
};

// --- spectral calculus -------------------------------------------------------

// Exact derivative of the trigonometric interpolant, multi-index (d1,d2),
// d1+d2 <= 3.
Field derivative(const Field& f, int d1, int d2);

double mean(const Field& f);
Field mean_project(const Field& f);

double sup_abs(const Field& f);
Field scale_add(const Field& a, double ca, const Field& b, double cb); // ca*a + cb*b
Field pointwise(const Field& a, const Field& b, double (*op)(double, double));

// Phase factors exp(2*pi*i k x) for one evaluation point; shared across all
// fields evaluated at that point.
struct PhasePair {
    std::vector<std::complex<double>> e1, e2;
};
PhasePair phases(const GridSpec& g, const Vec2& x);

// Direct Fourier summation of the interpolant at an arbitrary point, O(n^2).
double eval_offgrid(const Spectrum& sp, const PhasePair& ph);
double eval_offgrid(const Field& f, const Vec2& x);

// Derivative of the interpolant at an arbitrary point, multi-index (d1, d2).
// Off grid this is not the same as interpolating the sampled derivative
// field: sampling loses the highest-frequency sine content a derivative
// creates, so consumers that must stay consistent with values evaluated
// through eval_offgrid take their off-grid derivatives here.
double eval_offgrid_deriv(const Spectrum& sp, const PhasePair& ph, int d1, int d2);

// Periodic bicubic (Catmull-Rom) evaluation; fast, lower accuracy. Opt-in
// alternative to the exact Fourier path.
double eval_bicubic(const Field& f, const Vec2& x);

// --- map algebra -------------------------------------------------------------

// (outer o inner)(x), sampled at grid nodes.
PeriodicMap compose(const PeriodicMap& outer, const PeriodicMap& inner);

// Per-node Newton solve of map(y) = x. Requires det(I + Dw) > 0.
PeriodicMap invert_map(const PeriodicMap& map, double tol = 1e-12, int max_iter = 50,
                       const PeriodicMap* guess = nullptr);

MatrixField jacobian(const PeriodicMap& map);   // I + Dw, Dw spectral
Field det_jacobian(const PeriodicMap& map);

// per-node |map(x) - x|, read directly from the displacement
Field displacement_norm(const PeriodicMap& map);

// d1 F1 + d2 F2, spectral
Field divergence(const VectorField& F);

// smaller eigenvalue of the symmetric part of m
double lambda_min_sym(const Mat2& m);

} // namespace sgt
