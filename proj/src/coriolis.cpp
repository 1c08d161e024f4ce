#include "sgt/coriolis.hpp"

#include <cmath>
#include <numbers>

namespace sgt {

double TrigPoly::eval(const Vec2& x) const {
    double v = c0;
    for (const Mode& m : modes) {
        const double a = 2.0 * std::numbers::pi * (m.k1 * x[0] + m.k2 * x[1]);
        v += m.cos_coef * std::cos(a) + m.sin_coef * std::sin(a);
    }
    return v;
}

int TrigPoly::max_mode() const {
    int k = 0;
    for (const Mode& m : modes) k = std::max({k, std::abs(m.k1), std::abs(m.k2)});
    return k;
}

Field TrigPoly::sample(GridSpec g) const {
    return Field::from_function(g, [this](const Vec2& x) { return eval(x); });
}

CoriolisContext CoriolisContext::build(const Field& f) {
    const GridSpec g = f.grid();
    double fmin = f[0];
    for (double v : f.samples()) fmin = std::min(fmin, v);
    if (fmin <= 0.0)
        throw std::invalid_argument("CoriolisContext: f must be positive on the grid, min = " +
                                    std::to_string(fmin));
    std::vector<double> inv(g.size()), inv2(g.size());
    for (int k = 0; k < g.size(); ++k) {
        inv[k] = 1.0 / f[k];
        inv2[k] = inv[k] * inv[k];
    }
    CoriolisContext ctx{
        f,
        Field(g, std::move(inv)),
        Field(g, std::move(inv2)),
        VectorField(g),
        VectorField(g),
        VectorField(g),
        fmin,
    };
    ctx.grad_f = VectorField(derivative(ctx.f, 1, 0), derivative(ctx.f, 0, 1));
    ctx.grad_f_inv = VectorField(derivative(ctx.f_inv, 1, 0), derivative(ctx.f_inv, 0, 1));
    ctx.grad_f_inv_sq = VectorField(derivative(ctx.f_inv_sq, 1, 0), derivative(ctx.f_inv_sq, 0, 1));
    return ctx;
}

CoriolisContext CoriolisContext::build(GridSpec g, const TrigPoly& spec) {
    return build(spec.sample(g));
}

} // namespace sgt
