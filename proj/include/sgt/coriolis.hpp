#pragma once

#include "sgt/field.hpp"

namespace sgt {

// Real trigonometric polynomial c0 + sum_m [a_m cos(2 pi k_m.x) + b_m sin(2 pi k_m.x)].
struct TrigPoly {
    struct Mode {
        int k1 = 0, k2 = 0;
        double cos_coef = 0.0, sin_coef = 0.0;
    };
    double c0 = 0.0;
    std::vector<Mode> modes;

    double eval(const Vec2& x) const;
    int max_mode() const; // max over modes of max(|k1|,|k2|)
    Field sample(GridSpec g) const;
};

// The rotation-rate coefficient f > 0 and the derived fields the scheme needs.
// All derivatives are spectral from the grid samples so that every field lives
// in one consistent discrete calculus.
struct CoriolisContext {
    Field f;          // f
    Field f_inv;      // 1/f
    Field f_inv_sq;   // 1/f^2
    VectorField grad_f;
    VectorField grad_f_inv;
    VectorField grad_f_inv_sq;
    double f_min = 0.0;

    static CoriolisContext build(const Field& f);
    static CoriolisContext build(GridSpec g, const TrigPoly& spec);
};

} // namespace sgt
