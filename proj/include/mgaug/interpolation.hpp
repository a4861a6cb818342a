// Bilinear / trilinear sampling with clamp-to-border, plus the two adjoints
// needed for reverse-mode differentiation (with respect to the sampled field
// and with respect to the sample position).
#pragma once

#include <cmath>
#include <span>

#include "mgaug/field.hpp"

namespace mgaug {

/// Corner indices and weights of one interpolation sample.
struct InterpStencil {
    int axes = 0;
    std::array<std::size_t, 8> index{};
    std::array<double, 8> weight{};
    // Per axis: lower/upper corner offset pair for the derivative, and whether
    // the coordinate was clamped (derivative is zero along that axis).
    std::array<double, kMaxAxes> frac{};
    std::array<bool, kMaxAxes> clamped{};

    int corners() const { return 1 << axes; }
};

inline InterpStencil make_stencil(const Grid& grid, std::span<const double> pos) {
    InterpStencil s;
    s.axes = grid.axes();
    std::array<int, kMaxAxes> base{0, 0, 0};
    for (int a = 0; a < s.axes; ++a) {
        double p = pos[a];
        if (std::isnan(p)) throw InputError("interpolation at NaN coordinate");
        const double hi = grid.dim(a) - 1;
        s.clamped[a] = p < 0.0 || p > hi;
        p = std::clamp(p, 0.0, hi);
        int i0 = static_cast<int>(std::floor(p));
        if (i0 > grid.dim(a) - 2) i0 = grid.dim(a) - 2;
        base[a] = i0;
        s.frac[a] = p - i0;
    }
    for (int corner = 0; corner < s.corners(); ++corner) {
        std::size_t idx = 0;
        double w = 1.0;
        for (int a = 0; a < s.axes; ++a) {
            const int bit = (corner >> (s.axes - 1 - a)) & 1;
            idx += static_cast<std::size_t>(base[a] + bit) * grid.stride(a);
            w *= bit ? s.frac[a] : 1.0 - s.frac[a];
        }
        s.index[corner] = idx;
        s.weight[corner] = w;
    }
    return s;
}

inline double sample(std::span<const double> values, const InterpStencil& s) {
    double v = 0.0;
    for (int c = 0; c < s.corners(); ++c) v += s.weight[c] * values[s.index[c]];
    return v;
}

/// d(sample)/d(position_axis). Zero along clamped axes.
inline double sample_derivative(std::span<const double> values, const InterpStencil& s, int axis) {
    if (s.clamped[axis]) return 0.0;
    double d = 0.0;
    for (int c = 0; c < s.corners(); ++c) {
        double w = 1.0;
        for (int a = 0; a < s.axes; ++a) {
            const int bit = (c >> (s.axes - 1 - a)) & 1;
            if (a == axis) {
                w *= bit ? 1.0 : -1.0;
            } else {
                w *= bit ? s.frac[a] : 1.0 - s.frac[a];
            }
        }
        d += w * values[s.index[c]];
    }
    return d;
}

/// acc += g * (weights of s), the adjoint of `sample` with respect to values.
inline void scatter(std::span<double> acc, const InterpStencil& s, double g) {
    for (int c = 0; c < s.corners(); ++c) acc[s.index[c]] += g * s.weight[c];
}

inline double interpolate(const ScalarField& f, std::span<const double> pos) {
    return sample(f.values(), make_stencil(f.grid(), pos));
}

/// Samples `f` at every position of a position field (absolute coordinates).
inline ScalarField interpolate(const ScalarField& f, const VectorField& positions) {
    if (positions.axes() != f.grid().axes()) throw DimensionError("interpolate: axis count mismatch");
    ScalarField out(positions.grid());
    std::array<double, kMaxAxes> p{};
    for (std::size_t i = 0; i < positions.voxels(); ++i) {
        for (int a = 0; a < positions.axes(); ++a) p[a] = positions.at(a, i);
        out[i] = sample(f.values(), make_stencil(f.grid(), {p.data(), static_cast<std::size_t>(positions.axes())}));
    }
    return out;
}

inline VectorField interpolate(const VectorField& f, const VectorField& positions) {
    if (positions.axes() != f.axes()) throw DimensionError("interpolate: axis count mismatch");
    VectorField out(positions.grid());
    std::array<double, kMaxAxes> p{};
    for (std::size_t i = 0; i < positions.voxels(); ++i) {
        for (int a = 0; a < positions.axes(); ++a) p[a] = positions.at(a, i);
        const auto s = make_stencil(f.grid(), {p.data(), static_cast<std::size_t>(positions.axes())});
        for (int a = 0; a < f.axes(); ++a) out.at(a, i) = sample(f.component(a), s);
    }
    return out;
}

}  // namespace mgaug
