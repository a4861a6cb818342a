// Finite-difference derivatives: central in the interior, one-sided at the
// two boundary planes of each axis.
#pragma once

#include <span>

#include "mgaug/field.hpp"

namespace mgaug {

/// out = d(in)/dx_axis, divided by the axis spacing.
inline void partial_derivative(const Grid& grid, std::span<const double> in, int axis, std::span<double> out) {
    const std::size_t stride = grid.stride(axis);
    const int n = grid.dim(axis);
    const double inv_h = 1.0 / grid.spacing(axis);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const int c = static_cast<int>((i / stride) % static_cast<std::size_t>(n));
        if (c == 0) {
            out[i] = (in[i + stride] - in[i]) * inv_h;
        } else if (c == n - 1) {
            out[i] = (in[i] - in[i - stride]) * inv_h;
        } else {
            out[i] = 0.5 * (in[i + stride] - in[i - stride]) * inv_h;
        }
    }
}

/// Adds the transpose of `partial_derivative` applied to `g` into `acc`.
inline void partial_derivative_adjoint(const Grid& grid, std::span<const double> g, int axis, std::span<double> acc) {
    const std::size_t stride = grid.stride(axis);
    const int n = grid.dim(axis);
    const double inv_h = 1.0 / grid.spacing(axis);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const int c = static_cast<int>((i / stride) % static_cast<std::size_t>(n));
        const double w = g[i] * inv_h;
        if (c == 0) {
            acc[i + stride] += w;
            acc[i] -= w;
        } else if (c == n - 1) {
            acc[i] += w;
            acc[i - stride] -= w;
        } else {
            acc[i + stride] += 0.5 * w;
            acc[i - stride] -= 0.5 * w;
        }
    }
}

/// Central difference with periodic wrap-around, divided by the axis spacing.
/// Its transpose is its negation.
inline void periodic_derivative(const Grid& grid, std::span<const double> in, int axis, std::span<double> out) {
    const std::size_t stride = grid.stride(axis);
    const int n = grid.dim(axis);
    const std::size_t wrap = stride * static_cast<std::size_t>(n);
    const double half_inv_h = 0.5 / grid.spacing(axis);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const int c = static_cast<int>((i / stride) % static_cast<std::size_t>(n));
        const std::size_t up = c == n - 1 ? i + stride - wrap : i + stride;
        const std::size_t down = c == 0 ? i + wrap - stride : i - stride;
        out[i] = (in[up] - in[down]) * half_inv_h;
    }
}

/// Per-voxel d x d matrices; entry (i, j) = dv_i/dx_j is the plane at (i*d + j).
class MatrixField {
public:
    explicit MatrixField(Grid grid)
        : grid_(std::move(grid)), values_(grid_.size() * static_cast<std::size_t>(grid_.axes() * grid_.axes()), 0.0) {}

    const Grid& grid() const { return grid_; }
    int axes() const { return grid_.axes(); }
    std::span<double> entry(int i, int j) {
        return {values_.data() + static_cast<std::size_t>(i * grid_.axes() + j) * grid_.size(), grid_.size()};
    }
    std::span<const double> entry(int i, int j) const {
        return {values_.data() + static_cast<std::size_t>(i * grid_.axes() + j) * grid_.size(), grid_.size()};
    }
    double at(int i, int j, std::size_t voxel) const { return entry(i, j)[voxel]; }

private:
    Grid grid_;
    std::vector<double> values_;
};

inline MatrixField jacobian(const VectorField& v) {
    MatrixField J(v.grid());
    for (int i = 0; i < v.axes(); ++i) {
        for (int j = 0; j < v.axes(); ++j) partial_derivative(v.grid(), v.component(i), j, J.entry(i, j));
    }
    return J;
}

inline ScalarField divergence(const VectorField& v) {
    ScalarField div(v.grid());
    std::vector<double> tmp(v.voxels());
    for (int a = 0; a < v.axes(); ++a) {
        partial_derivative(v.grid(), v.component(a), a, tmp);
        for (std::size_t i = 0; i < tmp.size(); ++i) div[i] += tmp[i];
    }
    return div;
}

}  // namespace mgaug
