// Geodesic shooting: EPDiff integration from an initial velocity, the
// deformation flow along the stored trajectory, image warping, the Jacobian
// determinant diagnostic, and the reverse-mode adjoints of all of these.
#pragma once

#include <string>
#include <vector>

#include "mgaug/differential.hpp"
#include "mgaug/field.hpp"
#include "mgaug/interpolation.hpp"
#include "mgaug/spectral.hpp"

namespace mgaug {

struct ShootingConfig {
    int num_steps = 10;
    double alpha = 3.0;

    double dt() const { return 1.0 / num_steps; }
    void validate() const {
        if (num_steps < 1) throw InputError("shooting needs at least one time step");
        if (!(alpha > 0.0)) throw InputError("alpha must be positive");
    }
};

/// phi(x) stored as absolute index coordinates per voxel.
struct DeformationMap {
    VectorField map;

    static DeformationMap identity(const Grid& grid) { return {identity_positions(grid)}; }
    const Grid& grid() const { return map.grid(); }
};

struct VelocityTrajectory {
    std::vector<VectorField> v;  // num_steps + 1 fields, v[0] is the initial velocity
    double dt = 0.0;

    int num_steps() const { return static_cast<int>(v.size()) - 1; }
    const Grid& grid() const { return v.front().grid(); }
    /// Largest displacement any single Euler step of the flow can produce.
    double max_step_displacement() const {
        double best = 0.0;
        for (std::size_t k = 0; k + 1 < v.size(); ++k) best = std::max(best, v[k].max_magnitude());
        return best * dt;
    }
};

namespace detail {

// Periodic central differences of every component: dv[i * d + j] = D_j v_i.
inline std::vector<std::vector<double>> periodic_jacobian(const VectorField& v) {
    const int d = v.axes();
    std::vector<std::vector<double>> dv(static_cast<std::size_t>(d * d), std::vector<double>(v.voxels()));
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) periodic_derivative(v.grid(), v.component(i), j, dv[static_cast<std::size_t>(i * d + j)]);
    return dv;
}

}  // namespace detail

/// -K[(Dv)^T m + Dm v + m div v] with m = L v.
///
/// The last two terms are evaluated together as div(m v^T), with periodic
/// central differences matching the periodic metric. In this form the
/// semi-discrete flow conserves (Lv, v) exactly.
inline VectorField epdiff_rhs(const VectorField& v, const SpectralOperator& op) {
    require_same_grid(v.grid(), op.grid(), "epdiff_rhs");
    const Grid& grid = v.grid();
    const int d = v.axes();
    const std::size_t n = v.voxels();
    const VectorField m = apply_L(v, op);
    const auto dv = detail::periodic_jacobian(v);
    VectorField bracket(grid);
    std::vector<double> flux(n);
    std::vector<double> dflux(n);
    for (int i = 0; i < d; ++i) {
        auto b = bracket.component(i);
        for (int j = 0; j < d; ++j) {
            const auto& dvj_di = dv[static_cast<std::size_t>(j * d + i)];
            for (std::size_t x = 0; x < n; ++x) b[x] += dvj_di[x] * m.at(j, x);
        }
        for (int j = 0; j < d; ++j) {
            for (std::size_t x = 0; x < n; ++x) flux[x] = m.at(i, x) * v.at(j, x);
            periodic_derivative(grid, flux, j, dflux);
            for (std::size_t x = 0; x < n; ++x) b[x] += dflux[x];
        }
    }
    VectorField out = apply_K(bracket, op);
    out *= -1.0;
    return out;
}

/// Vector-Jacobian product of `epdiff_rhs` at `v`: returns (d rhs / d v)^T g.
inline VectorField epdiff_rhs_vjp(const VectorField& v, const VectorField& g, const SpectralOperator& op) {
    const Grid& grid = v.grid();
    const int d = v.axes();
    const std::size_t n = v.voxels();
    const VectorField m = apply_L(v, op);
    const auto dv = detail::periodic_jacobian(v);
    VectorField h = apply_K(g, op);
    h *= -1.0;

    VectorField gm(grid);  // gradient with respect to m
    VectorField gv(grid);  // direct gradient with respect to v
    std::vector<double> buf(n);
    std::vector<double> dbuf(n);
    for (int j = 0; j < d; ++j) {
        // (D_i v_j) m_j, with respect to m_j and v_j.
        for (int i = 0; i < d; ++i) {
            const auto& dvj_di = dv[static_cast<std::size_t>(j * d + i)];
            for (std::size_t x = 0; x < n; ++x) {
                gm.at(j, x) += h.at(i, x) * dvj_di[x];
                buf[x] = h.at(i, x) * m.at(j, x);
            }
            // D^T = -D for periodic central differences.
            periodic_derivative(grid, buf, i, dbuf);
            for (std::size_t x = 0; x < n; ++x) gv.at(j, x) -= dbuf[x];
        }
    }
    // D_j(m_i v_j): with q_ij = D_j^T h_i, gradient q_ij v_j to m_i and q_ij m_i to v_j.
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            periodic_derivative(grid, h.component(i), j, dbuf);
            for (std::size_t x = 0; x < n; ++x) {
                const double q = -dbuf[x];
                gm.at(i, x) += q * v.at(j, x);
                gv.at(j, x) += q * m.at(i, x);
            }
        }
    }
    gv += apply_L(gm, op);
    return gv;
}

/// Forward-Euler integration of EPDiff over the unit interval.
inline VelocityTrajectory shoot(const VectorField& v0, const SpectralOperator& op, int num_steps) {
    if (num_steps < 1) throw InputError("shooting needs at least one time step");
    if (!v0.all_finite()) throw DivergenceError("shoot: initial velocity is not finite");
    VelocityTrajectory traj;
    traj.dt = 1.0 / num_steps;
    traj.v.reserve(static_cast<std::size_t>(num_steps) + 1);
    traj.v.push_back(v0);
    for (int k = 0; k < num_steps; ++k) {
        VectorField next = traj.v.back();
        next.axpy(traj.dt, epdiff_rhs(traj.v.back(), op));
        if (!next.all_finite()) throw DivergenceError("shoot: non-finite velocity at step " + std::to_string(k + 1));
        traj.v.push_back(std::move(next));
    }
    return traj;
}

inline VelocityTrajectory shoot(const VectorField& v0, const ShootingConfig& cfg) {
    cfg.validate();
    return shoot(v0, SpectralOperator(v0.grid(), cfg.alpha), cfg.num_steps);
}

/// Gradient with respect to v0 given gradients with respect to each stored
/// trajectory field (`dv[k]` for k = 0..num_steps; missing entries are zero).
inline VectorField shoot_vjp(const VelocityTrajectory& traj, const std::vector<VectorField>& dv,
                             const SpectralOperator& op) {
    const int steps = traj.num_steps();
    VectorField adj = static_cast<int>(dv.size()) > steps ? dv[steps] : VectorField(traj.grid());
    for (int k = steps - 1; k >= 0; --k) {
        VectorField prev = adj;
        prev.axpy(traj.dt, epdiff_rhs_vjp(traj.v[k], adj, op));
        if (static_cast<int>(dv.size()) > k) prev += dv[k];
        adj = std::move(prev);
    }
    return adj;
}

/// Positions phi_k for k = 0..num_steps, kept for the adjoint pass.
struct FlowHistory {
    std::vector<VectorField> positions;
};

/// phi_{k+1}(x) = phi_k(x) + dt * v_k(phi_k(x)), starting from the identity.
inline DeformationMap integrate_flow(const VelocityTrajectory& traj, FlowHistory* history = nullptr) {
    const Grid& grid = traj.grid();
    const int d = grid.axes();
    VectorField phi = identity_positions(grid);
    if (history) {
        history->positions.clear();
        history->positions.push_back(phi);
    }
    std::array<double, kMaxAxes> p{};
    for (int k = 0; k < traj.num_steps(); ++k) {
        const VectorField& v = traj.v[k];
        VectorField next = phi;
        for (std::size_t x = 0; x < grid.size(); ++x) {
            for (int a = 0; a < d; ++a) p[a] = phi.at(a, x);
            const auto s = make_stencil(grid, {p.data(), static_cast<std::size_t>(d)});
            for (int a = 0; a < d; ++a) next.at(a, x) += traj.dt * sample(v.component(a), s);
        }
        phi = std::move(next);
        if (history) history->positions.push_back(phi);
    }
    return {std::move(phi)};
}

/// Given d(loss)/d(phi_T), returns d(loss)/d(v_k) for k = 0..num_steps.
inline std::vector<VectorField> integrate_flow_vjp(const VelocityTrajectory& traj, const FlowHistory& history,
                                                   VectorField dphi) {
    const Grid& grid = traj.grid();
    const int d = grid.axes();
    const int steps = traj.num_steps();
    std::vector<VectorField> dv(static_cast<std::size_t>(steps) + 1, VectorField(grid));
    std::array<double, kMaxAxes> p{};
    for (int k = steps - 1; k >= 0; --k) {
        const VectorField& phi = history.positions[static_cast<std::size_t>(k)];
        const VectorField& v = traj.v[static_cast<std::size_t>(k)];
        VectorField prev = dphi;
        for (std::size_t x = 0; x < grid.size(); ++x) {
            for (int a = 0; a < d; ++a) p[a] = phi.at(a, x);
            const auto s = make_stencil(grid, {p.data(), static_cast<std::size_t>(d)});
            for (int a = 0; a < d; ++a) {
                const double g = traj.dt * dphi.at(a, x);
                if (g == 0.0) continue;
                scatter(dv[static_cast<std::size_t>(k)].component(a), s, g);
                for (int b = 0; b < d; ++b) prev.at(b, x) += g * sample_derivative(v.component(a), s, b);
            }
        }
        dphi = std::move(prev);
    }
    return dv;
}

/// (I o phi)(x) = I(phi(x)).
inline ScalarField warp_image(const ScalarField& image, const DeformationMap& phi) {
    return interpolate(image, phi.map);
}

/// d(loss)/d(phi) given d(loss)/d(warped image).
inline VectorField warp_image_vjp(const ScalarField& image, const DeformationMap& phi, const ScalarField& dout) {
    const Grid& grid = phi.grid();
    const int d = grid.axes();
    VectorField dphi(grid);
    std::array<double, kMaxAxes> p{};
    for (std::size_t x = 0; x < grid.size(); ++x) {
        if (dout[x] == 0.0) continue;
        for (int a = 0; a < d; ++a) p[a] = phi.map.at(a, x);
        const auto s = make_stencil(image.grid(), {p.data(), static_cast<std::size_t>(d)});
        for (int a = 0; a < d; ++a) dphi.at(a, x) = dout[x] * sample_derivative(image.values(), s, a);
    }
    return dphi;
}

/// Per-voxel determinant of the finite-difference Jacobian of phi, in index units.
inline ScalarField det_jacobian(const DeformationMap& phi) {
    const Grid unit(phi.grid().dims());
    const VectorField map(unit, std::vector<double>(phi.map.values().begin(), phi.map.values().end()));
    const MatrixField J = jacobian(map);
    ScalarField det(phi.grid());
    for (std::size_t x = 0; x < unit.size(); ++x) {
        if (unit.axes() == 2) {
            det[x] = J.at(0, 0, x) * J.at(1, 1, x) - J.at(0, 1, x) * J.at(1, 0, x);
        } else {
            const auto m = [&](int i, int j) { return J.at(i, j, x); };
            det[x] = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
                     m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
                     m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
        }
    }
    return det;
}

/// Everything needed to warp a template by the geodesic from v0 and to
/// backpropagate a loss on the warped image to v0.
struct GeodesicWarp {
    VelocityTrajectory traj;
    FlowHistory history;
    DeformationMap phi;
    ScalarField warped;

    GeodesicWarp(const ScalarField& image, const VectorField& v0, const SpectralOperator& op, int num_steps)
        : traj(shoot(v0, op, num_steps)) {
        phi = integrate_flow(traj, &history);
        warped = warp_image(image, phi);
    }

    /// d(loss)/d(v0) given d(loss)/d(warped).
    VectorField backward(const ScalarField& image, const ScalarField& dwarped, const SpectralOperator& op) const {
        VectorField dphi = warp_image_vjp(image, phi, dwarped);
        auto dv = integrate_flow_vjp(traj, history, std::move(dphi));
        return shoot_vjp(traj, dv, op);
    }
};

}  // namespace mgaug
