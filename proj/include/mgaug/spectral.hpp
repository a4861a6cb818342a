// The metric L = -alpha * Laplacian + I and its inverse K, diagonalized by the
// discrete Fourier transform on a periodic grid.
#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "mgaug/field.hpp"

namespace mgaug {

namespace detail {

// Planner calls are not thread-safe in FFTW; execution with the new-array
// interface is.
inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftPlans {
    fftw_plan forward = nullptr;
    fftw_plan backward = nullptr;
    std::size_t real_size = 0;
    std::size_t complex_size = 0;

    explicit FftPlans(const Grid& grid) {
        std::vector<int> n(grid.dims().begin(), grid.dims().end());
        real_size = grid.size();
        complex_size = real_size / static_cast<std::size_t>(n.back()) * static_cast<std::size_t>(n.back() / 2 + 1);
        double* r = fftw_alloc_real(real_size);
        fftw_complex* c = fftw_alloc_complex(complex_size);
        {
            std::lock_guard lock(fftw_planner_mutex());
            forward = fftw_plan_dft_r2c(static_cast<int>(n.size()), n.data(), r, c, FFTW_ESTIMATE);
            backward = fftw_plan_dft_c2r(static_cast<int>(n.size()), n.data(), c, r, FFTW_ESTIMATE);
        }
        fftw_free(r);
        fftw_free(c);
    }
    ~FftPlans() {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(forward);
        fftw_destroy_plan(backward);
    }
    FftPlans(const FftPlans&) = delete;
    FftPlans& operator=(const FftPlans&) = delete;
};

}  // namespace detail

/// Eigenvalue of the negated periodic second-order Laplacian stencil at a
/// multi-index frequency.
inline double laplacian_eigenvalue(const Grid& grid, const std::array<int, kMaxAxes>& freq) {
    double lam = 0.0;
    for (int a = 0; a < grid.axes(); ++a) {
        lam += 2.0 - 2.0 * std::cos(2.0 * std::numbers::pi * freq[a] / grid.dim(a));
    }
    return lam;
}

class SpectralOperator {
public:
    SpectralOperator(Grid grid, double alpha) : grid_(std::move(grid)), alpha_(alpha) {
        if (!(alpha_ > 0.0)) throw InputError("operator alpha must be positive");
        plans_ = std::make_shared<detail::FftPlans>(grid_);
        const std::size_t n = plans_->complex_size;
        l_symbol_.resize(n);
        k_symbol_.resize(n);
        for (std::size_t f = 0; f < n; ++f) {
            l_symbol_[f] = 1.0 + alpha_ * laplacian_eigenvalue(grid_, frequency(f));
            k_symbol_[f] = 1.0 / l_symbol_[f];
        }
    }

    const Grid& grid() const { return grid_; }
    double alpha() const { return alpha_; }

    /// Symbols are laid out in the half-spectrum order of a real-to-complex
    /// transform: all axes full except the last, which keeps dim/2 + 1 bins.
    const std::vector<double>& l_symbol() const { return l_symbol_; }
    const std::vector<double>& k_symbol() const { return k_symbol_; }

    std::array<int, kMaxAxes> frequency(std::size_t f) const {
        std::array<int, kMaxAxes> c{0, 0, 0};
        const int last = grid_.axes() - 1;
        const std::size_t half = static_cast<std::size_t>(grid_.dim(last) / 2 + 1);
        c[last] = static_cast<int>(f % half);
        f /= half;
        for (int a = last - 1; a >= 0; --a) {
            c[a] = static_cast<int>(f % static_cast<std::size_t>(grid_.dim(a)));
            f /= static_cast<std::size_t>(grid_.dim(a));
        }
        return c;
    }

    /// Multiplies each component of `v` by `symbol` in the Fourier basis.
    VectorField filter(const VectorField& v, const std::vector<double>& symbol) const {
        require_same_grid(v.grid(), grid_, "spectral operator");
        VectorField out(grid_);
        const std::size_t n = grid_.size();
        const double scale = 1.0 / static_cast<double>(n);
        double* r = fftw_alloc_real(n);
        fftw_complex* c = fftw_alloc_complex(plans_->complex_size);
        for (int a = 0; a < v.axes(); ++a) {
            auto src = v.component(a);
            std::copy(src.begin(), src.end(), r);
            fftw_execute_dft_r2c(plans_->forward, r, c);
            for (std::size_t f = 0; f < plans_->complex_size; ++f) {
                c[f][0] *= symbol[f] * scale;
                c[f][1] *= symbol[f] * scale;
            }
            fftw_execute_dft_c2r(plans_->backward, c, r);
            auto dst = out.component(a);
            std::copy(r, r + n, dst.begin());
        }
        fftw_free(r);
        fftw_free(c);
        return out;
    }

private:
    Grid grid_;
    double alpha_;
    std::shared_ptr<detail::FftPlans> plans_;
    std::vector<double> l_symbol_;
    std::vector<double> k_symbol_;
};

/// m = L v
inline VectorField apply_L(const VectorField& v, const SpectralOperator& op) { return op.filter(v, op.l_symbol()); }

/// v = K m, the smoothing inverse of L.
inline VectorField apply_K(const VectorField& m, const SpectralOperator& op) { return op.filter(m, op.k_symbol()); }

}  // namespace mgaug
