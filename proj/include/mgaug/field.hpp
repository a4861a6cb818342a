// Regular-grid scalar and vector fields.
//
// Values are stored in row-major order with the last axis varying fastest.
// Vector fields store one full scalar plane per spatial axis (component-major),
// so component `a` of voxel `i` lives at `a * voxel_count + i`.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgaug {

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr int kMaxAxes = 3;

class Grid {
public:
    Grid() = default;

    explicit Grid(std::vector<int> dims, std::vector<double> spacing = {})
        : dims_(std::move(dims)), spacing_(std::move(spacing)) {
        if (dims_.size() != 2 && dims_.size() != 3) {
            throw DimensionError("grid must have 2 or 3 axes, got " + std::to_string(dims_.size()));
        }
        if (spacing_.empty()) spacing_.assign(dims_.size(), 1.0);
        if (spacing_.size() != dims_.size()) {
            throw DimensionError("spacing count does not match axis count");
        }
        for (std::size_t a = 0; a < dims_.size(); ++a) {
            if (dims_[a] < 4) throw DimensionError("grid extent below 4 on axis " + std::to_string(a));
            if (!(spacing_[a] > 0.0)) throw DimensionError("grid spacing must be positive");
        }
        size_ = 1;
        for (int d : dims_) size_ *= static_cast<std::size_t>(d);
        strides_.assign(dims_.size(), 1);
        for (int a = static_cast<int>(dims_.size()) - 2; a >= 0; --a) {
            strides_[a] = strides_[a + 1] * static_cast<std::size_t>(dims_[a + 1]);
        }
    }

    int axes() const { return static_cast<int>(dims_.size()); }
    int dim(int axis) const { return dims_[axis]; }
    double spacing(int axis) const { return spacing_[axis]; }
    std::size_t stride(int axis) const { return strides_[axis]; }
    const std::vector<int>& dims() const { return dims_; }
    const std::vector<double>& spacings() const { return spacing_; }
    std::size_t size() const { return size_; }

    double voxel_volume() const {
        return std::accumulate(spacing_.begin(), spacing_.end(), 1.0, std::multiplies<>());
    }
    double min_spacing() const { return *std::min_element(spacing_.begin(), spacing_.end()); }

    /// Multi-index of a linear voxel index.
    std::array<int, kMaxAxes> coords(std::size_t index) const {
        std::array<int, kMaxAxes> c{0, 0, 0};
        for (int a = 0; a < axes(); ++a) {
            c[a] = static_cast<int>(index / strides_[a]);
            index %= strides_[a];
        }
        return c;
    }

    std::size_t index(const std::array<int, kMaxAxes>& c) const {
        std::size_t i = 0;
        for (int a = 0; a < axes(); ++a) i += static_cast<std::size_t>(c[a]) * strides_[a];
        return i;
    }

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.dims_ == b.dims_ && a.spacing_ == b.spacing_;
    }

    std::string describe() const {
        std::string s;
        for (std::size_t a = 0; a < dims_.size(); ++a) {
            if (a) s += "x";
            s += std::to_string(dims_[a]);
        }
        return s;
    }

private:
    std::vector<int> dims_;
    std::vector<double> spacing_;
    std::vector<std::size_t> strides_;
    std::size_t size_ = 0;
};

inline void require_same_grid(const Grid& a, const Grid& b, const char* where) {
    if (!(a == b)) {
        throw DimensionError(std::string(where) + ": grid mismatch (" + a.describe() + " vs " + b.describe() + ")");
    }
}

class ScalarField {
public:
    ScalarField() = default;
    explicit ScalarField(Grid grid, double fill = 0.0) : grid_(std::move(grid)), values_(grid_.size(), fill) {}
    ScalarField(Grid grid, std::vector<double> values) : grid_(std::move(grid)), values_(std::move(values)) {
        if (values_.size() != grid_.size()) throw DimensionError("scalar field value count does not match grid");
    }

    const Grid& grid() const { return grid_; }
    std::size_t size() const { return values_.size(); }
    std::span<double> values() & { return values_; }
    std::span<const double> values() const& { return values_; }
    std::vector<double> values() && { return std::move(values_); }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
    }
    double min() const { return *std::min_element(values_.begin(), values_.end()); }
    double max() const { return *std::max_element(values_.begin(), values_.end()); }

private:
    Grid grid_;
    std::vector<double> values_;
};

class VectorField {
public:
    VectorField() = default;
    explicit VectorField(Grid grid, double fill = 0.0)
        : grid_(std::move(grid)), values_(grid_.size() * static_cast<std::size_t>(grid_.axes()), fill) {}
    VectorField(Grid grid, std::vector<double> values) : grid_(std::move(grid)), values_(std::move(values)) {
        if (values_.size() != grid_.size() * static_cast<std::size_t>(grid_.axes())) {
            throw DimensionError("vector field component count does not match grid");
        }
    }

    const Grid& grid() const { return grid_; }
    int axes() const { return grid_.axes(); }
    std::size_t voxels() const { return grid_.size(); }
    std::size_t size() const { return values_.size(); }

    std::span<double> component(int a) { return {values_.data() + a * grid_.size(), grid_.size()}; }
    std::span<const double> component(int a) const { return {values_.data() + a * grid_.size(), grid_.size()}; }
    double& at(int a, std::size_t i) { return values_[a * grid_.size() + i]; }
    double at(int a, std::size_t i) const { return values_[a * grid_.size() + i]; }

    std::span<double> values() & { return values_; }
    std::span<const double> values() const& { return values_; }
    std::vector<double> values() && { return std::move(values_); }

    bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
    }

    /// Largest per-voxel Euclidean magnitude.
    double max_magnitude() const {
        double best = 0.0;
        for (std::size_t i = 0; i < voxels(); ++i) {
            double s = 0.0;
            for (int a = 0; a < axes(); ++a) s += at(a, i) * at(a, i);
            best = std::max(best, s);
        }
        return std::sqrt(best);
    }

    VectorField& operator+=(const VectorField& o) {
        require_same_grid(grid_, o.grid_, "VectorField +=");
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
        return *this;
    }
    VectorField& operator*=(double s) {
        for (double& x : values_) x *= s;
        return *this;
    }
    /// this += s * o
    void axpy(double s, const VectorField& o) {
        require_same_grid(grid_, o.grid_, "VectorField axpy");
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += s * o.values_[i];
    }

private:
    Grid grid_;
    std::vector<double> values_;
};

inline VectorField operator+(VectorField a, const VectorField& b) { return a += b; }
inline VectorField operator*(double s, VectorField a) { return a *= s; }

/// Grid inner product scaled by voxel volume.
inline double inner(const VectorField& a, const VectorField& b) {
    require_same_grid(a.grid(), b.grid(), "inner");
    double s = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
    return s * a.grid().voxel_volume();
}

inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

/// Field whose value at each voxel is its own index coordinate.
inline VectorField identity_positions(const Grid& grid) {
    VectorField p(grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        auto c = grid.coords(i);
        for (int a = 0; a < grid.axes(); ++a) p.at(a, i) = c[a];
    }
    return p;
}

}  // namespace mgaug
