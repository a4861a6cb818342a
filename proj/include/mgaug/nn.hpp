// Fully connected networks with SiLU hidden activations. Parameters of one
// network live in a single flat buffer so the optimizer and checkpoints can
// treat them uniformly; Eigen maps give the per-layer matrix views.
// Batches are column-major: one column per sample.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgaug {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

class Mlp {
public:
    struct Cache {
        std::vector<Matrix> inputs;  // input of each layer
        std::vector<Matrix> pre;     // pre-activation of each hidden layer
    };

    Mlp() = default;

    /// sizes = {in, hidden..., out}. Hidden weights are fan-in-scaled uniform,
    /// biases zero, and the final layer is zero so the output starts at 0.
    Mlp(std::vector<int> sizes, std::mt19937_64& rng) : sizes_(std::move(sizes)) {
        if (sizes_.size() < 2) throw std::invalid_argument("network needs at least one layer");
        std::size_t total = 0;
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            w_offset_.push_back(total);
            total += static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1];
            b_offset_.push_back(total);
            total += static_cast<std::size_t>(sizes_[l + 1]);
        }
        params_.assign(total, 0.0);
        for (std::size_t l = 0; l + 2 < sizes_.size(); ++l) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (double& x : weight_span(l)) x = u(rng);
        }
    }

    int layers() const { return static_cast<int>(sizes_.size()) - 1; }
    int input_size() const { return sizes_.front(); }
    int output_size() const { return sizes_.back(); }
    const std::vector<int>& sizes() const { return sizes_; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    std::span<double> weight_span(std::size_t l) {
        return {params_.data() + w_offset_[l], static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1]};
    }
    std::span<double> bias_span(std::size_t l) {
        return {params_.data() + b_offset_[l], static_cast<std::size_t>(sizes_[l + 1])};
    }
    std::size_t weight_offset(std::size_t l) const { return w_offset_[l]; }
    std::size_t bias_offset(std::size_t l) const { return b_offset_[l]; }

    Eigen::Map<const Matrix> weight(std::size_t l) const {
        return {params_.data() + w_offset_[l], sizes_[l + 1], sizes_[l]};
    }
    Eigen::Map<const Vector> bias(std::size_t l) const { return {params_.data() + b_offset_[l], sizes_[l + 1]}; }
    Eigen::Map<Vector> bias(std::size_t l) { return {params_.data() + b_offset_[l], sizes_[l + 1]}; }

    Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
        if (x.rows() != sizes_.front()) throw std::invalid_argument("network input has wrong size");
        if (cache) {
            cache->inputs.clear();
            cache->pre.clear();
        }
        Matrix h = x;
        for (int l = 0; l < layers(); ++l) {
            Matrix z = weight(l) * h;
            z.colwise() += bias(l);
            if (cache) cache->inputs.push_back(std::move(h));
            if (l + 1 == layers()) return z;
            if (cache) cache->pre.push_back(z);
            h = z.unaryExpr([](double v) { return silu(v); });
        }
        return h;
    }

    /// Accumulates parameter gradients into `grad` (same layout as params) and
    /// returns the gradient with respect to the input.
    Matrix backward(const Cache& cache, const Matrix& dout, std::span<double> grad) const {
        Matrix d = dout;
        for (int l = layers() - 1; l >= 0; --l) {
            if (l + 1 < layers()) d = d.cwiseProduct(cache.pre[l].unaryExpr([](double v) { return silu_grad(v); }));
            Eigen::Map<Matrix>(grad.data() + w_offset_[l], sizes_[l + 1], sizes_[l]).noalias() +=
                d * cache.inputs[l].transpose();
            Eigen::Map<Vector>(grad.data() + b_offset_[l], sizes_[l + 1]) += d.rowwise().sum();
            d = weight(l).transpose() * d;
        }
        return d;
    }

    /// Sum of squared weights (biases excluded).
    double weight_sq_norm() const {
        double s = 0.0;
        for (int l = 0; l < layers(); ++l) s += weight(l).squaredNorm();
        return s;
    }
    /// grad += 2 * c * W for every weight matrix.
    void add_weight_decay_grad(double c, std::span<double> grad) const {
        for (int l = 0; l < layers(); ++l) {
            const std::size_t n = static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1];
            for (std::size_t k = 0; k < n; ++k) grad[w_offset_[l] + k] += 2.0 * c * params_[w_offset_[l] + k];
        }
    }

private:
    std::vector<int> sizes_;
    std::vector<std::size_t> w_offset_;
    std::vector<std::size_t> b_offset_;
    std::vector<double> params_;
};

}  // namespace mgaug
