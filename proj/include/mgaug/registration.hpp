// Template-to-target registration by direct optimization of the initial
// velocity: SSD data term over sigma^2 plus the (L v0, v0) regularizer.
#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "mgaug/geodesic.hpp"
#include "mgaug/optim.hpp"

namespace mgaug {

struct RegistrationProblem {
    ScalarField templ;
    std::vector<ScalarField> targets;
    double sigma = 0.02;
    ShootingConfig shooting;

    void validate() const {
        if (!(sigma > 0.0)) throw InputError("sigma must be positive");
        shooting.validate();
        for (const auto& t : targets) require_same_grid(templ.grid(), t.grid(), "registration");
    }
};

struct RegistrationOptions {
    double lr = 0.02;
    int max_iterations = 300;
    double rel_tol = 1e-6;
    int threads = 0;
};

struct RegistrationTrace {
    std::vector<double> energy;  // one entry per evaluated iterate, starting at v0 = 0
    std::vector<double> data_term;
    int best_iteration = 0;
    bool diverged = false;
};

struct RegistrationResult {
    std::vector<VectorField> v0s;
    std::vector<RegistrationTrace> traces;
    std::vector<DeformationMap> final_maps;
};

struct EnergyTerms {
    double data = 0.0;  // SSD / sigma^2
    double reg = 0.0;   // (L v0, v0)
    double total() const { return data + reg; }
};

inline double ssd(const ScalarField& a, const ScalarField& b) {
    require_same_grid(a.grid(), b.grid(), "ssd");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

inline EnergyTerms energy_terms(const ScalarField& image, const VectorField& v0, const ScalarField& target, double sigma,
                                const SpectralOperator& op, int num_steps) {
    require_same_grid(image.grid(), target.grid(), "energy");
    const auto warped = warp_image(image, integrate_flow(shoot(v0, op, num_steps)));
    EnergyTerms e{ssd(warped, target) / (sigma * sigma), inner(apply_L(v0, op), v0)};
    if (!std::isfinite(e.total())) throw DivergenceError("registration energy is not finite");
    return e;
}

inline double energy(const ScalarField& image, const VectorField& v0, const ScalarField& target, double sigma,
                     const ShootingConfig& cfg) {
    cfg.validate();
    return energy_terms(image, v0, target, sigma, SpectralOperator(v0.grid(), cfg.alpha), cfg.num_steps).total();
}

/// Exact gradient of the discrete energy; also reports the terms at v0.
inline VectorField energy_gradient(const ScalarField& image, const VectorField& v0, const ScalarField& target,
                                   double sigma, const SpectralOperator& op, int num_steps,
                                   EnergyTerms* terms = nullptr) {
    require_same_grid(image.grid(), target.grid(), "energy_gradient");
    GeodesicWarp gw(image, v0, op, num_steps);
    ScalarField dwarped(image.grid());
    const double scale = 2.0 / (sigma * sigma);
    for (std::size_t i = 0; i < dwarped.size(); ++i) dwarped[i] = scale * (gw.warped[i] - target[i]);
    VectorField grad = gw.backward(image, dwarped, op);
    const auto lv = apply_L(v0, op);
    grad.axpy(2.0 * image.grid().voxel_volume(), lv);
    if (terms) {
        *terms = {ssd(gw.warped, target) / (sigma * sigma), inner(lv, v0)};
        if (!std::isfinite(terms->total())) throw DivergenceError("registration energy is not finite");
    }
    if (!grad.all_finite()) throw DivergenceError("registration gradient is not finite");
    return grad;
}

inline VectorField energy_gradient(const ScalarField& image, const VectorField& v0, const ScalarField& target,
                                   double sigma, const ShootingConfig& cfg) {
    cfg.validate();
    return energy_gradient(image, v0, target, sigma, SpectralOperator(v0.grid(), cfg.alpha), cfg.num_steps);
}

/// Adam from v0 = 0. Returns the best iterate seen; a divergence ends the run
/// early with the flag set.
inline VectorField register_pair(const ScalarField& image, const ScalarField& target, double sigma,
                                 const SpectralOperator& op, int num_steps, const RegistrationOptions& opt,
                                 RegistrationTrace& trace) {
    VectorField v(image.grid());
    VectorField best = v;
    double best_energy = std::numeric_limits<double>::infinity();
    Adam adam(v.size(), AdamConfig{opt.lr});
    double previous = std::numeric_limits<double>::quiet_NaN();
    for (int it = 0; it <= opt.max_iterations; ++it) {
        EnergyTerms terms;
        VectorField grad;
        try {
            grad = energy_gradient(image, v, target, sigma, op, num_steps, &terms);
        } catch (const DivergenceError&) {
            trace.diverged = true;
            break;
        }
        const double e = terms.total();
        trace.energy.push_back(e);
        trace.data_term.push_back(terms.data);
        if (e < best_energy) {
            best_energy = e;
            best = v;
            trace.best_iteration = it;
        }
        if (e == 0.0) break;
        if (it > 0 && std::abs(previous - e) < opt.rel_tol * std::abs(previous)) break;
        if (it == opt.max_iterations) break;
        previous = e;
        adam.step(v.values(), grad.values());
    }
    return best;
}

inline RegistrationResult register_targets(const RegistrationProblem& problem, const RegistrationOptions& opt = {}) {
    problem.validate();
    const SpectralOperator op(problem.templ.grid(), problem.shooting.alpha);
    const std::size_t n = problem.targets.size();
    RegistrationResult result;
    result.v0s.resize(n);
    result.traces.resize(n);
    result.final_maps.resize(n);
    parallel_for(n, resolve_threads(opt.threads), [&](std::size_t i) {
        result.v0s[i] = register_pair(problem.templ, problem.targets[i], problem.sigma, op,
                                      problem.shooting.num_steps, opt, result.traces[i]);
        result.final_maps[i] = integrate_flow(shoot(result.v0s[i], op, problem.shooting.num_steps));
    });
    return result;
}

/// Long-format CSV: target,iteration,energy,data_term.
inline void write_energy_csv(std::ostream& os, const RegistrationResult& result) {
    os << "target,iteration,energy,data_term\n";
    os.precision(10);
    for (std::size_t t = 0; t < result.traces.size(); ++t) {
        const auto& tr = result.traces[t];
        for (std::size_t k = 0; k < tr.energy.size(); ++k) {
            os << t << ',' << k << ',' << tr.energy[k] << ',' << tr.data_term[k] << '\n';
        }
    }
}

}  // namespace mgaug
