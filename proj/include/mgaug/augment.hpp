// Augmentation: draw deformations from the trained mixture prior and warp
// class templates with them.
#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <set>

#include "mgaug/data.hpp"
#include "mgaug/mixture.hpp"

namespace mgaug {

struct SamplingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DeformationDraw {
    LatentSample latent;
    int component = 0;  // 0-based
    DeformationMap phi;
    double min_detjac = 0.0;
    int rejections = 0;
};

/// Rejection sampler: a draw is kept only if every Euler step moves voxels by
/// at most `max_step` and the composed map has positive Jacobian determinant.
/// `components` restricts the mixture component (uniform over the set).
inline DeformationDraw sample_deformation(const MixtureLatentModel& model, std::mt19937_64& rng,
                                          double max_step = 0.4, const std::vector<int>& components = {}) {
    const int steps = model.config().steps;
    for (int attempt = 0; attempt < 20; ++attempt) {
        int c = -1;
        if (!components.empty()) {
            std::uniform_int_distribution<std::size_t> pick(0, components.size() - 1);
            c = components[pick(rng)];
        }
        DeformationDraw d;
        d.latent = model.sample(rng, c);
        d.component = static_cast<int>(std::find(d.latent.z.begin(), d.latent.z.end(), 1) - d.latent.z.begin());
        if (!d.latent.v.all_finite()) continue;
        VelocityTrajectory traj;
        try {
            traj = shoot(d.latent.v, model.op(), steps);
        } catch (const DivergenceError&) {
            continue;
        }
        if (traj.max_step_displacement() > max_step * model.grid().min_spacing()) continue;
        d.phi = integrate_flow(traj);
        d.min_detjac = det_jacobian(d.phi).min();
        if (!(d.min_detjac > 0.0)) continue;
        d.rejections = attempt;
        return d;
    }
    throw SamplingError("20 consecutive deformation draws were rejected; the model is unstable");
}

struct AugmentRequest {
    const MixtureLatentModel* model = nullptr;
    std::vector<ScalarField> templates;   // indexed by class id
    std::vector<LabelMap> template_maps;  // optional, indexed by class id
    double multiplier = 3.0;
    std::uint64_t seed = 0;
    std::vector<int> component_filter;  // 0-based; empty = all
    double max_step_displacement = 0.4;
    bool add_noise = false;  // observation noise N(0, lambda^2), off by default
    int threads = 0;

    void validate(const LabeledImageSet& original) const {
        if (!model) throw InputError("augmentation needs a model");
        if (!(multiplier > 0.0)) throw InputError("augmentation multiplier must be positive");
        if (templates.empty()) throw InputError("augmentation needs class templates");
        if (static_cast<int>(templates.size()) < original.num_classes) {
            throw InputError("missing templates: " + std::to_string(templates.size()) + " for " +
                             std::to_string(original.num_classes) + " classes");
        }
        if (!template_maps.empty() && template_maps.size() != templates.size()) {
            throw InputError("template label maps do not match templates");
        }
        for (const auto& t : templates) require_same_grid(model->grid(), t.grid(), "augmentation template");
        for (int c : component_filter) {
            if (c < 0 || c >= model->config().components) throw InputError("component filter out of range");
        }
        if (!(max_step_displacement > 0.0)) throw InputError("max step displacement must be positive");
    }
};

struct AugmentedSample {
    ScalarField image;
    int class_label = 0;
    LabelMap seg;
    int component = 0;
    int templ = 0;
    VectorField v0;
    double min_detjac = 0.0;
};

/// Per-class augmented sample counts: ceil(multiplier * N) in total, split
/// across classes proportionally to the original histogram by largest remainder.
inline std::vector<int> balanced_counts(const std::vector<int>& hist, double multiplier) {
    const int total_in = std::accumulate(hist.begin(), hist.end(), 0);
    const int total = static_cast<int>(std::ceil(multiplier * total_in - 1e-9));
    std::vector<int> out(hist.size());
    std::vector<std::pair<double, std::size_t>> rem;
    int used = 0;
    for (std::size_t k = 0; k < hist.size(); ++k) {
        const double exact = total_in ? static_cast<double>(total) * hist[k] / total_in : 0.0;
        out[k] = static_cast<int>(std::floor(exact));
        used += out[k];
        rem.emplace_back(-(exact - out[k]), k);
    }
    std::sort(rem.begin(), rem.end());
    for (int r = 0; r < total - used; ++r) ++out[rem[r].second];
    return out;
}

/// Generates the augmented samples only; sample i draws from the stream seeded
/// by (seed, i), so results are independent of the thread schedule.
inline std::vector<AugmentedSample> generate_augmented(const AugmentRequest& req, const LabeledImageSet& original) {
    req.validate(original);
    const auto counts = balanced_counts(original.class_histogram(), req.multiplier);
    std::vector<int> cls_of;
    for (std::size_t k = 0; k < counts.size(); ++k) cls_of.insert(cls_of.end(), counts[k], static_cast<int>(k));
    std::vector<AugmentedSample> out(cls_of.size());
    const double noise = req.model->config().lambda;
    parallel_for(out.size(), resolve_threads(req.threads), [&](std::size_t i) {
        std::mt19937_64 rng(mix_seed(req.seed, i));
        auto d = sample_deformation(*req.model, rng, req.max_step_displacement, req.component_filter);
        AugmentedSample& s = out[i];
        s.class_label = s.templ = cls_of[i];
        s.component = d.component;
        s.min_detjac = d.min_detjac;
        s.image = warp_image(req.templates[s.templ], d.phi);
        if (req.add_noise) {
            std::normal_distribution<double> n(0.0, noise);
            for (double& x : s.image.values()) x += n(rng);
        }
        if (!req.template_maps.empty()) s.seg = propagate_labels(req.template_maps[s.templ], d.phi);
        s.v0 = std::move(d.latent.v);
    });
    return out;
}

/// Originals followed by ceil(multiplier * N) augmented training samples.
inline LabeledImageSet augment_dataset(const AugmentRequest& req, const LabeledImageSet& original) {
    auto samples = generate_augmented(req, original);
    LabeledImageSet merged = original;
    const bool maps = original.has_label_maps() && !req.template_maps.empty();
    if (original.has_label_maps() && !maps) throw InputError("label maps need template label maps to propagate");
    for (auto& s : samples) {
        merged.push_back(std::move(s.image), s.class_label, Split::train, {true, s.component, s.templ},
                         maps ? std::move(s.seg) : LabelMap{});
    }
    return merged;
}

/// Approximate inverse of phi by fixed-point iteration on the displacement:
/// psi(y) = y - u(psi(y)) with u = phi - id.
inline DeformationMap invert_map(const DeformationMap& phi, int iterations = 30) {
    const VectorField id = identity_positions(phi.grid());
    VectorField u = phi.map;
    u.axpy(-1.0, id);
    DeformationMap psi = DeformationMap::identity(phi.grid());
    for (int it = 0; it < iterations; ++it) {
        VectorField next = id;
        next.axpy(-1.0, interpolate(u, psi.map));
        psi.map = std::move(next);
    }
    return psi;
}

/// Soerensen-Dice overlap of `label` between two maps; 1 when both are empty.
inline double dice(const LabelMap& a, const LabelMap& b, int label, double smooth = 1e-6) {
    require_same_grid(a.grid, b.grid, "dice");
    double inter = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        const bool x = a.labels[i] == label;
        const bool y = b.labels[i] == label;
        inter += x && y;
        na += x;
        nb += y;
    }
    return (2.0 * inter + smooth) / (na + nb + smooth);
}

}  // namespace mgaug
