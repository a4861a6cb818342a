#include <gtest/gtest.h>

#include <random>
#include <set>

#include "mgaug/augment.hpp"
#include "model_support.hpp"
#include "test_support.hpp"

using namespace mgaug;
using namespace mgaug::testing;

namespace {

const Grid kGrid({16, 16});

MixtureLatentModel random_model(int components, double scale, std::uint64_t seed = 1) {
    MixtureLatentModel m(kGrid, small_config(components), seed);
    std::mt19937_64 rng(seed);
    randomize(m, rng, scale);
    return m;
}

LabeledImageSet toy_set(const std::vector<int>& labels) {
    LabeledImageSet s;
    s.num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
    for (int l : labels) s.push_back(ScalarField(kGrid, 0.1 * l), l, Split::train);
    return s;
}

std::vector<ScalarField> toy_templates(int classes) {
    std::vector<ScalarField> t;
    for (int k = 0; k < classes; ++k) t.push_back(gaussian_blob(kGrid, 2.0 + k));
    return t;
}

AugmentRequest request(const MixtureLatentModel& m, int classes) {
    AugmentRequest req;
    req.model = &m;
    req.templates = toy_templates(classes);
    return req;
}

LabelMap square_labels(const Grid& g, int lo, int hi, int label = 1) {
    LabelMap m(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto c = g.coords(i);
        if (c[0] >= lo && c[0] < hi && c[1] >= lo && c[1] < hi) m.labels[i] = c[1] < (lo + hi) / 2 ? label : label + 1;
    }
    return m;
}

}  // namespace

TEST(SampleDeformation, FixedSeedIsBitIdentical) {
    const auto m = random_model(2, 1.5);
    std::mt19937_64 a(42), b(42);
    const auto da = sample_deformation(m, a);
    const auto db = sample_deformation(m, b);
    EXPECT_EQ(da.component, db.component);
    EXPECT_TRUE(std::ranges::equal(da.phi.map.values(), db.phi.map.values()));
}

TEST(SampleDeformation, ZeroDecoderGivesIdentity) {
    const MixtureLatentModel m(kGrid, small_config(3), 5);
    std::mt19937_64 rng(1);
    const auto id = identity_positions(kGrid);
    for (int k = 0; k < 10; ++k) {
        const auto d = sample_deformation(m, rng);
        EXPECT_TRUE(std::ranges::equal(d.phi.map.values(), id.values()));
        EXPECT_DOUBLE_EQ(d.min_detjac, 1.0);
    }
}

TEST(SampleDeformation, ComponentFrequenciesMatchUniformPrior) {
    const auto m = random_model(2, 1.5);
    std::mt19937_64 rng(3);
    int first = 0;
    for (int k = 0; k < 100; ++k) first += sample_deformation(m, rng).component == 0;
    // Binomial(100, 0.5) 99% interval: 50 +/- 2.576 * 5.
    EXPECT_GE(first, 37);
    EXPECT_LE(first, 63);
}

TEST(SampleDeformation, ComponentFilterIsRespected) {
    const auto m = random_model(3, 1.5);
    std::mt19937_64 rng(4);
    for (int k = 0; k < 20; ++k) EXPECT_EQ(sample_deformation(m, rng, 0.4, {2}).component, 2);
}

TEST(SampleDeformation, UnstableModelRaises) {
    auto m = random_model(2, 1.5);
    for (double& x : m.theta.bias_span(m.theta.layers() - 1)) x = 1e4;
    std::mt19937_64 rng(5);
    EXPECT_THROW(sample_deformation(m, rng), SamplingError);
}

TEST(Augment, BalancedCounts) {
    EXPECT_EQ(balanced_counts({3, 7}, 3.0), (std::vector<int>{9, 21}));
    EXPECT_EQ(balanced_counts({5, 5}, 1.0), (std::vector<int>{5, 5}));
    const auto c = balanced_counts({1, 1, 1}, 1.5);
    EXPECT_EQ(std::accumulate(c.begin(), c.end(), 0), 5);
    for (int x : c) EXPECT_NEAR(x, 1.5, 1.0);
}

TEST(Augment, MultiplierOneDoublesTheSet) {
    const auto m = random_model(2, 1.5);
    const auto orig = toy_set({0, 0, 0, 1, 1, 1, 1, 2, 2, 2});
    auto req = request(m, 3);
    req.multiplier = 1.0;
    req.seed = 9;
    const auto merged = augment_dataset(req, orig);
    ASSERT_EQ(merged.size(), 20u);
    std::vector<int> hist(3, 0);
    for (std::size_t i = 0; i < merged.size(); ++i) {
        if (i < 10) {
            EXPECT_FALSE(merged.provenance[i].augmented);
            EXPECT_TRUE(std::ranges::equal(merged.images[i].values(), orig.images[i].values()));
            continue;
        }
        EXPECT_TRUE(merged.provenance[i].augmented);
        EXPECT_EQ(merged.provenance[i].templ, merged.labels[i]);
        ++hist[merged.labels[i]];
    }
    const auto h0 = orig.class_histogram();
    for (int k = 0; k < 3; ++k) EXPECT_LE(std::abs(hist[k] - h0[k]), 1);
}

TEST(Augment, OutputsAreDiffeomorphicAndInRange) {
    const auto m = random_model(2, 1.5);
    const auto orig = toy_set({0, 1, 0, 1, 0, 1});
    auto req = request(m, 2);
    req.multiplier = 5.0;
    const auto samples = generate_augmented(req, orig);
    ASSERT_EQ(samples.size(), 30u);
    double largest = 0.0;
    for (const auto& s : samples) {
        largest = std::max(largest, s.v0.max_magnitude());
        EXPECT_GT(s.min_detjac, 0.0);
        EXPECT_TRUE(s.image.all_finite());
        const auto& t = req.templates[s.templ];
        EXPECT_GE(s.image.min(), t.min() - 1e-12);
        EXPECT_LE(s.image.max(), t.max() + 1e-12);
    }
    EXPECT_GT(largest, 0.5);  // the draws are not trivially near identity
}

TEST(Augment, DeterministicAcrossThreadCounts) {
    const auto m = random_model(2, 1.5);
    const auto orig = toy_set({0, 1, 1, 0});
    auto req = request(m, 2);
    req.seed = 17;
    req.threads = 1;
    const auto a = generate_augmented(req, orig);
    req.threads = 3;
    const auto b = generate_augmented(req, orig);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].component, b[i].component);
        EXPECT_TRUE(std::ranges::equal(a[i].image.values(), b[i].image.values()));
    }
}

TEST(Augment, NoiseFlagPerturbsIntensities) {
    const auto m = random_model(2, 1.5);
    const auto orig = toy_set({0, 1});
    auto req = request(m, 2);
    const auto clean = generate_augmented(req, orig);
    req.add_noise = true;
    const auto noisy = generate_augmented(req, orig);
    EXPECT_FALSE(std::ranges::equal(clean[0].image.values(), noisy[0].image.values()));
}

TEST(Augment, InvalidRequestsAreRejected) {
    const auto m = random_model(2, 1.5);
    const auto orig = toy_set({0, 1});
    auto req = request(m, 1);
    EXPECT_THROW(generate_augmented(req, orig), InputError);
    req.templates = toy_templates(2);
    req.multiplier = 0.0;
    EXPECT_THROW(generate_augmented(req, orig), InputError);
    req.multiplier = 1.0;
    req.component_filter = {2};
    EXPECT_THROW(generate_augmented(req, orig), InputError);
}

TEST(Augment, SegmentationSetsCarryPropagatedLabels) {
    const auto m = random_model(2, 1.5);
    LabeledImageSet orig;
    orig.num_classes = 1;
    const auto seg = square_labels(kGrid, 4, 12);
    orig.push_back(ScalarField(kGrid), 0, Split::train, {}, seg);
    auto req = request(m, 1);
    req.template_maps = {seg};
    req.multiplier = 4.0;
    const auto merged = augment_dataset(req, orig);
    ASSERT_EQ(merged.label_maps.size(), 5u);
    for (const auto& lm : merged.label_maps) EXPECT_TRUE(std::ranges::includes(seg.label_set(), lm.label_set()));
    req.template_maps.clear();
    EXPECT_THROW(augment_dataset(req, orig), InputError);
}

TEST(PropagateLabels, IdentityIsExact) {
    const auto seg = square_labels(kGrid, 3, 11);
    EXPECT_EQ(propagate_labels(seg, DeformationMap::identity(kGrid)).labels, seg.labels);
}

TEST(PropagateLabels, IntegerTranslationShiftsInterior) {
    const auto seg = square_labels(kGrid, 4, 10);
    auto phi = DeformationMap::identity(kGrid);
    for (double& x : phi.map.component(0)) x += 2.0;
    for (double& x : phi.map.component(1)) x -= 1.0;
    const auto out = propagate_labels(seg, phi);
    for (int y = 0; y < 14; ++y)
        for (int x = 1; x < 16; ++x)
            EXPECT_EQ(out.labels[kGrid.index({y, x, 0})], seg.labels[kGrid.index({y + 2, x - 1, 0})]);
}

TEST(PropagateLabels, LabelSetPreservedOverSampledDeformations) {
    const auto m = random_model(2, 1.5);
    const auto seg = square_labels(kGrid, 3, 13);
    std::mt19937_64 rng(8);
    for (int k = 0; k < 50; ++k) {
        const auto out = propagate_labels(seg, sample_deformation(m, rng).phi);
        EXPECT_TRUE(std::ranges::includes(seg.label_set(), out.label_set()));
    }
}

TEST(PropagateLabels, RoundTripThroughInverseKeepsDice) {
    const Grid g({28, 28});
    const SpectralOperator op(g, 3.0);
    const auto seg = square_labels(g, 7, 21);
    std::mt19937_64 rng(2);
    for (int k = 0; k < 10; ++k) {
        const auto v0 = smooth_random_field(g, rng, 1.5);
        const auto phi = integrate_flow(shoot(v0, op, 10));
        const auto back = propagate_labels(propagate_labels(seg, phi), invert_map(phi));
        for (int l : {0, 1, 2}) EXPECT_GT(dice(seg, back, l), 0.9) << "draw " << k << " label " << l;
    }
}

TEST(InvertMap, ComposesToIdentity) {
    const Grid g({24, 24});
    const SpectralOperator op(g, 3.0);
    std::mt19937_64 rng(6);
    const auto phi = integrate_flow(shoot(smooth_random_field(g, rng, 1.0), op, 10));
    const auto psi = invert_map(phi);
    const auto comp = interpolate(phi.map, psi.map);  // phi(psi(y))
    const auto id = identity_positions(g);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto c = g.coords(i);
        if (c[0] < 3 || c[0] > 20 || c[1] < 3 || c[1] > 20) continue;
        for (int a = 0; a < 2; ++a) worst = std::max(worst, std::abs(comp.at(a, i) - id.at(a, i)));
    }
    EXPECT_LT(worst, 0.05);
}

TEST(Dice, HandCountedSquares) {
    const Grid g({10, 10});
    LabelMap a(g), b(g);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            a.labels[g.index({y, x, 0})] = 1;      // 16 pixels
            b.labels[g.index({y, x + 2, 0})] = 1;  // 16 pixels, 8 shared
        }
    EXPECT_NEAR(dice(a, b, 1), (2.0 * 8 + 1e-6) / (32 + 1e-6), 1e-15);
    EXPECT_DOUBLE_EQ(dice(a, a, 1), 1.0);
    EXPECT_DOUBLE_EQ(dice(a, b, 5), 1.0);
}
