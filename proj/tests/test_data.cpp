#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <random>

#include "mgaug/cluster.hpp"
#include "mgaug/data.hpp"
#include "mgaug/registration.hpp"

using namespace mgaug;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mgaug_data_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream os(p, std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void be32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

// Minimal PNG reader for our own output: stored filter-0 rows, one IDAT.
struct DecodedPng {
    int width = 0, height = 0, channels = 0;
    std::vector<unsigned char> px;
};

DecodedPng decode_png(const std::vector<unsigned char>& f) {
    auto rd = [&](std::size_t o) {
        return (std::uint32_t(f[o]) << 24) | (std::uint32_t(f[o + 1]) << 16) | (std::uint32_t(f[o + 2]) << 8) | f[o + 3];
    };
    DecodedPng out;
    std::vector<unsigned char> z;
    std::size_t o = 8;
    while (o < f.size()) {
        const std::uint32_t len = rd(o);
        const std::string type(f.begin() + o + 4, f.begin() + o + 8);
        const auto* data = f.data() + o + 8;
        const uLong crc = crc32(0L, f.data() + o + 4, len + 4);
        EXPECT_EQ(crc, rd(o + 8 + len)) << type;
        if (type == "IHDR") {
            out.width = static_cast<int>(rd(o + 8));
            out.height = static_cast<int>(rd(o + 12));
            out.channels = data[9] == 2 ? 3 : 1;
        } else if (type == "IDAT") {
            z.insert(z.end(), data, data + len);
        }
        o += 12 + len;
    }
    std::vector<unsigned char> raw(static_cast<std::size_t>(out.height) * (out.width * out.channels + 1));
    uLongf n = raw.size();
    EXPECT_EQ(uncompress(raw.data(), &n, z.data(), static_cast<uLong>(z.size())), Z_OK);
    for (int y = 0; y < out.height; ++y) {
        const std::size_t row = static_cast<std::size_t>(y) * (out.width * out.channels + 1);
        EXPECT_EQ(raw[row], 0);
        out.px.insert(out.px.end(), raw.begin() + row + 1, raw.begin() + row + 1 + out.width * out.channels);
    }
    return out;
}

}  // namespace

TEST(Synthetic, ZeroSpreadReproducesTemplates) {
    SyntheticSpec spec;
    spec.n_per_class = 4;
    spec.mode_params = SyntheticSpec::default_modes(2, 0.0, 0.0);
    const auto data = generate_synthetic(spec);
    ASSERT_EQ(data.set.size(), 8u);
    for (std::size_t i = 0; i < data.set.size(); ++i) {
        const auto& t = data.templates[data.set.labels[i]];
        EXPECT_TRUE(std::ranges::equal(data.set.images[i].values(), t.values()));
        EXPECT_EQ(data.set.label_maps[i].labels, data.template_maps[data.set.labels[i]].labels);
    }
}

TEST(Synthetic, SeedReproducibility) {
    SyntheticSpec spec;
    spec.n_per_class = 5;
    spec.seed = 11;
    const auto a = generate_synthetic(spec);
    const auto b = generate_synthetic(spec);
    EXPECT_EQ(a.modes, b.modes);
    for (std::size_t i = 0; i < a.set.size(); ++i) {
        EXPECT_TRUE(std::ranges::equal(a.set.images[i].values(), b.set.images[i].values()));
    }
    spec.seed = 12;
    const auto c = generate_synthetic(spec);
    bool differs = false;
    for (std::size_t i = 0; i < a.set.size(); ++i)
        differs |= !std::ranges::equal(a.set.images[i].values(), c.set.images[i].values());
    EXPECT_TRUE(differs);
}

TEST(Synthetic, EveryDeformationPassesTheGate) {
    SyntheticSpec spec;
    spec.classes = {Shape::disk, Shape::cross, Shape::ring, Shape::bar};
    spec.n_per_class = 10;
    spec.seed = 3;
    const auto data = generate_synthetic(spec);
    const SpectralOperator op(Grid({28, 28}), spec.alpha);
    for (const auto& v : data.v0) {
        const auto traj = shoot(v, op, spec.steps);
        EXPECT_LE(traj.max_step_displacement(), 0.4);
        EXPECT_GT(det_jacobian(integrate_flow(traj)).min(), 0.0);
    }
    EXPECT_EQ(data.set.class_histogram(), (std::vector<int>{10, 10, 10, 10}));
}

TEST(Synthetic, NegativeSpreadIsRejected) {
    SyntheticSpec spec;
    spec.mode_params = SyntheticSpec::default_modes(2);
    spec.mode_params[1].std[3] = -0.1;
    EXPECT_THROW(generate_synthetic(spec), SpecError);
}

TEST(Synthetic, OversizedModesFailTheGate) {
    SyntheticSpec spec;
    spec.n_per_class = 1;
    spec.mode_params = SyntheticSpec::default_modes(2, 40.0, 0.0);
    EXPECT_THROW(generate_synthetic(spec), SpecError);
}

// Feasibility oracle: registration recovers velocities whose basis
// coefficients separate the true modes.
TEST(Synthetic, RegisteredCoefficientsClusterByMode) {
    SyntheticSpec spec;
    spec.classes = {Shape::disk};
    spec.n_per_class = 16;
    spec.seed = 5;
    const auto data = generate_synthetic(spec);
    const SpectralOperator op(Grid({28, 28}), spec.alpha);
    const auto basis = smooth_basis(op);
    Eigen::MatrixXd B(basis.front().size(), basis.size());
    for (std::size_t k = 0; k < basis.size(); ++k)
        B.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::VectorXd>(basis[k].values().data(), B.rows());
    const auto qr = B.colPivHouseholderQr();

    RegistrationProblem prob{data.templates[0], data.set.images, 0.02, {}};
    RegistrationOptions opt;
    opt.max_iterations = 150;
    const auto reg = register_targets(prob, opt);
    std::vector<std::vector<double>> coeffs;
    for (const auto& v : reg.v0s) {
        const Eigen::VectorXd c = qr.solve(Eigen::Map<const Eigen::VectorXd>(v.values().data(), B.rows()));
        coeffs.emplace_back(c.data(), c.data() + c.size());
    }
    std::mt19937_64 rng(1);
    const auto km = kmeans(coeffs, 2, rng);
    EXPECT_GT(adjusted_rand_index(km.assignment, data.modes), 0.9);
}

TEST(Splits, ProportionsAndPurity) {
    const auto s = assign_splits(200, 9);
    EXPECT_EQ(std::count(s.begin(), s.end(), Split::train), 140);
    EXPECT_EQ(std::count(s.begin(), s.end(), Split::val), 30);
    EXPECT_EQ(std::count(s.begin(), s.end(), Split::test), 30);
    EXPECT_EQ(s, assign_splits(200, 9));
    EXPECT_NE(s, assign_splits(200, 10));
}

TEST(Idx, FixtureRoundTrip) {
    const auto dir = scratch("idx");
    std::vector<unsigned char> img, lab;
    be32(img, 0x803);
    be32(img, 2);
    be32(img, 4);
    be32(img, 5);
    for (int k = 0; k < 40; ++k) img.push_back(static_cast<unsigned char>(k * 6));
    be32(lab, 0x801);
    be32(lab, 2);
    lab.push_back(7);
    lab.push_back(3);
    write_file(dir / "img", img);
    write_file(dir / "lab", lab);
    const auto set = load_idx(dir / "img", dir / "lab");
    ASSERT_EQ(set.size(), 2u);
    EXPECT_EQ(set.images[0].grid().dim(0), 4);
    EXPECT_EQ(set.images[0].grid().dim(1), 5);
    EXPECT_EQ(set.labels, (std::vector<int>{7, 3}));
    EXPECT_EQ(set.num_classes, 8);
    for (int k = 0; k < 20; ++k) {
        EXPECT_EQ(set.images[0][k], k * 6 / 255.0);
        EXPECT_EQ(set.images[1][k], (k + 20) * 6 / 255.0);
    }
}

TEST(Idx, MalformedInputsAreRejected) {
    const auto dir = scratch("idx_bad");
    std::vector<unsigned char> img, lab;
    be32(img, 0x803);
    be32(img, 2);
    be32(img, 2);
    be32(img, 2);
    img.insert(img.end(), 8, 1);
    be32(lab, 0x801);
    be32(lab, 3);
    lab.insert(lab.end(), 3, 0);
    write_file(dir / "img", img);
    write_file(dir / "lab", lab);
    write_file(dir / "empty", {});
    EXPECT_THROW(load_idx(dir / "empty", dir / "lab"), FormatError);
    EXPECT_THROW(load_idx(dir / "img", dir / "lab"), FormatError);  // 2 vs 3
    EXPECT_THROW(load_idx(dir / "lab", dir / "img"), FormatError);  // swapped magic

    auto trunc = img;
    trunc.pop_back();
    write_file(dir / "trunc", trunc);
    lab[7] = 2;
    lab.pop_back();
    write_file(dir / "lab2", lab);
    try {
        load_idx(dir / "trunc", dir / "lab2");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("byte 23"), std::string::npos) << e.what();
    }
}

TEST(Png, ConstantFieldIsUniformGray) {
    const auto png = decode_png(png_gray(ScalarField(Grid({6, 7}), 3.5)));
    EXPECT_EQ(png.width, 7);
    EXPECT_EQ(png.height, 6);
    EXPECT_EQ(png.channels, 1);
    EXPECT_TRUE(std::ranges::all_of(png.px, [](unsigned char c) { return c == 128; }));
}

TEST(Png, CheckerboardAlternates) {
    ScalarField f(Grid({4, 4}));
    for (std::size_t i = 0; i < f.size(); ++i) {
        const auto c = f.grid().coords(i);
        f[i] = (c[0] + c[1]) % 2 ? 2.0 : -1.0;
    }
    const auto png = decode_png(png_gray(f));
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(png.px[i], f[i] > 0 ? 255 : 0);
}

TEST(Png, IdentityDetJacIsUniformMidpoint) {
    const auto png = decode_png(png_detjac(ScalarField(Grid({5, 5}), 1.0)));
    EXPECT_EQ(png.channels, 3);
    EXPECT_TRUE(std::ranges::all_of(png.px, [](unsigned char c) { return c == 255; }));

    ScalarField d(Grid({4, 4}), 1.0);
    d[0] = 0.5;
    d[1] = 1.5;
    const auto q = decode_png(png_detjac(d));
    EXPECT_EQ((std::vector<unsigned char>(q.px.begin(), q.px.begin() + 6)), (std::vector<unsigned char>{0, 0, 255, 255, 0, 0}));
}

TEST(Png, VolumesAreRejected) {
    EXPECT_THROW(png_gray(ScalarField(Grid({4, 4, 4}))), DimensionError);
    EXPECT_THROW(png_detjac(ScalarField(Grid({4, 4, 4}))), DimensionError);
}

TEST(ImageSet, SaveLoadRoundTrip) {
    SyntheticSpec spec;
    spec.n_per_class = 3;
    auto data = generate_synthetic(spec);
    data.set.provenance[2] = {true, 1, 0};
    const auto dir = scratch("set");
    save_image_set(data.set, dir);
    const auto back = load_image_set(dir);
    ASSERT_EQ(back.size(), data.set.size());
    EXPECT_EQ(back.labels, data.set.labels);
    EXPECT_EQ(back.splits, data.set.splits);
    EXPECT_TRUE(back.provenance[2].augmented);
    EXPECT_EQ(back.provenance[2].component, 1);
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back.label_maps[i].labels, data.set.label_maps[i].labels);
        for (std::size_t p = 0; p < back.images[i].size(); ++p)
            EXPECT_EQ(back.images[i][p], static_cast<double>(static_cast<float>(data.set.images[i][p])));
    }
}

TEST(ImageSet, ValidateCatchesBadLabels) {
    LabeledImageSet s;
    s.num_classes = 2;
    s.push_back(ScalarField(Grid({4, 4})), 2, Split::train);
    EXPECT_THROW(s.validate(), InputError);
}
