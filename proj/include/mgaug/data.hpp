// Datasets: labeled image sets, the synthetic multimodal shape benchmark,
// IDX ingestion, PNG export and on-disk image-set directories.
#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mgaug/geodesic.hpp"
#include "mgaug/optim.hpp"
#include "mgaug/tensor_io.hpp"

namespace mgaug {

struct SpecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// splitmix64 finalizer; derives independent per-index RNG seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct LabelMap {
    Grid grid;
    std::vector<int> labels;

    LabelMap() = default;
    explicit LabelMap(Grid g, int fill = 0) : grid(std::move(g)), labels(grid.size(), fill) {}

    std::set<int> label_set() const { return {labels.begin(), labels.end()}; }
    bool empty() const { return labels.empty(); }
};

/// Nearest-neighbour pull-back seg(phi(x)) with border clamping; never blends labels.
inline LabelMap propagate_labels(const LabelMap& seg, const DeformationMap& phi) {
    require_same_grid(seg.grid, phi.grid(), "propagate_labels");
    const Grid& g = seg.grid;
    LabelMap out(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        std::array<int, kMaxAxes> c{0, 0, 0};
        for (int a = 0; a < g.axes(); ++a) {
            c[a] = std::clamp(static_cast<int>(std::lround(phi.map.at(a, i))), 0, g.dim(a) - 1);
        }
        out.labels[i] = seg.labels[g.index(c)];
    }
    return out;
}

enum class Split { train, val, test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw FormatError("unknown split tag: " + s);
}

struct Provenance {
    bool augmented = false;
    int component = -1;  // mixture component the deformation came from
    int templ = -1;      // class id of the warped template
};

struct LabeledImageSet {
    std::vector<ScalarField> images;
    std::vector<int> labels;           // class id per image
    std::vector<LabelMap> label_maps;  // optional, one per image
    std::vector<Split> splits;
    std::vector<Provenance> provenance;
    int num_classes = 0;

    std::size_t size() const { return images.size(); }
    bool has_label_maps() const { return !label_maps.empty(); }

    void validate() const {
        const std::size_t n = images.size();
        if (labels.size() != n || splits.size() != n || provenance.size() != n) {
            throw InputError("image set columns have different lengths");
        }
        if (!label_maps.empty() && label_maps.size() != n) throw InputError("label maps do not cover every image");
        for (std::size_t i = 0; i < n; ++i) {
            require_same_grid(images.front().grid(), images[i].grid(), "image set");
            if (labels[i] < 0 || labels[i] >= num_classes) {
                throw InputError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(num_classes) + ")");
            }
        }
    }

    void push_back(ScalarField image, int label, Split split, Provenance prov = {}, LabelMap map = {}) {
        images.push_back(std::move(image));
        labels.push_back(label);
        splits.push_back(split);
        provenance.push_back(prov);
        if (!map.empty()) label_maps.push_back(std::move(map));
    }

    LabeledImageSet subset(const std::vector<std::size_t>& idx) const {
        LabeledImageSet out;
        out.num_classes = num_classes;
        for (std::size_t i : idx) {
            out.push_back(images[i], labels[i], splits[i], provenance[i], has_label_maps() ? label_maps[i] : LabelMap{});
        }
        return out;
    }

    std::vector<std::size_t> indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < size(); ++i)
            if (splits[i] == s) out.push_back(i);
        return out;
    }
    LabeledImageSet split(Split s) const { return subset(indices(s)); }

    std::vector<int> class_histogram() const {
        std::vector<int> h(num_classes, 0);
        for (int l : labels) ++h[l];
        return h;
    }
};

/// 70/15/15 train/val/test assignment: a seeded permutation of [0, n).
inline std::vector<Split> assign_splits(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, 0x5711));
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t n_train = static_cast<std::size_t>(std::llround(0.70 * static_cast<double>(n)));
    const std::size_t n_val = static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n)));
    std::vector<Split> out(n, Split::test);
    for (std::size_t r = 0; r < n; ++r) {
        out[perm[r]] = r < n_train ? Split::train : (r < n_train + n_val ? Split::val : Split::test);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic shapes.

enum class Shape { disk, cross, ring, bar };

inline const char* shape_name(Shape s) {
    switch (s) {
        case Shape::disk: return "disk";
        case Shape::cross: return "cross";
        case Shape::ring: return "ring";
        case Shape::bar: return "bar";
    }
    return "disk";
}

/// Smooth-edged silhouette in [0, 1] on a 2D grid, centred.
inline ScalarField shape_template(const Grid& g, Shape shape, double edge = 0.7) {
    if (g.axes() != 2) throw DimensionError("shape templates are 2D");
    ScalarField img(g);
    const double s = std::min(g.dim(0), g.dim(1)) / 28.0;
    const double cy = 0.5 * (g.dim(0) - 1);
    const double cx = 0.5 * (g.dim(1) - 1);
    auto box = [](double y, double x, double hy, double hx) { return std::max(std::abs(y) - hy, std::abs(x) - hx); };
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto c = g.coords(i);
        const double y = c[0] - cy;
        const double x = c[1] - cx;
        const double r = std::hypot(y, x);
        double d = 0.0;  // signed distance, negative inside
        switch (shape) {
            case Shape::disk: d = r - 8.0 * s; break;
            case Shape::cross: d = std::min(box(y, x, 9.0 * s, 2.5 * s), box(y, x, 2.5 * s, 9.0 * s)); break;
            case Shape::ring: d = std::abs(r - 7.0 * s) - 2.5 * s; break;
            case Shape::bar: d = box(y, x, 3.0 * s, 9.5 * s); break;
        }
        img[i] = 1.0 / (1.0 + std::exp(d / edge));
    }
    return img;
}

/// Two-part segmentation of a template: 1 = left half of the shape,
/// 2 = right half, 0 = background.
inline LabelMap template_labels(const ScalarField& templ) {
    LabelMap m(templ.grid());
    const double cx = 0.5 * (templ.grid().dim(1) - 1);
    for (std::size_t i = 0; i < templ.size(); ++i) {
        if (templ[i] < 0.5) continue;
        m.labels[i] = templ.grid().coords(i)[1] <= cx ? 1 : 2;
    }
    return m;
}

/// Eight smooth coefficient fields: K applied to boundary-vanishing products of
/// sines with frequencies (p, q) in {1, 2}^2, one set per displacement axis,
/// each normalized to unit peak magnitude.
inline std::vector<VectorField> smooth_basis(const SpectralOperator& op) {
    const Grid& g = op.grid();
    if (g.axes() != 2) throw DimensionError("the synthetic basis is 2D");
    std::vector<VectorField> basis;
    const int freqs[4][2] = {{1, 1}, {1, 2}, {2, 1}, {2, 2}};
    for (int axis = 0; axis < 2; ++axis) {
        for (const auto& f : freqs) {
            VectorField raw(g);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const auto c = g.coords(i);
                raw.at(axis, i) = std::sin(std::numbers::pi * f[0] * c[0] / (g.dim(0) - 1)) *
                                  std::sin(std::numbers::pi * f[1] * c[1] / (g.dim(1) - 1));
            }
            VectorField b = apply_K(raw, op);
            b *= 1.0 / b.max_magnitude();
            basis.push_back(std::move(b));
        }
    }
    return basis;
}

struct ModeParams {
    std::array<double, 8> mean{};
    std::array<double, 8> std{};
};

struct SyntheticSpec {
    std::vector<Shape> classes = {Shape::disk, Shape::cross};
    int modes = 2;
    std::vector<ModeParams> mode_params;  // empty: use default_modes()
    int n_per_class = 40;
    int size = 28;
    double alpha = 3.0;
    int steps = 10;
    std::uint64_t seed = 0;

    /// Mode means evenly spaced on a circle of radius `separation` in the
    /// plane of the two first-order coefficient fields (one per axis), with
    /// isotropic spread `spread` on all eight coefficients.
    static std::vector<ModeParams> default_modes(int modes, double separation = 1.8, double spread = 0.6) {
        std::vector<ModeParams> out(modes);
        for (int m = 0; m < modes; ++m) {
            const double a = 2.0 * std::numbers::pi * m / modes;
            out[m].mean[0] = separation * std::cos(a);
            out[m].mean[4] = separation * std::sin(a);
            out[m].std.fill(spread);
        }
        return out;
    }

    std::vector<ModeParams> resolved_modes() const {
        return mode_params.empty() ? default_modes(modes) : mode_params;
    }

    void validate() const {
        if (classes.empty()) throw SpecError("at least one class is required");
        if (modes < 1) throw SpecError("at least one mode is required");
        if (!mode_params.empty() && static_cast<int>(mode_params.size()) != modes) {
            throw SpecError("mode parameter count does not match mode count");
        }
        for (const auto& m : resolved_modes())
            for (double s : m.std)
                if (s < 0.0) throw SpecError("mode std must be non-negative");
        if (n_per_class < 1) throw SpecError("n_per_class must be positive");
        if (size < 8) throw SpecError("synthetic grid must be at least 8 voxels wide");
    }
};

struct SyntheticData {
    LabeledImageSet set;
    std::vector<int> modes;  // ground-truth mode per image
    std::vector<VectorField> v0;
    std::vector<ScalarField> templates;  // per class
    std::vector<LabelMap> template_maps;
};

/// Images are ordered class-major; per-image randomness comes from a stream
/// seeded by (seed, index) so any sample can be regenerated independently.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const Grid g({spec.size, spec.size});
    const SpectralOperator op(g, spec.alpha);
    const auto basis = smooth_basis(op);
    const auto modes = spec.resolved_modes();
    SyntheticData out;
    out.set.num_classes = static_cast<int>(spec.classes.size());
    for (Shape s : spec.classes) {
        out.templates.push_back(shape_template(g, s));
        out.template_maps.push_back(template_labels(out.templates.back()));
    }
    const std::size_t total = spec.classes.size() * static_cast<std::size_t>(spec.n_per_class);
    const auto splits = assign_splits(total, spec.seed);
    for (std::size_t idx = 0; idx < total; ++idx) {
        const int cls = static_cast<int>(idx / spec.n_per_class);
        std::mt19937_64 rng(mix_seed(spec.seed, idx));
        std::uniform_int_distribution<int> pick_mode(0, spec.modes - 1);
        std::normal_distribution<double> n(0.0, 1.0);
        const int mode = pick_mode(rng);
        bool accepted = false;
        for (int attempt = 0; attempt < 20 && !accepted; ++attempt) {
            VectorField v(g);
            for (int k = 0; k < 8; ++k) v.axpy(modes[mode].mean[k] + modes[mode].std[k] * n(rng), basis[k]);
            const auto traj = shoot(v, op, spec.steps);
            const auto phi = integrate_flow(traj);
            if (traj.max_step_displacement() > 0.4 * g.min_spacing() || det_jacobian(phi).min() <= 0.0) continue;
            accepted = true;
            out.set.push_back(warp_image(out.templates[cls], phi), cls, splits[idx], {},
                              propagate_labels(out.template_maps[cls], phi));
            out.modes.push_back(mode);
            out.v0.push_back(std::move(v));
        }
        if (!accepted) {
            throw SpecError("sample " + std::to_string(idx) + " failed the deformation gate 20 times; reduce the mode scale");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// IDX (big-endian u8 image/label containers).

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& what) {
    if (b.size() < off + 4) {
        throw FormatError(what + ": truncated header at byte " + std::to_string(b.size()) + ", expected at least " +
                          std::to_string(off + 4));
    }
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8) |
           std::uint32_t(b[off + 3]);
}

/// Images rescaled from u8 to [0, 1]; labels become class ids.
inline LabeledImageSet load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                                std::uint64_t split_seed = 0) {
    const auto ib = detail::read_all(images_path);
    const auto lb = detail::read_all(labels_path);
    const std::string iname = images_path.string();
    const std::string lname = labels_path.string();
    if (read_be32(ib, 0, iname) != 0x00000803) throw FormatError(iname + ": bad IDX image magic at byte 0");
    if (read_be32(lb, 0, lname) != 0x00000801) throw FormatError(lname + ": bad IDX label magic at byte 0");
    const std::uint32_t n = read_be32(ib, 4, iname);
    const std::uint32_t rows = read_be32(ib, 8, iname);
    const std::uint32_t cols = read_be32(ib, 12, iname);
    const std::uint32_t nl = read_be32(lb, 4, lname);
    if (n != nl) {
        throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(nl) + " labels");
    }
    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
    const std::size_t need_i = 16 + pixels * n;
    if (ib.size() != need_i) {
        throw FormatError(iname + ": payload ends at byte " + std::to_string(ib.size()) + ", expected " +
                          std::to_string(need_i));
    }
    if (lb.size() != 8 + static_cast<std::size_t>(n)) {
        throw FormatError(lname + ": payload ends at byte " + std::to_string(lb.size()) + ", expected " +
                          std::to_string(8 + n));
    }
    const Grid g({static_cast<int>(rows), static_cast<int>(cols)});
    const auto splits = assign_splits(n, split_seed);
    LabeledImageSet set;
    int max_label = 0;
    for (std::uint32_t k = 0; k < n; ++k) max_label = std::max<int>(max_label, lb[8 + k]);
    set.num_classes = max_label + 1;
    for (std::uint32_t k = 0; k < n; ++k) {
        ScalarField img(g);
        for (std::size_t p = 0; p < pixels; ++p) img[p] = ib[16 + k * pixels + p] / 255.0;
        set.push_back(std::move(img), lb[8 + k], splits[k]);
    }
    return set;
}

// ---------------------------------------------------------------------------
// PNG export.

namespace detail {

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
}

inline void png_chunk(std::vector<unsigned char>& out, const char* type, const std::vector<unsigned char>& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_be32(out, static_cast<std::uint32_t>(crc));
}

/// channels: 1 (gray) or 3 (RGB); rows of `width * channels` bytes.
inline std::vector<unsigned char> encode_png(int width, int height, int channels, const std::vector<unsigned char>& px) {
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<std::size_t>(height) * (width * channels + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        const auto* row = px.data() + static_cast<std::size_t>(y) * width * channels;
        raw.insert(raw.end(), row, row + static_cast<std::size_t>(width) * channels);
    }
    uLongf len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> z(len);
    if (compress2(z.data(), &len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
        throw std::runtime_error("PNG compression failed");
    }
    z.resize(len);
    std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<unsigned char> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(width));
    put_be32(ihdr, static_cast<std::uint32_t>(height));
    ihdr.insert(ihdr.end(), {8, static_cast<unsigned char>(channels == 3 ? 2 : 0), 0, 0, 0});
    png_chunk(out, "IHDR", ihdr);
    png_chunk(out, "IDAT", z);
    png_chunk(out, "IEND", {});
    return out;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream os(path, std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("could not write " + path.string());
}

}  // namespace detail

/// Min-max normalized 8-bit grayscale; a constant field maps to mid-gray.
inline std::vector<unsigned char> png_gray(const ScalarField& f) {
    if (f.grid().axes() != 2) throw DimensionError("PNG export supports 2D fields only; export 3D volumes per slice");
    const double lo = f.min();
    const double hi = f.max();
    std::vector<unsigned char> px(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        px[i] = hi > lo ? static_cast<unsigned char>(std::lround(255.0 * (f[i] - lo) / (hi - lo))) : 128;
    }
    return detail::encode_png(f.grid().dim(1), f.grid().dim(0), 1, px);
}

/// Diverging RGB map centred at 1: white at 1, blue for shrinkage, red for
/// expansion, saturating at the largest deviation in the field.
inline std::vector<unsigned char> png_detjac(const ScalarField& d) {
    if (d.grid().axes() != 2) throw DimensionError("PNG export supports 2D fields only; export 3D volumes per slice");
    double span = 0.0;
    for (double x : d.values()) span = std::max(span, std::abs(x - 1.0));
    std::vector<unsigned char> px(3 * d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double t = span > 0.0 ? std::clamp((d[i] - 1.0) / span, -1.0, 1.0) : 0.0;
        const auto fade = static_cast<unsigned char>(std::lround(255.0 * (1.0 - std::abs(t))));
        px[3 * i + 0] = t < 0 ? fade : 255;
        px[3 * i + 1] = fade;
        px[3 * i + 2] = t > 0 ? fade : 255;
    }
    return detail::encode_png(d.grid().dim(1), d.grid().dim(0), 3, px);
}

inline void export_png(const ScalarField& f, const std::filesystem::path& path) { detail::write_bytes(path, png_gray(f)); }
inline void export_detjac_png(const ScalarField& d, const std::filesystem::path& path) {
    detail::write_bytes(path, png_detjac(d));
}

// ---------------------------------------------------------------------------
// Image-set directories: one MGT1 file per image (and label map) plus
// manifest.csv with columns file,label,split,origin,component,template,labelmap.

inline Tensor to_tensor(const LabelMap& m) {
    Tensor t;
    t.dtype = DType::u8;
    for (int d : m.grid.dims()) t.shape.push_back(static_cast<std::uint32_t>(d));
    for (int l : m.labels) {
        if (l < 0 || l > 255) throw InputError("label maps hold labels in [0, 255]");
        t.data.push_back(l);
    }
    return t;
}

inline LabelMap to_label_map(const Tensor& t) {
    const ScalarField f = to_scalar_field(t);
    LabelMap m(f.grid());
    for (std::size_t i = 0; i < f.size(); ++i) m.labels[i] = static_cast<int>(std::lround(f[i]));
    return m;
}

inline void save_image_set(const LabeledImageSet& set, const std::filesystem::path& dir) {
    set.validate();
    std::filesystem::create_directories(dir);
    std::ofstream csv(dir / "manifest.csv");
    csv << "file,label,split,origin,component,template,labelmap\n";
    for (std::size_t i = 0; i < set.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%05zu.mgt", i);
        save_mgt(dir / name, to_tensor(set.images[i]));
        std::string map_name;
        if (set.has_label_maps()) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "seg_%05zu.mgt", i);
            map_name = buf;
            save_mgt(dir / map_name, to_tensor(set.label_maps[i]));
        }
        const auto& p = set.provenance[i];
        csv << name << ',' << set.labels[i] << ',' << split_name(set.splits[i]) << ','
            << (p.augmented ? "augmented" : "original") << ',' << p.component << ',' << p.templ << ',' << map_name
            << '\n';
    }
    if (!csv) throw std::runtime_error("could not write " + (dir / "manifest.csv").string());
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline LabeledImageSet load_image_set(const std::filesystem::path& dir) {
    std::ifstream csv(dir / "manifest.csv");
    if (!csv) throw InputError("missing image-set manifest: " + (dir / "manifest.csv").string());
    std::string line;
    std::getline(csv, line);
    if (line.rfind("file,label,split", 0) != 0) throw FormatError((dir / "manifest.csv").string() + ": bad header");
    LabeledImageSet set;
    int max_label = -1;
    bool any_maps = false;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 7) throw FormatError("manifest row has " + std::to_string(cells.size()) + " cells: " + line);
        Provenance p{cells[3] == "augmented", std::stoi(cells[4]), std::stoi(cells[5])};
        LabelMap m;
        if (!cells[6].empty()) {
            m = to_label_map(load_mgt(dir / cells[6]));
            any_maps = true;
        }
        const int label = std::stoi(cells[1]);
        max_label = std::max(max_label, label);
        set.push_back(to_scalar_field(load_mgt(dir / cells[0])), label, parse_split(cells[2]), p, std::move(m));
    }
    if (any_maps && set.label_maps.size() != set.size()) throw FormatError("label maps present for only some images");
    set.num_classes = max_label + 1;
    set.validate();
    return set;
}

}  // namespace mgaug
