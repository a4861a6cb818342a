// Generative model over initial velocities with a Gaussian-mixture latent
// prior: recognition networks for x and eps, a prior network eps -> C
// diagonal Gaussians, a decoder x -> smooth velocity field, the four-term
// evidence lower bound and the training loss with exact gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mgaug/cluster.hpp"
#include "mgaug/geodesic.hpp"
#include "mgaug/nn.hpp"
#include "mgaug/optim.hpp"
#include "mgaug/tensor_io.hpp"

namespace mgaug {

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelConfig {
    int components = 2;
    int latent_dim = 16;
    int eps_dim = 8;
    int hidden = 256;
    int steps = 10;
    double alpha = 3.0;
    double lambda = 0.02;
    double weight_decay = 1e-5;

    void validate() const {
        if (components < 1) throw InputError("component count must be at least 1");
        if (latent_dim < 1 || eps_dim < 1 || hidden < 1) throw InputError("network sizes must be positive");
        if (steps < 1) throw InputError("shooting needs at least one time step");
        if (!(alpha > 0.0)) throw InputError("alpha must be positive");
        if (!(lambda > 0.0)) throw InputError("lambda must be positive");
        if (!(weight_decay >= 0.0)) throw InputError("weight decay must be non-negative");
    }
};

/// One training item: observed image, its registered velocity and the
/// template it was registered from.
struct MgaugExample {
    ScalarField image;
    VectorField velocity;
    ScalarField templ;
    int label = -1;
    int mode = -1;
};

struct DiagonalGaussian {
    Vector mean;
    Vector logvar;
};

struct Posterior {
    DiagonalGaussian x;
    DiagonalGaussian eps;
};

struct LatentSample {
    std::vector<int> z;  // one-hot
    Vector eps;
    Vector x;
    VectorField v;
};

struct ElboBreakdown {
    double recon = 0.0;
    double kl_x = 0.0;
    double kl_eps = 0.0;
    double kl_z = 0.0;
    double total = 0.0;
};

struct LossBreakdown {
    double data = 0.0;    // SSD / (2 lambda^2)
    double kl_x = 0.0;
    double kl_eps = 0.0;
    double kl_z = 0.0;
    double smooth = 0.0;  // 1/2 (L v, v)
    double decay = 0.0;
    double total = 0.0;
    ElboBreakdown elbo;
};

/// Reparameterization noise for one (example, draw) column.
struct NoiseDraw {
    Vector nx;
    Vector ne;
};

struct ModelGradient {
    std::vector<double> beta;
    std::vector<double> theta;
    std::vector<double> psi_x;
    std::vector<double> psi_eps;
};

/// log N(x | mean, diag exp(logvar))
inline double log_normal_diag(const Vector& x, const Vector& mean, const Vector& logvar) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double d = x[k] - mean[k];
        s += std::log(2.0 * std::numbers::pi) + logvar[k] + d * d * std::exp(-logvar[k]);
    }
    return -0.5 * s;
}

/// KL(N(m1, exp lv1) || N(m2, exp lv2)) for diagonal Gaussians.
inline double kl_diag(const Vector& m1, const Vector& lv1, const Vector& m2, const Vector& lv2) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < m1.size(); ++k) {
        const double d = m1[k] - m2[k];
        s += lv2[k] - lv1[k] + (std::exp(lv1[k]) + d * d) * std::exp(-lv2[k]) - 1.0;
    }
    return 0.5 * s;
}

/// Posterior over components under a uniform mixing prior, computed with
/// log-sum-exp. Also returns the log responsibilities when asked.
inline std::vector<double> mixture_responsibilities(const Vector& x, const std::vector<DiagonalGaussian>& comps,
                                                    std::vector<double>* log_r = nullptr) {
    std::vector<double> l(comps.size());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < comps.size(); ++c) {
        l[c] = log_normal_diag(x, comps[c].mean, comps[c].logvar);
        top = std::max(top, l[c]);
    }
    double sum = 0.0;
    for (double v : l) sum += std::exp(v - top);
    const double lse = top + std::log(sum);
    std::vector<double> r(l.size());
    for (std::size_t c = 0; c < l.size(); ++c) {
        l[c] -= lse;
        r[c] = std::exp(l[c]);
    }
    if (log_r) *log_r = l;
    return r;
}

class MixtureLatentModel {
public:
    MixtureLatentModel(Grid grid, ModelConfig cfg, std::uint64_t seed)
        : grid_(std::move(grid)), cfg_(cfg), op_(std::make_shared<SpectralOperator>(grid_, cfg.alpha)) {
        cfg_.validate();
        std::mt19937_64 rng(seed);
        const int n = static_cast<int>(grid_.size());
        const int dn = n * grid_.axes();
        const int h = cfg_.hidden;
        psi_x = Mlp({n + dn, h, h, 2 * cfg_.latent_dim}, rng);
        psi_eps = Mlp({dn, h, h, 2 * cfg_.eps_dim}, rng);
        beta = Mlp({cfg_.eps_dim, h, h, 2 * cfg_.latent_dim * cfg_.components}, rng);
        theta = Mlp({cfg_.latent_dim, h, h, dn}, rng);
    }

    const Grid& grid() const { return grid_; }
    const ModelConfig& config() const { return cfg_; }
    const SpectralOperator& op() const { return *op_; }
    int components() const { return cfg_.components; }
    int latent_dim() const { return cfg_.latent_dim; }
    int eps_dim() const { return cfg_.eps_dim; }

    std::vector<double> pi() const { return std::vector<double>(cfg_.components, 1.0 / cfg_.components); }

    /// Encoder input column: image values followed by velocity values.
    Vector encoder_input(const ScalarField& image, const VectorField& v) const {
        require_same_grid(grid_, image.grid(), "encode");
        require_same_grid(grid_, v.grid(), "encode");
        Vector in(static_cast<Eigen::Index>(image.size() + v.size()));
        for (std::size_t i = 0; i < image.size(); ++i) in[i] = image[i];
        for (std::size_t i = 0; i < v.size(); ++i) in[image.size() + i] = v.values()[i];
        return in;
    }

    Posterior encode(const ScalarField& image, const VectorField& v) const {
        const Vector in = encoder_input(image, v);
        const Matrix ox = psi_x.forward(in);
        const Matrix oe = psi_eps.forward(in.tail(static_cast<Eigen::Index>(v.size())));
        if (!ox.allFinite() || !oe.allFinite()) throw TrainingError("encoder produced non-finite output");
        const int L = cfg_.latent_dim;
        const int E = cfg_.eps_dim;
        return {{ox.col(0).head(L), ox.col(0).tail(L)}, {oe.col(0).head(E), oe.col(0).tail(E)}};
    }

    std::vector<DiagonalGaussian> split_prior(const Eigen::Ref<const Vector>& out) const {
        const int L = cfg_.latent_dim;
        std::vector<DiagonalGaussian> comps(cfg_.components);
        for (int c = 0; c < cfg_.components; ++c) {
            comps[c].mean = out.segment(2 * L * c, L);
            comps[c].logvar = out.segment(2 * L * c + L, L);
        }
        return comps;
    }

    std::vector<DiagonalGaussian> prior_components(const Vector& eps) const {
        if (!eps.allFinite()) throw InputError("eps must be finite");
        return split_prior(beta.forward(eps).col(0));
    }

    std::vector<double> responsibilities(const Vector& x, const Vector& eps) const {
        return mixture_responsibilities(x, prior_components(eps));
    }

    /// Decoder network output mapped through K.
    VectorField decode_column(const Eigen::Ref<const Vector>& u) const {
        VectorField raw(grid_, std::vector<double>(u.data(), u.data() + u.size()));
        VectorField v = apply_K(raw, *op_);
        if (!v.all_finite()) throw TrainingError("decoder produced a non-finite velocity");
        return v;
    }

    VectorField decode(const Vector& x) const {
        if (!x.allFinite()) throw InputError("latent code must be finite");
        return decode_column(theta.forward(x).col(0));
    }

    /// Ancestral sample: z ~ pi (or forced), eps ~ N(0, I), x ~ N(mu_z, Sigma_z).
    LatentSample sample(std::mt19937_64& rng, int component = -1) const {
        std::normal_distribution<double> n(0.0, 1.0);
        LatentSample s;
        std::uniform_int_distribution<int> pick(0, cfg_.components - 1);
        const int c = component >= 0 ? component : pick(rng);
        s.z.assign(cfg_.components, 0);
        s.z[c] = 1;
        s.eps = Vector(cfg_.eps_dim);
        for (auto& e : s.eps) e = n(rng);
        const auto comps = prior_components(s.eps);
        s.x = Vector(cfg_.latent_dim);
        for (int k = 0; k < cfg_.latent_dim; ++k) {
            s.x[k] = comps[c].mean[k] + std::exp(0.5 * comps[c].logvar[k]) * n(rng);
        }
        s.v = decode(s.x);
        return s;
    }

    std::vector<Mlp*> networks() { return {&beta, &theta, &psi_x, &psi_eps}; }
    static std::vector<std::string> network_names() { return {"beta", "theta", "psi_x", "psi_eps"}; }

    ModelGradient zero_gradient() const {
        return {std::vector<double>(beta.params().size(), 0.0), std::vector<double>(theta.params().size(), 0.0),
                std::vector<double>(psi_x.params().size(), 0.0), std::vector<double>(psi_eps.params().size(), 0.0)};
    }

    Mlp beta;
    Mlp theta;
    Mlp psi_x;
    Mlp psi_eps;

private:
    Grid grid_;
    ModelConfig cfg_;
    std::shared_ptr<SpectralOperator> op_;
};

inline std::vector<NoiseDraw> draw_noise(const MixtureLatentModel& model, std::size_t count, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<NoiseDraw> out(count);
    for (auto& d : out) {
        d.nx = Vector(model.latent_dim());
        d.ne = Vector(model.eps_dim());
        for (auto& v : d.nx) v = n(rng);
        for (auto& v : d.ne) v = n(rng);
    }
    return out;
}

/// Loss and (optionally) gradients over a batch. `noise` holds `draws`
/// entries per example, example-major. All per-column terms are averaged over
/// examples and draws; weight decay is added once.
inline LossBreakdown evaluate_batch(const MixtureLatentModel& model, std::span<const MgaugExample> batch,
                                    std::span<const NoiseDraw> noise, int draws, ModelGradient* grad,
                                    int threads = 1) {
    const auto& cfg = model.config();
    const Grid& grid = model.grid();
    const std::size_t B = batch.size();
    if (B == 0) throw InputError("empty batch");
    if (draws < 1 || noise.size() != B * static_cast<std::size_t>(draws)) throw InputError("noise count mismatch");
    const int L = cfg.latent_dim;
    const int E = cfg.eps_dim;
    const int C = cfg.components;
    const Eigen::Index N = static_cast<Eigen::Index>(grid.size());
    const Eigen::Index DN = N * grid.axes();
    const std::size_t cols = B * static_cast<std::size_t>(draws);
    const double w = 1.0 / static_cast<double>(cols);
    const double lambda2 = cfg.lambda * cfg.lambda;
    const double vol = grid.voxel_volume();
    const SpectralOperator& op = model.op();

    Matrix in_x(N + DN, static_cast<Eigen::Index>(B));
    for (std::size_t b = 0; b < B; ++b) in_x.col(b) = model.encoder_input(batch[b].image, batch[b].velocity);
    const Matrix in_e = in_x.bottomRows(DN);

    Mlp::Cache cx;
    Mlp::Cache ce;
    const Matrix ox = model.psi_x.forward(in_x, &cx);
    const Matrix oe = model.psi_eps.forward(in_e, &ce);
    if (!ox.allFinite() || !oe.allFinite()) throw TrainingError("encoder produced non-finite output");

    Matrix X(L, static_cast<Eigen::Index>(cols));
    Matrix Eps(E, static_cast<Eigen::Index>(cols));
    for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t b = j / draws;
        X.col(j) = ox.col(b).head(L) + (0.5 * ox.col(b).tail(L).array()).exp().matrix().cwiseProduct(noise[j].nx);
        Eps.col(j) = oe.col(b).head(E) + (0.5 * oe.col(b).tail(E).array()).exp().matrix().cwiseProduct(noise[j].ne);
    }

    Mlp::Cache cb;
    Mlp::Cache ct;
    const Matrix ob = model.beta.forward(Eps, &cb);
    const Matrix ot = model.theta.forward(X, &ct);
    if (!ob.allFinite()) throw TrainingError("prior network produced non-finite output");
    if (!ot.allFinite()) throw TrainingError("decoder produced non-finite output");

    // Per-column geodesic part: reconstruction, smoothness and dL/du.
    std::vector<double> data(cols);
    std::vector<double> smooth(cols);
    Matrix dU = Matrix::Zero(DN, grad ? static_cast<Eigen::Index>(cols) : 0);
    parallel_for(cols, threads, [&](std::size_t j) {
        const auto& ex = batch[j / draws];
        const VectorField v = model.decode_column(ot.col(j));
        GeodesicWarp gw(ex.templ, v, op, cfg.steps);
        double s = 0.0;
        for (std::size_t i = 0; i < gw.warped.size(); ++i) s += (gw.warped[i] - ex.image[i]) * (gw.warped[i] - ex.image[i]);
        data[j] = s / (2.0 * lambda2);
        const VectorField lv = apply_L(v, op);
        smooth[j] = 0.5 * inner(lv, v);
        if (!std::isfinite(data[j])) throw DivergenceError("reconstruction term is not finite");
        if (!std::isfinite(smooth[j])) throw DivergenceError("smoothness term is not finite");
        if (!grad) return;
        ScalarField dw(grid);
        for (std::size_t i = 0; i < dw.size(); ++i) dw[i] = w * (gw.warped[i] - ex.image[i]) / lambda2;
        VectorField dv = gw.backward(ex.templ, dw, op);
        dv.axpy(w * vol, lv);
        const VectorField du = apply_K(dv, op);
        dU.col(j) = Eigen::Map<const Vector>(du.values().data(), DN);
    });

    LossBreakdown out;
    Matrix dOx = Matrix::Zero(2 * L, grad ? static_cast<Eigen::Index>(B) : 0);
    Matrix dOe = Matrix::Zero(2 * E, grad ? static_cast<Eigen::Index>(B) : 0);
    Matrix dOb = Matrix::Zero(ob.rows(), grad ? static_cast<Eigen::Index>(cols) : 0);
    Matrix dX;
    if (grad) dX = model.theta.backward(ct, dU, grad->theta);

    const double log_norm = 0.5 * static_cast<double>(N) * std::log(2.0 * std::numbers::pi * lambda2);
    for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t b = j / draws;
        const Vector mx = ox.col(b).head(L);
        const Vector lvx = ox.col(b).tail(L);
        const Vector me = oe.col(b).head(E);
        const Vector lve = oe.col(b).tail(E);
        const Vector x = X.col(j);
        const auto comps = model.split_prior(ob.col(j));
        std::vector<double> log_r;
        const auto r = mixture_responsibilities(x, comps, &log_r);

        std::vector<double> A(C);
        double kl_x = 0.0;
        double kl_z = std::log(static_cast<double>(C));
        for (int c = 0; c < C; ++c) {
            A[c] = kl_diag(mx, lvx, comps[c].mean, comps[c].logvar);
            kl_x += r[c] * A[c];
            kl_z += r[c] * log_r[c];
        }
        if (C == 1) kl_z = 0.0;
        double kl_e = 0.0;
        for (int k = 0; k < E; ++k) kl_e += 0.5 * (std::exp(lve[k]) + me[k] * me[k] - 1.0 - lve[k]);
        if (!std::isfinite(kl_x)) throw DivergenceError("kl_x term is not finite");
        if (!std::isfinite(kl_e)) throw DivergenceError("kl_eps term is not finite");
        if (!std::isfinite(kl_z)) throw DivergenceError("kl_z term is not finite");

        out.data += w * data[j];
        out.smooth += w * smooth[j];
        out.kl_x += w * kl_x;
        out.kl_eps += w * kl_e;
        out.kl_z += w * kl_z;

        if (!grad) continue;
        double gbar = 0.0;
        for (int c = 0; c < C; ++c) gbar += r[c] * (A[c] + log_r[c]);
        Vector dx = dX.col(j);
        Vector dmx = Vector::Zero(L);
        Vector dlvx = Vector::Zero(L);
        for (int c = 0; c < C; ++c) {
            const double dl = w * r[c] * (A[c] + log_r[c] - gbar);  // through the softmax
            const double wa = w * r[c];                             // through A_c
            const Vector inv = (-comps[c].logvar.array()).exp();
            const Vector dxm = x - comps[c].mean;
            const Vector dmm = mx - comps[c].mean;
            const Eigen::Index off = 2 * L * c;
            dx -= dl * dxm.cwiseProduct(inv);
            dOb.col(j).segment(off, L) += dl * dxm.cwiseProduct(inv) - wa * dmm.cwiseProduct(inv);
            for (int k = 0; k < L; ++k) {
                dOb(off + L + k, j) += dl * (-0.5 + 0.5 * dxm[k] * dxm[k] * inv[k]) +
                                       wa * 0.5 * (1.0 - (std::exp(lvx[k]) + dmm[k] * dmm[k]) * inv[k]);
                dlvx[k] += wa * 0.5 * (std::exp(lvx[k]) * inv[k] - 1.0);
            }
            dmx += wa * dmm.cwiseProduct(inv);
        }
        dmx += dx;
        for (int k = 0; k < L; ++k) dlvx[k] += dx[k] * 0.5 * std::exp(0.5 * lvx[k]) * noise[j].nx[k];
        dOx.col(b).head(L) += dmx;
        dOx.col(b).tail(L) += dlvx;
        for (int k = 0; k < E; ++k) {
            dOe(k, b) += w * me[k];
            dOe(E + k, b) += w * 0.5 * (std::exp(lve[k]) - 1.0);
        }
    }

    if (grad) {
        const Matrix dEps = model.beta.backward(cb, dOb, grad->beta);
        for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t b = j / draws;
            for (int k = 0; k < E; ++k) {
                dOe(k, b) += dEps(k, j);
                dOe(E + k, b) += dEps(k, j) * 0.5 * std::exp(0.5 * oe(E + k, b)) * noise[j].ne[k];
            }
        }
        model.psi_x.backward(cx, dOx, grad->psi_x);
        model.psi_eps.backward(ce, dOe, grad->psi_eps);
        model.beta.add_weight_decay_grad(cfg.weight_decay, grad->beta);
        model.theta.add_weight_decay_grad(cfg.weight_decay, grad->theta);
        model.psi_x.add_weight_decay_grad(cfg.weight_decay, grad->psi_x);
        model.psi_eps.add_weight_decay_grad(cfg.weight_decay, grad->psi_eps);
    }

    out.decay = cfg.weight_decay * (model.beta.weight_sq_norm() + model.theta.weight_sq_norm() +
                                    model.psi_x.weight_sq_norm() + model.psi_eps.weight_sq_norm());
    out.total = out.data + out.kl_x + out.kl_eps + out.kl_z + out.smooth + out.decay;
    out.elbo.recon = -out.data - log_norm;
    out.elbo.kl_x = out.kl_x;
    out.elbo.kl_eps = out.kl_eps;
    out.elbo.kl_z = out.kl_z;
    out.elbo.total = out.elbo.recon - out.kl_x - out.kl_eps - out.kl_z;
    return out;
}

/// Monte-Carlo ELBO per image, averaged over the batch.
inline ElboBreakdown elbo(const MixtureLatentModel& model, std::span<const MgaugExample> batch, int mc_samples,
                          std::mt19937_64& rng, int threads = 1) {
    if (mc_samples < 1) throw InputError("mc_samples must be at least 1");
    const auto noise = draw_noise(model, batch.size() * static_cast<std::size_t>(mc_samples), rng);
    return evaluate_batch(model, batch, noise, mc_samples, nullptr, threads).elbo;
}

inline LossBreakdown mgaug_loss(const MixtureLatentModel& model, std::span<const MgaugExample> batch,
                                std::span<const NoiseDraw> noise, ModelGradient& grad, int threads = 1) {
    grad = model.zero_gradient();
    return evaluate_batch(model, batch, noise, 1, &grad, threads);
}

// ---------------------------------------------------------------------------
// Checkpoints: one MGT1 file per parameter tensor plus a plain-text manifest.

inline std::vector<std::pair<std::string, std::string>> model_config_entries(const MixtureLatentModel& m) {
    const auto& c = m.config();
    auto num = [](double x) {
        std::ostringstream s;
        s.precision(17);
        s << x;
        return s.str();
    };
    std::string dims;
    std::string spacing;
    for (int a = 0; a < m.grid().axes(); ++a) {
        dims += (a ? "," : "") + std::to_string(m.grid().dim(a));
        spacing += (a ? "," : "") + num(m.grid().spacing(a));
    }
    return {{"grid", dims},
            {"spacing", spacing},
            {"components", std::to_string(c.components)},
            {"latent_dim", std::to_string(c.latent_dim)},
            {"eps_dim", std::to_string(c.eps_dim)},
            {"hidden", std::to_string(c.hidden)},
            {"steps", std::to_string(c.steps)},
            {"alpha", num(c.alpha)},
            {"lambda", num(c.lambda)},
            {"weight_decay", num(c.weight_decay)}};
}

inline void save_checkpoint(MixtureLatentModel& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.txt");
    manifest << "# mgaug checkpoint\n";
    for (const auto& [k, v] : model_config_entries(model)) manifest << "config " << k << ' ' << v << '\n';
    const auto names = MixtureLatentModel::network_names();
    const auto nets = model.networks();
    for (std::size_t n = 0; n < nets.size(); ++n) {
        Mlp& net = *nets[n];
        for (int l = 0; l < net.layers(); ++l) {
            for (int part = 0; part < 2; ++part) {
                const std::string name = names[n] + (part == 0 ? ".W" : ".b") + std::to_string(l);
                Tensor t;
                t.dtype = DType::f64;
                auto span = part == 0 ? net.weight_span(l) : net.bias_span(l);
                if (part == 0) {
                    t.shape = {static_cast<std::uint32_t>(net.sizes()[l + 1]), static_cast<std::uint32_t>(net.sizes()[l])};
                } else {
                    t.shape = {static_cast<std::uint32_t>(net.sizes()[l + 1])};
                }
                t.data.assign(span.begin(), span.end());
                const std::string file = name + ".mgt";
                save_mgt(dir / file, t);
                manifest << "tensor " << name << " f64 ";
                for (std::size_t s = 0; s < t.shape.size(); ++s) manifest << (s ? "x" : "") << t.shape[s];
                manifest << ' ' << file << '\n';
            }
        }
    }
    if (!manifest) throw std::runtime_error("could not write checkpoint manifest in " + dir.string());
}

inline MixtureLatentModel load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw std::runtime_error("missing checkpoint manifest in " + dir.string());
    std::map<std::string, std::string> config;
    std::vector<std::pair<std::string, std::string>> tensors;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream in(line);
        std::string kind;
        in >> kind;
        if (kind == "config") {
            std::string k;
            std::string v;
            in >> k >> v;
            config[k] = v;
        } else if (kind == "tensor") {
            std::string name;
            std::string dtype;
            std::string shape;
            std::string file;
            in >> name >> dtype >> shape >> file;
            tensors.emplace_back(name, file);
        } else {
            throw FormatError("unknown manifest entry: " + kind);
        }
    }
    auto get = [&](const std::string& k) {
        auto it = config.find(k);
        if (it == config.end()) throw FormatError("checkpoint manifest lacks " + k);
        return it->second;
    };
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::istringstream in(s);
        std::string part;
        while (std::getline(in, part, ',')) out.push_back(part);
        return out;
    };
    std::vector<int> dims;
    std::vector<double> spacing;
    for (const auto& p : split(get("grid"))) dims.push_back(std::stoi(p));
    for (const auto& p : split(get("spacing"))) spacing.push_back(std::stod(p));
    ModelConfig cfg;
    cfg.components = std::stoi(get("components"));
    cfg.latent_dim = std::stoi(get("latent_dim"));
    cfg.eps_dim = std::stoi(get("eps_dim"));
    cfg.hidden = std::stoi(get("hidden"));
    cfg.steps = std::stoi(get("steps"));
    cfg.alpha = std::stod(get("alpha"));
    cfg.lambda = std::stod(get("lambda"));
    cfg.weight_decay = std::stod(get("weight_decay"));
    MixtureLatentModel model(Grid(dims, spacing), cfg, 0);
    const auto names = MixtureLatentModel::network_names();
    const auto nets = model.networks();
    std::size_t loaded = 0;
    for (const auto& [name, file] : tensors) {
        const auto dot = name.find('.');
        const std::string net_name = name.substr(0, dot);
        const char part = name[dot + 1];
        const int layer = std::stoi(name.substr(dot + 2));
        std::size_t n = 0;
        while (n < names.size() && names[n] != net_name) ++n;
        if (n == names.size() || layer >= nets[n]->layers()) throw FormatError("unexpected tensor " + name);
        auto span = part == 'W' ? nets[n]->weight_span(layer) : nets[n]->bias_span(layer);
        const Tensor t = load_mgt(dir / file);
        if (t.data.size() != span.size()) throw FormatError("tensor " + name + " has the wrong size");
        std::copy(t.data.begin(), t.data.end(), span.begin());
        ++loaded;
    }
    std::size_t expected = 0;
    for (auto* net : nets) expected += 2 * static_cast<std::size_t>(net->layers());
    if (loaded != expected) throw FormatError("checkpoint is missing tensors");
    return model;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
    int epochs = 50;
    int batch = 16;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    /// Epoch after which the mixture is re-seeded from k-means of the encoder
    /// means; negative disables it.
    int warm_start_epoch = -1;
    bool train_autoencoder = true;  // psi_x and theta
    bool train_prior = true;        // beta and psi_eps
    int threads = 0;
    std::filesystem::path checkpoint_dir;  // empty: no checkpoints
};

struct TrainHistory {
    std::vector<double> epoch_loss;
    std::vector<LossBreakdown> epoch_terms;
};

/// Places the prior components on k-means clusters of the encoder means:
/// sets the prior head's mean biases to the centroids and its log-variance
/// biases to the per-cluster variances.
inline std::vector<int> warm_start_mixture(MixtureLatentModel& model, std::span<const MgaugExample> data,
                                           std::mt19937_64& rng) {
    const int L = model.latent_dim();
    const int C = model.components();
    std::vector<std::vector<double>> means;
    for (const auto& ex : data) {
        const auto q = model.encode(ex.image, ex.velocity);
        means.emplace_back(q.x.mean.data(), q.x.mean.data() + L);
    }
    const auto km = kmeans(means, C, rng);
    auto bias = model.beta.bias(model.beta.layers() - 1);
    for (int c = 0; c < C; ++c) {
        std::vector<double> var(L, 0.0);
        int count = 0;
        for (std::size_t i = 0; i < means.size(); ++i) {
            if (km.assignment[i] != c) continue;
            for (int k = 0; k < L; ++k) var[k] += (means[i][k] - km.centroids[c][k]) * (means[i][k] - km.centroids[c][k]);
            ++count;
        }
        for (int k = 0; k < L; ++k) {
            bias[2 * L * c + k] = km.centroids[c][k];
            bias[2 * L * c + L + k] = std::log(var[k] / std::max(count, 1) + 1e-4);
        }
    }
    return km.assignment;
}

/// Resumable trainer: the cosine schedule spans `tc.epochs` epochs, which may
/// be consumed over several run_epochs calls (alternating training).
class MgaugTrainer {
public:
    MgaugTrainer(MixtureLatentModel& model, TrainConfig tc) : model_(model), tc_(std::move(tc)), rng_(tc_.seed) {
        if (tc_.epochs < 0 || tc_.batch < 1) throw InputError("epochs must be >= 0 and batch >= 1");
        for (auto* net : model_.networks()) adams_.emplace_back(net->params().size(), AdamConfig{tc_.lr});
    }

    int epoch() const { return epoch_; }
    const TrainHistory& history() const { return history_; }

    /// Trains `epochs` more epochs; returns the mean loss of the last one.
    double run_epochs(std::span<const MgaugExample> data, int epochs) {
        if (data.empty()) throw InputError("training set is empty");
        const int threads = resolve_threads(tc_.threads);
        const std::size_t n = data.size();
        const std::size_t batch = std::min<std::size_t>(tc_.batch, n);
        const std::size_t per_epoch = (n + batch - 1) / batch;
        const long total_steps = static_cast<long>(per_epoch) * std::max(tc_.epochs, epoch_ + epochs);

        auto nets = model_.networks();
        const bool trainable[4] = {tc_.train_prior, tc_.train_autoencoder, tc_.train_autoencoder, tc_.train_prior};
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::vector<std::vector<double>> last_good;
        for (auto* net : nets) last_good.push_back(net->params());
        double last = std::numeric_limits<double>::quiet_NaN();
        for (int e = 0; e < epochs; ++e, ++epoch_) {
            if (epoch_ == tc_.warm_start_epoch) warm_start_mixture(model_, data, rng_);
            std::shuffle(order.begin(), order.end(), rng_);
            LossBreakdown acc;
            for (std::size_t s = 0; s < per_epoch; ++s) {
                const std::size_t lo = s * batch;
                const std::size_t hi = std::min(n, lo + batch);
                std::vector<MgaugExample> mb;
                for (std::size_t i = lo; i < hi; ++i) mb.push_back(data[order[i]]);
                const auto noise = draw_noise(model_, mb.size(), rng_);
                ModelGradient g;
                LossBreakdown lb;
                try {
                    lb = mgaug_loss(model_, mb, noise, g, threads);
                } catch (const std::runtime_error& err) {
                    for (std::size_t k = 0; k < nets.size(); ++k) nets[k]->params() = last_good[k];
                    throw TrainingError("training diverged at epoch " + std::to_string(epoch_) + ", batch " +
                                        std::to_string(s) + ": " + err.what());
                }
                if (!std::isfinite(lb.total)) {
                    for (std::size_t k = 0; k < nets.size(); ++k) nets[k]->params() = last_good[k];
                    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch_) + ", batch " +
                                        std::to_string(s));
                }
                const double lr = cosine_lr(tc_.lr, step_++, total_steps);
                std::vector<double>* grads[4] = {&g.beta, &g.theta, &g.psi_x, &g.psi_eps};
                for (std::size_t k = 0; k < nets.size(); ++k) {
                    if (trainable[k]) adams_[k].step(nets[k]->params(), *grads[k], lr);
                }
                const double f = static_cast<double>(hi - lo) / static_cast<double>(n);
                acc.data += f * lb.data;
                acc.kl_x += f * lb.kl_x;
                acc.kl_eps += f * lb.kl_eps;
                acc.kl_z += f * lb.kl_z;
                acc.smooth += f * lb.smooth;
                acc.decay += f * lb.decay;
                acc.total += f * lb.total;
            }
            for (std::size_t k = 0; k < nets.size(); ++k) last_good[k] = nets[k]->params();
            history_.epoch_loss.push_back(acc.total);
            history_.epoch_terms.push_back(acc);
            last = acc.total;
            if (!tc_.checkpoint_dir.empty()) save_checkpoint(model_, tc_.checkpoint_dir);
        }
        return last;
    }

private:
    MixtureLatentModel& model_;
    TrainConfig tc_;
    std::mt19937_64 rng_;
    std::vector<Adam> adams_;
    TrainHistory history_;
    long step_ = 0;
    int epoch_ = 0;
};

inline TrainHistory train_mgaug(MixtureLatentModel& model, std::span<const MgaugExample> data,
                                const TrainConfig& tc) {
    if (data.empty()) throw InputError("training set is empty");
    MgaugTrainer trainer(model, tc);
    trainer.run_epochs(data, tc.epochs);
    return trainer.history();
}

/// Argmax responsibilities at the posterior means.
inline std::vector<int> assign_components(const MixtureLatentModel& model, std::span<const MgaugExample> data) {
    std::vector<int> out;
    for (const auto& ex : data) {
        const auto q = model.encode(ex.image, ex.velocity);
        const auto r = model.responsibilities(q.x.mean, q.eps.mean);
        out.push_back(static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin()));
    }
    return out;
}

}  // namespace mgaug
