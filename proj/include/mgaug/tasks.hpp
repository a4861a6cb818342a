// Downstream tasks (image classification, per-voxel segmentation), their
// losses and metrics, and the alternating joint training loop.
#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <vector>

#include "mgaug/augment.hpp"
#include "mgaug/nn.hpp"

namespace mgaug {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class TaskKind { classification, segmentation };

inline const char* task_name(TaskKind k) { return k == TaskKind::classification ? "classification" : "segmentation"; }

struct TaskConfig {
    TaskKind kind = TaskKind::classification;
    int epochs = 200;
    int batch = 16;  // images per step
    double lr = 1e-3;
    std::uint64_t seed = 0;
    double gamma = 1.0;
    double tau = 1.0;
    double weight_decay = 1e-5;
    int hidden = 128;
    int patch = 5;  // segmentation patch side (odd)
    int threads = 0;

    void validate() const {
        if (epochs < 0 || batch < 1) throw ConfigError("task epochs must be >= 0 and batch >= 1");
        if (!(lr > 0.0)) throw ConfigError("task learning rate must be positive");
        if (hidden < 1) throw ConfigError("task hidden width must be positive");
        if (patch < 1 || patch % 2 == 0) throw ConfigError("segmentation patch side must be odd");
        if (gamma < 0.0 || tau < 0.0 || weight_decay < 0.0) throw ConfigError("loss weights must be non-negative");
    }
};

/// Column-wise softmax.
inline Matrix softmax(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        const double m = logits.col(j).maxCoeff();
        p.col(j) = (logits.col(j).array() - m).exp().matrix();
        p.col(j) /= p.col(j).sum();
    }
    return p;
}

/// Classifier: MLP over the flattened image; segmenter: the same MLP family
/// applied per voxel to a clamped patch plus normalized voxel coordinates.
class TaskModel {
public:
    TaskModel(TaskKind kind, Grid grid, int outputs, const TaskConfig& cfg)
        : kind_(kind), grid_(std::move(grid)), outputs_(outputs), patch_(cfg.patch), net_(make_net(cfg)) {
        if (outputs < 2) throw ConfigError("a task needs at least two classes or labels");
    }

    TaskKind kind() const { return kind_; }
    const Grid& grid() const { return grid_; }
    int outputs() const { return outputs_; }
    int input_dim() const {
        return kind_ == TaskKind::classification ? static_cast<int>(grid_.size()) : patch_volume() + grid_.axes();
    }
    Mlp& net() { return net_; }
    const Mlp& net() const { return net_; }

    /// One column per image (classification) or per voxel (segmentation).
    Matrix features(const ScalarField& image) const {
        require_same_grid(grid_, image.grid(), "task features");
        if (kind_ == TaskKind::classification) {
            return Eigen::Map<const Vector>(image.values().data(), static_cast<Eigen::Index>(image.size()));
        }
        const int d = grid_.axes();
        const int h = patch_ / 2;
        Matrix f(input_dim(), static_cast<Eigen::Index>(grid_.size()));
        for (std::size_t x = 0; x < grid_.size(); ++x) {
            const auto c = grid_.coords(x);
            Eigen::Index row = 0;
            std::array<int, kMaxAxes> q{0, 0, 0};
            const int span = d == 3 ? patch_ : 1;
            for (int dz = 0; dz < span; ++dz)
                for (int dy = -h; dy <= h; ++dy)
                    for (int dx = -h; dx <= h; ++dx) {
                        const int off[3] = {dz - (span / 2), dy, dx};
                        for (int a = 0; a < d; ++a) {
                            const int o = d == 3 ? off[a] : off[a + 1];
                            q[a] = std::clamp(c[a] + o, 0, grid_.dim(a) - 1);
                        }
                        f(row++, static_cast<Eigen::Index>(x)) = image[grid_.index(q)];
                    }
            for (int a = 0; a < d; ++a) {
                f(row++, static_cast<Eigen::Index>(x)) = 2.0 * c[a] / (grid_.dim(a) - 1) - 1.0;
            }
        }
        return f;
    }

    Matrix predict(const ScalarField& image) const { return softmax(net_.forward(features(image))); }

    int classify(const ScalarField& image) const {
        Eigen::Index k;
        predict(image).col(0).maxCoeff(&k);
        return static_cast<int>(k);
    }

    LabelMap segment(const ScalarField& image) const { return hard_labels(predict(image), grid_); }

    static LabelMap hard_labels(const Matrix& probs, const Grid& g) {
        LabelMap m(g);
        for (Eigen::Index j = 0; j < probs.cols(); ++j) {
            Eigen::Index k;
            probs.col(j).maxCoeff(&k);
            m.labels[static_cast<std::size_t>(j)] = static_cast<int>(k);
        }
        return m;
    }

private:
    int patch_volume() const {
        int v = patch_ * patch_;
        if (grid_.axes() == 3) v *= patch_;
        return v;
    }

    Mlp make_net(const TaskConfig& cfg) const {
        std::mt19937_64 rng(mix_seed(cfg.seed, 0x7a5c));
        const int hidden = kind_ == TaskKind::classification ? cfg.hidden : std::min(cfg.hidden, 64);
        return Mlp({input_dim(), hidden, hidden, outputs_}, rng);
    }

    TaskKind kind_;
    Grid grid_;
    int outputs_;
    int patch_;
    Mlp net_;
};

// ---------------------------------------------------------------------------
// Losses.

inline constexpr double kProbFloor = 1e-12;

/// gamma * sum_n sum_k -onehot * log(max(p, 1e-12)) + decay * ||W||^2.
inline double clf_loss(const Matrix& probs, std::span<const int> labels, double gamma, double weight_sq,
                       double decay = 1e-5) {
    if (static_cast<std::size_t>(probs.cols()) != labels.size()) throw DimensionError("clf_loss: label count mismatch");
    double ce = 0.0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        ce -= std::log(std::max(probs(labels[n], static_cast<Eigen::Index>(n)), kProbFloor));
    }
    return gamma * ce + decay * weight_sq;
}

struct SegLossTerms {
    std::vector<double> dice;  // per label
    std::vector<double> ce;    // per label, mean over voxels
    double total = 0.0;
};

/// tau * sum_q [1 - Dice(S_q, R_q) + CE_q] + decay * ||W||^2 for one image.
/// Dice uses the hard prediction; CE_q = -mean_x [gt(x) = q] log p_q(x).
inline SegLossTerms seg_loss(const Matrix& probs, const LabelMap& hard, const LabelMap& gt, double tau,
                             double weight_sq, double decay = 1e-5) {
    const auto Q = static_cast<int>(probs.rows());
    if (static_cast<std::size_t>(probs.cols()) != gt.labels.size() || hard.labels.size() != gt.labels.size()) {
        throw DimensionError("seg_loss: voxel count mismatch");
    }
    SegLossTerms t;
    t.dice.assign(Q, 0.0);
    t.ce.assign(Q, 0.0);
    const double V = static_cast<double>(gt.labels.size());
    for (int q = 0; q < Q; ++q) t.dice[q] = dice(hard, gt, q);
    for (std::size_t x = 0; x < gt.labels.size(); ++x) {
        const int q = gt.labels[x];
        if (q < 0 || q >= Q) throw InputError("seg_loss: ground-truth label outside the prediction range");
        t.ce[q] -= std::log(std::max(probs(q, static_cast<Eigen::Index>(x)), kProbFloor)) / V;
    }
    double s = 0.0;
    for (int q = 0; q < Q; ++q) s += 1.0 - t.dice[q] + t.ce[q];
    t.total = tau * s + decay * weight_sq;
    return t;
}

// ---------------------------------------------------------------------------
// Metrics.

struct ClassificationMetrics {
    std::vector<std::vector<int>> confusion;  // [truth][prediction]
    double accuracy = 0.0;
    double precision = 0.0;  // macro
    double recall = 0.0;     // macro
    double f1 = 0.0;         // macro

    double score() const { return accuracy; }
};

/// Macro averages over classes; a class with no predictions (or no members)
/// contributes precision (recall) 0, and F1 0 when precision + recall is 0.
inline ClassificationMetrics classification_metrics(std::vector<std::vector<int>> confusion) {
    ClassificationMetrics m;
    const std::size_t K = confusion.size();
    long total = 0, correct = 0;
    for (std::size_t t = 0; t < K; ++t) {
        for (std::size_t p = 0; p < K; ++p) total += confusion[t][p];
        correct += confusion[t][t];
    }
    for (std::size_t k = 0; k < K; ++k) {
        long pred = 0, truth = 0;
        for (std::size_t j = 0; j < K; ++j) {
            pred += confusion[j][k];
            truth += confusion[k][j];
        }
        const double p = pred ? static_cast<double>(confusion[k][k]) / pred : 0.0;
        const double r = truth ? static_cast<double>(confusion[k][k]) / truth : 0.0;
        m.precision += p / K;
        m.recall += r / K;
        m.f1 += (p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0) / K;
    }
    m.accuracy = total ? static_cast<double>(correct) / total : 0.0;
    m.confusion = std::move(confusion);
    return m;
}

inline ClassificationMetrics classification_metrics(std::span<const int> truth, std::span<const int> pred, int K) {
    std::vector<std::vector<int>> c(K, std::vector<int>(K, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) ++c[truth[i]][pred[i]];
    return classification_metrics(std::move(c));
}

struct SegmentationMetrics {
    std::vector<double> dice;  // per label, mean over images
    double mean_foreground_dice = 0.0;

    double score() const { return mean_foreground_dice; }
};

struct TaskMetrics {
    TaskKind kind = TaskKind::classification;
    ClassificationMetrics clf;
    SegmentationMetrics seg;

    double score() const { return kind == TaskKind::classification ? clf.score() : seg.score(); }
};

inline int label_count(const LabeledImageSet& set) {
    int q = 0;
    for (const auto& m : set.label_maps)
        for (int l : m.labels) q = std::max(q, l + 1);
    return q;
}

inline TaskMetrics evaluate_task(const TaskModel& model, const LabeledImageSet& set) {
    TaskMetrics out;
    out.kind = model.kind();
    if (model.kind() == TaskKind::classification) {
        std::vector<int> pred;
        for (const auto& img : set.images) pred.push_back(model.classify(img));
        out.clf = classification_metrics(set.labels, pred, model.outputs());
        return out;
    }
    if (!set.has_label_maps()) throw ConfigError("segmentation needs label maps");
    const int Q = model.outputs();
    out.seg.dice.assign(Q, 0.0);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto hard = model.segment(set.images[i]);
        for (int q = 0; q < Q; ++q) out.seg.dice[q] += dice(hard, set.label_maps[i], q) / set.size();
    }
    for (int q = 1; q < Q; ++q) out.seg.mean_foreground_dice += out.seg.dice[q] / (Q - 1);
    return out;
}

// ---------------------------------------------------------------------------
// Training.

struct TaskEpoch {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;  // mean per-image objective over the epoch
    double val_score = 0.0;
};

/// Adam with a per-epoch cosine schedule over `cfg.epochs`; keeps the
/// parameters of the best validation epoch. Resumable across calls.
class TaskTrainer {
public:
    TaskTrainer(TaskModel& model, TaskConfig cfg)
        : model_(model), cfg_(std::move(cfg)), rng_(mix_seed(cfg_.seed, 0x7a5d)),
          adam_(model.net().params().size(), AdamConfig{cfg_.lr}), best_(model.net().params()) {
        cfg_.validate();
    }

    const std::vector<TaskEpoch>& history() const { return history_; }
    double best_score() const { return best_score_; }
    int epoch() const { return epoch_; }
    void restore_best() { model_.net().params() = best_; }

    /// Gradient of the per-image training objective for one image batch:
    /// gamma (tau) times mean cross-entropy, plus weight decay.
    double batch_objective(const LabeledImageSet& set, std::span<const std::size_t> idx, std::vector<double>& grad) const {
        const Mlp& net = model_.net();
        grad.assign(net.params().size(), 0.0);
        Matrix x;
        std::vector<int> y;
        double weight = 0.0;
        if (model_.kind() == TaskKind::classification) {
            x.resize(model_.input_dim(), static_cast<Eigen::Index>(idx.size()));
            for (std::size_t j = 0; j < idx.size(); ++j) {
                x.col(static_cast<Eigen::Index>(j)) = model_.features(set.images[idx[j]]);
                y.push_back(set.labels[idx[j]]);
            }
            weight = cfg_.gamma / static_cast<double>(idx.size());
        } else {
            const auto V = static_cast<Eigen::Index>(model_.grid().size());
            x.resize(model_.input_dim(), V * static_cast<Eigen::Index>(idx.size()));
            for (std::size_t j = 0; j < idx.size(); ++j) {
                x.middleCols(static_cast<Eigen::Index>(j) * V, V) = model_.features(set.images[idx[j]]);
                const auto& l = set.label_maps[idx[j]].labels;
                y.insert(y.end(), l.begin(), l.end());
            }
            weight = cfg_.tau / static_cast<double>(V * static_cast<Eigen::Index>(idx.size()));
        }
        Mlp::Cache cache;
        const Matrix p = softmax(net.forward(x, &cache));
        Matrix dlogits = p;
        double ce = 0.0;
        for (std::size_t n = 0; n < y.size(); ++n) {
            const auto col = static_cast<Eigen::Index>(n);
            if (y[n] < 0 || y[n] >= model_.outputs()) throw InputError("task label outside the output range");
            ce -= std::log(std::max(p(y[n], col), kProbFloor));
            dlogits(y[n], col) -= 1.0;
        }
        dlogits *= weight;
        net.backward(cache, dlogits, grad);
        net.add_weight_decay_grad(cfg_.weight_decay, grad);
        // per-image objective: batch mean of the data term (clf) or of the
        // per-image voxel mean (seg)
        return weight * ce + cfg_.weight_decay * net.weight_sq_norm();
    }

    /// Runs `epochs` more epochs on the train set, selecting on `val`.
    void run_epochs(const LabeledImageSet& train, const LabeledImageSet& val, int epochs) {
        if (train.size() == 0) throw ConfigError("the training split is empty");
        if (val.size() == 0) throw ConfigError("the validation split is empty");
        if (model_.kind() == TaskKind::segmentation && (!train.has_label_maps() || !val.has_label_maps())) {
            throw ConfigError("segmentation needs label maps");
        }
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        const std::size_t batch = std::min<std::size_t>(cfg_.batch, train.size());
        for (int e = 0; e < epochs; ++e, ++epoch_) {
            const double lr = cosine_lr(cfg_.lr, epoch_, std::max(cfg_.epochs, epoch_ + 1));
            std::shuffle(order.begin(), order.end(), rng_);
            TaskEpoch rec{epoch_, lr, 0.0, 0.0};
            std::vector<double> grad;
            for (std::size_t lo = 0; lo < order.size(); lo += batch) {
                const std::size_t hi = std::min(order.size(), lo + batch);
                const double obj = batch_objective(train, std::span(order).subspan(lo, hi - lo), grad);
                if (!std::isfinite(obj)) {
                    model_.net().params() = best_;
                    throw TrainingError("task loss is not finite at epoch " + std::to_string(epoch_));
                }
                rec.train_loss += obj * static_cast<double>(hi - lo) / static_cast<double>(order.size());
                adam_.step(model_.net().params(), grad, lr);
            }
            rec.val_score = evaluate_task(model_, val).score();
            if (rec.val_score > best_score_) {
                best_score_ = rec.val_score;
                best_ = model_.net().params();
            }
            history_.push_back(rec);
        }
    }

private:
    TaskModel& model_;
    TaskConfig cfg_;
    std::mt19937_64 rng_;
    Adam adam_;
    std::vector<double> best_;
    double best_score_ = -std::numeric_limits<double>::infinity();
    std::vector<TaskEpoch> history_;
    int epoch_ = 0;
};

struct TaskResult {
    std::vector<TaskEpoch> history;
    double best_val = 0.0;
    TaskMetrics test;
};

inline TaskModel make_task_model(const LabeledImageSet& set, const TaskConfig& cfg) {
    if (set.size() == 0) throw ConfigError("dataset is empty");
    const int outputs = cfg.kind == TaskKind::classification ? set.num_classes : std::max(2, label_count(set));
    return TaskModel(cfg.kind, set.images.front().grid(), outputs, cfg);
}

/// Trains on the train split, selects on val, reports on test.
inline TaskResult train_task(const LabeledImageSet& dataset, TaskModel& model, const TaskConfig& cfg) {
    const auto train = dataset.split(Split::train);
    const auto val = dataset.split(Split::val);
    const auto test = dataset.split(Split::test);
    if (test.size() == 0) throw ConfigError("the test split is empty");
    TaskTrainer trainer(model, cfg);
    trainer.run_epochs(train, val, cfg.epochs);
    trainer.restore_best();
    return {trainer.history(), trainer.best_score(), evaluate_task(model, test)};
}

/// Directory with manifest.txt (architecture) and params.mgt (flat f64).
inline void save_task_model(const TaskModel& model, const TaskConfig& cfg, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream m(dir / "manifest.txt");
    m << "# mgaug task model\nkind " << task_name(model.kind()) << "\noutputs " << model.outputs() << "\nhidden "
      << cfg.hidden << "\npatch " << cfg.patch << "\ndims";
    for (int d : model.grid().dims()) m << ' ' << d;
    m << '\n';
    const auto& p = model.net().params();
    save_mgt(dir / "params.mgt", Tensor{DType::f64, {static_cast<std::uint32_t>(p.size())}, p});
    if (!m) throw std::runtime_error("could not write task model in " + dir.string());
}

inline TaskModel load_task_model(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.txt");
    if (!in) throw InputError("missing task model manifest: " + (dir / "manifest.txt").string());
    TaskConfig cfg;
    int outputs = 0;
    std::vector<int> dims;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string k;
        ls >> k;
        if (k == "kind") {
            std::string v;
            ls >> v;
            if (v != "classification" && v != "segmentation") throw FormatError("task model: unknown kind " + v);
            cfg.kind = v == "classification" ? TaskKind::classification : TaskKind::segmentation;
        } else if (k == "outputs") {
            ls >> outputs;
        } else if (k == "hidden") {
            ls >> cfg.hidden;
        } else if (k == "patch") {
            ls >> cfg.patch;
        } else if (k == "dims") {
            for (int d; ls >> d;) dims.push_back(d);
        } else {
            throw FormatError("task model manifest: unknown entry " + k);
        }
    }
    TaskModel model(cfg.kind, Grid(dims), outputs, cfg);
    const Tensor t = load_mgt(dir / "params.mgt");
    if (t.data.size() != model.net().params().size()) {
        throw FormatError("task model: expected " + std::to_string(model.net().params().size()) + " parameters, found " +
                          std::to_string(t.data.size()));
    }
    model.net().params() = t.data;
    return model;
}

// ---------------------------------------------------------------------------
// Joint training.

struct JointConfig {
    int r = 5;  // epochs of each trainer per outer round
    double eps = 1e-3;
    int max_rounds = 10;
    bool augment = true;  // false: pass-through, no augmented samples
    AugmentRequest augmentation;  // model pointer is filled in by joint_train
    TrainConfig mgaug;
    TaskConfig task;

    void validate() const {
        if (r < 1) throw ConfigError("inner iteration count r must be >= 1");
        if (!(eps > 0.0)) throw ConfigError("convergence epsilon must be positive");
        if (max_rounds < 1) throw ConfigError("max_rounds must be >= 1");
    }
};

struct JointRound {
    int round = 0;
    double mgaug_loss = 0.0;
    double task_loss = 0.0;
    double total = 0.0;
    double val_score = 0.0;
    std::size_t train_size = 0;
};

struct JointResult {
    std::vector<JointRound> rounds;
    std::vector<TaskEpoch> task_history;
    double best_val = 0.0;
    TaskMetrics test;
};

/// Alternates r MGAug epochs, regeneration of the augmented set (replacing,
/// never accumulating), and r task epochs on originals + augmented samples,
/// until the total loss changes by less than eps or max_rounds is reached.
/// Ground-truth samples are never modified.
inline JointResult joint_train(const LabeledImageSet& dataset, std::span<const MgaugExample> mgaug_data,
                               MixtureLatentModel& mgaug_model, TaskModel& task_model, const JointConfig& jc) {
    jc.validate();
    auto train = dataset.split(Split::train);
    const auto val = dataset.split(Split::val);
    const auto test = dataset.split(Split::test);
    if (test.size() == 0) throw ConfigError("the test split is empty");
    if (task_model.kind() == TaskKind::classification) {
        train.label_maps.clear();  // classification ignores segmentations
    } else if (jc.augment && jc.augmentation.template_maps.empty()) {
        throw ConfigError("joint segmentation needs template label maps");
    }
    MgaugTrainer mgaug_trainer(mgaug_model, jc.mgaug);
    TaskTrainer task_trainer(task_model, jc.task);
    AugmentRequest req = jc.augmentation;
    req.model = &mgaug_model;
    JointResult out;
    double previous = 0.0;  // the first round's change is measured from zero
    for (int round = 0; round < jc.max_rounds; ++round) {
        JointRound rec;
        rec.round = round;
        rec.mgaug_loss = mgaug_trainer.run_epochs(mgaug_data, jc.r);
        LabeledImageSet mixed = train;
        if (jc.augment) {
            req.seed = mix_seed(jc.augmentation.seed, static_cast<std::uint64_t>(round));
            mixed = augment_dataset(req, train);
        }
        rec.train_size = mixed.size();
        task_trainer.run_epochs(mixed, val, jc.r);
        rec.task_loss = task_trainer.history().back().train_loss;
        rec.val_score = task_trainer.history().back().val_score;
        rec.total = rec.mgaug_loss + rec.task_loss;
        out.rounds.push_back(rec);
        if (std::abs(rec.total - previous) < jc.eps) break;
        previous = rec.total;
    }
    task_trainer.restore_best();
    out.task_history = task_trainer.history();
    out.best_val = task_trainer.best_score();
    out.test = evaluate_task(task_model, test);
    return out;
}

// ---------------------------------------------------------------------------
// Statistics.

struct PairedTTest {
    double mean_diff = 0.0;
    double t = 0.0;
    int df = 0;
    double p_two_sided = 1.0;
    double p_greater = 1.0;  // H1: mean(a - b) > 0
};

inline PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw InputError("paired t-test needs two equal samples of size >= 2");
    const double n = static_cast<double>(a.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += (a[i] - b[i]) / n;
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
    PairedTTest r;
    r.mean_diff = mean;
    r.df = static_cast<int>(a.size()) - 1;
    const double se = std::sqrt(ss / (n - 1.0) / n);
    if (se == 0.0) {
        r.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
        r.p_two_sided = mean == 0.0 ? 1.0 : 0.0;
        r.p_greater = mean > 0.0 ? 0.0 : 1.0;
        return r;
    }
    r.t = mean / se;
    const boost::math::students_t dist(r.df);
    r.p_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
    r.p_greater = boost::math::cdf(boost::math::complement(dist, r.t));
    return r;
}

}  // namespace mgaug
