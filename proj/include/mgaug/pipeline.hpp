// Glue between on-disk artifacts and the modules: template and velocity
// directories, config-to-struct translation, and CSV/summary writers.
#pragma once

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mgaug/config.hpp"
#include "mgaug/registration.hpp"
#include "mgaug/tasks.hpp"

namespace mgaug {

struct TemplateSet {
    std::vector<ScalarField> images;  // indexed by class id
    std::vector<LabelMap> label_maps;  // empty or one per class
    std::vector<std::string> names;
};

/// templates.csv: class,name,file,labelmap
inline void save_templates(const TemplateSet& t, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream csv(dir / "templates.csv");
    csv << "class,name,file,labelmap\n";
    for (std::size_t k = 0; k < t.images.size(); ++k) {
        const std::string file = "template_" + std::to_string(k) + ".mgt";
        save_mgt(dir / file, to_tensor(t.images[k], DType::f64));
        std::string map;
        if (!t.label_maps.empty()) {
            map = "labels_" + std::to_string(k) + ".mgt";
            save_mgt(dir / map, to_tensor(t.label_maps[k]));
        }
        csv << k << ',' << (k < t.names.size() ? t.names[k] : "class" + std::to_string(k)) << ',' << file << ','
            << map << '\n';
    }
    if (!csv) throw std::runtime_error("could not write " + (dir / "templates.csv").string());
}

inline TemplateSet load_templates(const std::filesystem::path& dir) {
    std::ifstream csv(dir / "templates.csv");
    if (!csv) throw InputError("missing template manifest: " + (dir / "templates.csv").string());
    std::string line;
    std::getline(csv, line);
    TemplateSet t;
    bool maps = true;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 4) throw FormatError("templates.csv row has " + std::to_string(cells.size()) + " cells");
        if (std::stoul(cells[0]) != t.images.size()) throw FormatError("templates.csv rows must be in class order");
        t.names.push_back(cells[1]);
        t.images.push_back(to_scalar_field(load_mgt(dir / cells[2])));
        if (cells[3].empty()) {
            maps = false;
        } else {
            t.label_maps.push_back(to_label_map(load_mgt(dir / cells[3])));
        }
    }
    if (t.images.empty()) throw FormatError("no templates in " + dir.string());
    if (!maps) t.label_maps.clear();
    return t;
}

inline std::string velocity_file(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "vel_%05zu.mgt", i);
    return buf;
}

inline void save_velocities(const std::vector<VectorField>& v, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < v.size(); ++i) save_mgt(dir / velocity_file(i), to_tensor(v[i], DType::f64));
}

inline std::vector<VectorField> load_velocities(const std::filesystem::path& dir, std::size_t count) {
    std::vector<VectorField> v;
    for (std::size_t i = 0; i < count; ++i) {
        const auto p = dir / velocity_file(i);
        if (!std::filesystem::exists(p)) throw InputError("missing velocity for image " + std::to_string(i) + ": " + p.string());
        v.push_back(to_vector_field(load_mgt(p)));
    }
    return v;
}

/// MGAug training examples for the images of `split` (all images when null).
inline std::vector<MgaugExample> make_examples(const LabeledImageSet& set, const std::vector<VectorField>& v0,
                                               const TemplateSet& templates, const Split* split = nullptr) {
    std::vector<MgaugExample> out;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (split && set.splits[i] != *split) continue;
        out.push_back({set.images[i], v0[i], templates.images.at(set.labels[i]), set.labels[i], -1});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Config translation.

inline SyntheticSpec synthetic_spec(const RunConfig& c) {
    SyntheticSpec s;
    s.classes.clear();
    std::istringstream in(c.text("classes"));
    for (std::string name; std::getline(in, name, ',');) {
        if (name == "disk") s.classes.push_back(Shape::disk);
        else if (name == "cross") s.classes.push_back(Shape::cross);
        else if (name == "ring") s.classes.push_back(Shape::ring);
        else if (name == "bar") s.classes.push_back(Shape::bar);
        else throw UsageError("classes: unknown shape '" + name + "'");
    }
    s.modes = c.int_value("modes");
    s.mode_params = SyntheticSpec::default_modes(s.modes, c.real("mode_separation"), c.real("mode_std"));
    s.n_per_class = c.int_value("n_per_class");
    s.size = c.int_value("size");
    s.alpha = c.real("alpha");
    s.steps = c.int_value("steps");
    s.seed = c.seed();
    return s;
}

inline ModelConfig model_config(const RunConfig& c) {
    ModelConfig m;
    m.components = c.int_value("C");
    m.latent_dim = c.int_value("latent_dim");
    m.eps_dim = c.int_value("eps_dim");
    m.hidden = c.int_value("hidden");
    m.steps = c.int_value("steps");
    m.alpha = c.real("alpha");
    m.lambda = c.real("lambda");
    m.weight_decay = c.real("weight_decay");
    return m;
}

inline TrainConfig train_config(const RunConfig& c) {
    TrainConfig t;
    t.epochs = c.int_value("epochs");
    t.batch = c.int_value("batch");
    t.lr = c.real("lr");
    t.seed = c.seed();
    t.warm_start_epoch = c.int_value("warm_start");
    t.threads = c.int_value("threads");
    return t;
}

inline TaskConfig task_config(const RunConfig& c) {
    TaskConfig t;
    t.kind = c.text("task") == "classification" ? TaskKind::classification : TaskKind::segmentation;
    t.epochs = c.int_value("task_epochs");
    t.batch = c.int_value("batch");
    t.lr = c.real("task_lr");
    t.seed = c.seed();
    t.gamma = c.real("gamma");
    t.tau = c.real("tau");
    t.weight_decay = c.real("weight_decay");
    t.hidden = c.int_value("task_hidden");
    t.patch = c.int_value("patch");
    t.threads = c.int_value("threads");
    t.validate();
    return t;
}

inline RegistrationOptions registration_options(const RunConfig& c) {
    RegistrationOptions o;
    o.lr = c.real("reg_lr");
    o.max_iterations = c.int_value("reg_iterations");
    o.rel_tol = c.real("reg_tol");
    o.threads = c.int_value("threads");
    return o;
}

inline std::vector<int> component_list(const RunConfig& c) {
    std::vector<int> out;
    std::istringstream in(c.text("components"));
    for (std::string s; std::getline(in, s, ',');) {
        if (s.empty()) continue;
        try {
            out.push_back(std::stoi(s));
        } catch (const std::exception&) {
            throw UsageError("components: '" + s + "' is not an integer");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Writers. Fixed formatting keeps reruns byte-identical.

inline std::string fmt(double x) {
    std::ostringstream os;
    os << std::setprecision(12) << x;
    return os.str();
}

inline void write_task_history(const std::filesystem::path& path, const std::vector<TaskEpoch>& h) {
    std::ofstream os(path);
    os << "epoch,lr,train_loss,val_score\n";
    for (const auto& e : h) os << e.epoch << ',' << fmt(e.lr) << ',' << fmt(e.train_loss) << ',' << fmt(e.val_score) << '\n';
}

inline nlohmann::ordered_json metrics_json(const TaskMetrics& m) {
    nlohmann::ordered_json j;
    j["task"] = task_name(m.kind);
    if (m.kind == TaskKind::classification) {
        j["accuracy"] = m.clf.accuracy;
        j["precision"] = m.clf.precision;
        j["recall"] = m.clf.recall;
        j["f1"] = m.clf.f1;
        j["confusion"] = m.clf.confusion;
    } else {
        j["dice"] = m.seg.dice;
        j["mean_foreground_dice"] = m.seg.mean_foreground_dice;
    }
    return j;
}

inline void write_summary(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
    std::ofstream os(path);
    os << j.dump(2) << '\n';
    if (!os) throw std::runtime_error("could not write " + path.string());
}

}  // namespace mgaug
