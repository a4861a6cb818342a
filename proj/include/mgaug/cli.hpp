// `mgaug` command-line frontend. run_cli is the whole program; exit codes:
// 0 success, 1 usage error, 2 runtime or numerical error.
#pragma once

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <map>

#include "mgaug/pipeline.hpp"

namespace mgaug {

namespace cli {

namespace fs = std::filesystem;

inline void log(const std::string& msg) { std::cerr << "mgaug: " << msg << '\n'; }

inline int cmd_synth(const RunConfig& cfg) {
    const auto out = cfg.path("out");
    const auto spec = synthetic_spec(cfg);
    const auto data = generate_synthetic(spec);
    save_image_set(data.set, out / "data");
    TemplateSet t{data.templates, data.template_maps, {}};
    for (Shape s : spec.classes) t.names.emplace_back(shape_name(s));
    save_templates(t, out / "templates");
    save_velocities(data.v0, out / "truth");
    std::ofstream modes(out / "truth" / "modes.csv");
    modes << "image,class,mode\n";
    for (std::size_t i = 0; i < data.modes.size(); ++i) modes << i << ',' << data.set.labels[i] << ',' << data.modes[i] << '\n';
    if (cfg.flag("png")) {
        fs::create_directories(out / "png");
        for (std::size_t i = 0; i < std::min<std::size_t>(data.set.size(), 16); ++i) {
            export_png(data.set.images[i], out / "png" / ("img_" + std::to_string(i) + ".png"));
        }
    }
    write_record(out, "synth", cfg, {});
    log("wrote " + std::to_string(data.set.size()) + " images to " + (out / "data").string());
    return 0;
}

inline int cmd_register(const RunConfig& cfg) {
    const auto set = load_image_set(cfg.existing("data"));
    const auto templates = load_templates(cfg.existing("templates"));
    const auto out = cfg.path("out");
    const auto opt = registration_options(cfg);
    std::vector<VectorField> v0(set.size());
    std::vector<RegistrationTrace> traces(set.size());
    std::vector<double> min_detjac(set.size());
    for (int k = 0; k < set.num_classes; ++k) {
        RegistrationProblem prob;
        prob.templ = templates.images.at(k);
        prob.sigma = cfg.real("sigma");
        prob.shooting = {cfg.int_value("steps"), cfg.real("alpha")};
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < set.size(); ++i)
            if (set.labels[i] == k) {
                idx.push_back(i);
                prob.targets.push_back(set.images[i]);
            }
        if (idx.empty()) continue;
        const auto res = register_targets(prob, opt);
        for (std::size_t j = 0; j < idx.size(); ++j) {
            v0[idx[j]] = res.v0s[j];
            traces[idx[j]] = res.traces[j];
            min_detjac[idx[j]] = det_jacobian(res.final_maps[j]).min();
        }
    }
    save_velocities(v0, out / "velocities");
    std::ofstream energy(out / "energy.csv");
    energy << "image,iteration,energy,data_term\n";
    std::ofstream summary(out / "registration.csv");
    summary << "image,class,iterations,initial_data,best_data,reduction,min_detjac,diverged\n";
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& tr = traces[i];
        for (std::size_t it = 0; it < tr.energy.size(); ++it) {
            energy << i << ',' << it << ',' << fmt(tr.energy[it]) << ',' << fmt(tr.data_term[it]) << '\n';
        }
        const double d0 = tr.data_term.empty() ? 0.0 : tr.data_term.front();
        const double d1 = tr.data_term.empty() ? 0.0 : tr.data_term[tr.best_iteration];
        summary << i << ',' << set.labels[i] << ',' << tr.energy.size() << ',' << fmt(d0) << ',' << fmt(d1) << ','
                << fmt(d0 > 0 ? 1.0 - d1 / d0 : 0.0) << ',' << fmt(min_detjac[i]) << ',' << tr.diverged << '\n';
    }
    if (cfg.flag("png")) {
        fs::create_directories(out / "png");
        const SpectralOperator op(set.images.front().grid(), cfg.real("alpha"));
        for (std::size_t i = 0; i < std::min<std::size_t>(set.size(), 16); ++i) {
            const auto phi = integrate_flow(shoot(v0[i], op, cfg.int_value("steps")));
            export_detjac_png(det_jacobian(phi), out / "png" / ("detjac_" + std::to_string(i) + ".png"));
        }
    }
    write_record(out, "register", cfg, {"data", "templates"});
    log("registered " + std::to_string(set.size()) + " images");
    return 0;
}

inline int cmd_train_aug(const RunConfig& cfg) {
    const auto set = load_image_set(cfg.existing("data"));
    const auto templates = load_templates(cfg.existing("templates"));
    const auto v0 = load_velocities(cfg.existing("velocities"), set.size());
    const auto out = cfg.path("out");
    const Split train = Split::train, val = Split::val;
    const auto examples = make_examples(set, v0, templates, &train);
    if (examples.empty()) throw UsageError("the training split of --data is empty");
    MixtureLatentModel model(set.images.front().grid(), model_config(cfg), cfg.seed());
    auto tc = train_config(cfg);
    tc.checkpoint_dir = out / "model";
    const auto hist = train_mgaug(model, examples, tc);
    save_checkpoint(model, out / "model");
    std::ofstream log_csv(out / "train_log.csv");
    log_csv << "epoch,total,data,kl_x,kl_eps,kl_z,smooth,decay\n";
    for (std::size_t e = 0; e < hist.epoch_terms.size(); ++e) {
        const auto& t = hist.epoch_terms[e];
        log_csv << e << ',' << fmt(t.total) << ',' << fmt(t.data) << ',' << fmt(t.kl_x) << ',' << fmt(t.kl_eps) << ','
                << fmt(t.kl_z) << ',' << fmt(t.smooth) << ',' << fmt(t.decay) << '\n';
    }
    const auto all = make_examples(set, v0, templates);
    const auto comp = assign_components(model, all);
    std::ofstream comp_csv(out / "components.csv");
    comp_csv << "image,class,split,component\n";
    for (std::size_t i = 0; i < comp.size(); ++i) {
        comp_csv << i << ',' << set.labels[i] << ',' << split_name(set.splits[i]) << ',' << comp[i] << '\n';
    }
    nlohmann::ordered_json j;
    j["final_loss"] = hist.epoch_loss.empty() ? 0.0 : hist.epoch_loss.back();
    const auto held_out = make_examples(set, v0, templates, &val);
    if (!held_out.empty()) {
        std::mt19937_64 rng(mix_seed(cfg.seed(), 0xe1b0));
        j["val_elbo"] = elbo(model, held_out, 4, rng, resolve_threads(cfg.int_value("threads"))).total;
    }
    write_summary(out / "summary.json", j);
    write_record(out, "train-aug", cfg, {"data", "templates", "velocities"});
    log("trained MGAug for " + std::to_string(hist.epoch_loss.size()) + " epochs");
    return 0;
}

inline int cmd_sample(const RunConfig& cfg) {
    const auto model = load_checkpoint(cfg.existing("model"));
    const auto templates = load_templates(cfg.existing("templates"));
    const auto out = cfg.path("out");
    LabeledImageSet original;
    if (!cfg.text("data").empty()) {
        original = load_image_set(cfg.existing("data")).split(Split::train);
    } else {
        // one stand-in original per template: multiplier counts per class
        original.num_classes = static_cast<int>(templates.images.size());
        for (std::size_t k = 0; k < templates.images.size(); ++k) {
            original.push_back(templates.images[k], static_cast<int>(k), Split::train);
        }
    }
    AugmentRequest req;
    req.model = &model;
    req.templates = templates.images;
    req.template_maps = templates.label_maps;
    req.multiplier = cfg.real("multiplier");
    req.seed = cfg.seed();
    req.component_filter = component_list(cfg);
    req.max_step_displacement = cfg.real("max_step");
    req.add_noise = cfg.flag("noise");
    req.threads = cfg.int_value("threads");
    const auto samples = generate_augmented(req, original);
    LabeledImageSet aug;
    aug.num_classes = std::max(original.num_classes, static_cast<int>(templates.images.size()));
    for (const auto& s : samples) {
        aug.push_back(s.image, s.class_label, Split::train, {true, s.component, s.templ}, s.seg);
    }
    save_image_set(aug, out / "aug");
    std::ofstream csv(out / "samples.csv");
    csv << "filename,class,component,min_detjac\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%05zu.mgt", i);
        csv << name << ',' << samples[i].class_label << ',' << samples[i].component << ',' << fmt(samples[i].min_detjac)
            << '\n';
    }
    if (cfg.flag("png")) {
        fs::create_directories(out / "png");
        for (std::size_t i = 0; i < std::min<std::size_t>(samples.size(), 16); ++i) {
            export_png(samples[i].image, out / "png" / ("aug_" + std::to_string(i) + ".png"));
        }
    }
    write_record(out, "sample", cfg, {"model", "templates", "data"});
    log("sampled " + std::to_string(samples.size()) + " augmented images");
    return 0;
}

inline LabeledImageSet training_set(const RunConfig& cfg) {
    auto set = load_image_set(cfg.existing("data"));
    if (!cfg.text("aug").empty()) {
        const auto aug = load_image_set(cfg.existing("aug"));
        const bool maps = set.has_label_maps() && aug.has_label_maps();
        if (!maps) set.label_maps.clear();
        for (std::size_t i = 0; i < aug.size(); ++i) {
            set.push_back(aug.images[i], aug.labels[i], Split::train, aug.provenance[i],
                          maps ? aug.label_maps[i] : LabelMap{});
        }
        set.num_classes = std::max(set.num_classes, aug.num_classes);
    }
    return set;
}

inline int cmd_train_task(const RunConfig& cfg) {
    const auto set = training_set(cfg);
    const auto out = cfg.path("out");
    const auto tc = task_config(cfg);
    auto model = make_task_model(set, tc);
    const auto res = train_task(set, model, tc);
    fs::create_directories(out);
    write_task_history(out / "metrics.csv", res.history);
    auto j = metrics_json(res.test);
    j["best_val"] = res.best_val;
    write_summary(out / "summary.json", j);
    save_task_model(model, tc, out / "task_model");
    write_record(out, "train-task", cfg, {"data", "aug"});
    log("test score " + fmt(res.test.score()));
    return 0;
}

inline int cmd_joint(const RunConfig& cfg) {
    const auto set = load_image_set(cfg.existing("data"));
    const auto templates = load_templates(cfg.existing("templates"));
    const auto v0 = load_velocities(cfg.existing("velocities"), set.size());
    const auto out = cfg.path("out");
    const Split train = Split::train;
    const auto examples = make_examples(set, v0, templates, &train);
    MixtureLatentModel model = cfg.text("model").empty()
                                   ? MixtureLatentModel(set.images.front().grid(), model_config(cfg), cfg.seed())
                                   : load_checkpoint(cfg.existing("model"));
    JointConfig jc;
    jc.r = cfg.int_value("r");
    jc.eps = cfg.real("joint_eps");
    jc.max_rounds = cfg.int_value("max_rounds");
    jc.mgaug = train_config(cfg);
    jc.mgaug.epochs = jc.r * jc.max_rounds;
    jc.mgaug.checkpoint_dir = out / "model";
    jc.task = task_config(cfg);
    jc.task.epochs = jc.r * jc.max_rounds;
    jc.augmentation.templates = templates.images;
    jc.augmentation.template_maps = templates.label_maps;
    jc.augmentation.multiplier = cfg.real("multiplier");
    jc.augmentation.seed = cfg.seed();
    jc.augmentation.component_filter = component_list(cfg);
    jc.augmentation.max_step_displacement = cfg.real("max_step");
    jc.augmentation.add_noise = cfg.flag("noise");
    jc.augmentation.threads = cfg.int_value("threads");
    auto task = make_task_model(set, jc.task);
    const auto res = joint_train(set, examples, model, task, jc);
    fs::create_directories(out);
    std::ofstream rounds(out / "joint.csv");
    rounds << "round,mgaug_loss,task_loss,total,val_score,train_size\n";
    for (const auto& r : res.rounds) {
        rounds << r.round << ',' << fmt(r.mgaug_loss) << ',' << fmt(r.task_loss) << ',' << fmt(r.total) << ','
               << fmt(r.val_score) << ',' << r.train_size << '\n';
    }
    write_task_history(out / "metrics.csv", res.task_history);
    auto j = metrics_json(res.test);
    j["best_val"] = res.best_val;
    j["rounds"] = res.rounds.size();
    write_summary(out / "summary.json", j);
    save_checkpoint(model, out / "model");
    save_task_model(task, jc.task, out / "task_model");
    write_record(out, "joint", cfg, {"data", "templates", "velocities", "model"});
    log("joint training finished after " + std::to_string(res.rounds.size()) + " rounds");
    return 0;
}

inline int cmd_eval(const RunConfig& cfg) {
    const auto model = load_task_model(cfg.existing("task_model"));
    const auto set = load_image_set(cfg.existing("data"));
    const auto out = cfg.path("out");
    auto test = set.split(Split::test);
    if (test.size() == 0) throw UsageError("the test split of --data is empty");
    const auto m = evaluate_task(model, test);
    fs::create_directories(out);
    write_summary(out / "summary.json", metrics_json(m));
    std::ofstream csv(out / "eval.csv");
    if (m.kind == TaskKind::classification) {
        csv << "metric,value\naccuracy," << fmt(m.clf.accuracy) << "\nprecision," << fmt(m.clf.precision)
            << "\nrecall," << fmt(m.clf.recall) << "\nf1," << fmt(m.clf.f1) << '\n';
    } else {
        csv << "label,dice\n";
        for (std::size_t q = 0; q < m.seg.dice.size(); ++q) csv << q << ',' << fmt(m.seg.dice[q]) << '\n';
    }
    write_record(out, "eval", cfg, {"task_model", "data"});
    log("test score " + fmt(m.score()));
    return 0;
}

struct Command {
    const char* name;
    const char* help;
    std::vector<std::string> keys;
    std::function<int(const RunConfig&)> run;
};

inline const std::vector<Command>& commands() {
    static const std::vector<Command> cmds = {
        {"synth", "generate the synthetic multimodal shape benchmark",
         {"out", "seed", "classes", "modes", "n_per_class", "size", "mode_separation", "mode_std", "alpha", "steps",
          "png"},
         cmd_synth},
        {"register", "register every image to its class template by geodesic shooting",
         {"data", "templates", "out", "alpha", "sigma", "steps", "reg_lr", "reg_iterations", "reg_tol", "threads", "png"},
         cmd_register},
        {"train-aug", "train the mixture-prior deformation model on registered velocities",
         {"data", "templates", "velocities", "out", "seed", "C", "latent_dim", "eps_dim", "hidden", "alpha", "lambda",
          "steps", "lr", "batch", "epochs", "warm_start", "weight_decay", "threads"},
         cmd_train_aug},
        {"sample", "sample deformations and warp class templates",
         {"model", "templates", "data", "out", "seed", "multiplier", "components", "max_step", "noise", "threads", "png"},
         cmd_sample},
        {"train-task", "train a classifier or segmenter, optionally with augmented images",
         {"data", "aug", "out", "seed", "task", "task_epochs", "task_lr", "task_hidden", "batch", "gamma", "tau",
          "weight_decay", "patch", "threads"},
         cmd_train_task},
        {"joint", "alternate MGAug and task training",
         {"data", "templates", "velocities", "model", "out", "seed", "task", "C", "latent_dim", "eps_dim", "hidden",
          "alpha", "lambda", "steps", "lr", "batch", "warm_start", "task_lr", "task_hidden", "gamma", "tau",
          "weight_decay", "patch", "multiplier", "components", "max_step", "noise", "r", "joint_eps", "max_rounds",
          "threads"},
         cmd_joint},
        {"eval", "evaluate a trained task model on the test split",
         {"task_model", "data", "out"},
         cmd_eval},
    };
    return cmds;
}

}  // namespace cli

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"mgaug: diffeomorphic augmentation with a multimodal deformation prior"};
    app.require_subcommand(1);
    app.footer("Configuration keys (config file `key = value`, --set key=value, or --key value):\n" +
               RunConfig::usage_table() + "\nMGAUG_THREADS caps workers when --threads is 0.");

    struct Invocation {
        std::string config;
        std::vector<std::string> sets;
        std::map<std::string, std::string> values;
        std::map<std::string, bool> flags;
    };
    std::map<std::string, Invocation> inv;
    for (const auto& c : cli::commands()) {
        auto* sub = app.add_subcommand(c.name, c.help);
        auto& state = inv[c.name];
        sub->add_option("--config", state.config, "config file of key = value lines");
        sub->add_option("--set", state.sets, "key=value override (repeatable)");
        for (const auto& k : c.keys) {
            const auto& key = RunConfig::key(k);
            std::string names = "--" + k;
            if (k == "multiplier") names += ",--mult";
            if (k == "task_model") names += ",--task-model";
            if (key.type == RunConfig::Type::flag) {
                state.flags[k] = false;
                sub->add_flag(names, state.flags[k], key.doc);
            } else {
                sub->add_option(names, state.values[k], key.doc);
            }
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    for (const auto& c : cli::commands()) {
        auto* sub = app.get_subcommand(c.name);
        if (!sub->parsed()) continue;
        const auto& state = inv[c.name];
        RunConfig cfg;
        try {
            if (!state.config.empty()) cfg.merge_file(state.config);
            for (const auto& kv : state.sets) cfg.merge_assignment(kv);
            for (const auto& k : c.keys) {
                const auto* opt = sub->get_option_no_throw("--" + k);
                if (!opt || opt->count() == 0) continue;
                const auto& key = RunConfig::key(k);
                cfg.set(k, key.type == RunConfig::Type::flag ? "true" : state.values.at(k));
            }
        } catch (const std::exception& e) {
            cli::log(std::string("usage error: ") + e.what());
            return 1;
        }
        try {
            return c.run(cfg);
        } catch (const UsageError& e) {
            cli::log(std::string("usage error: ") + e.what());
            return 1;
        } catch (const std::exception& e) {
            cli::log(std::string("error: ") + e.what());
            return 2;
        }
    }
    return 1;
}

}  // namespace mgaug
