// cordkit command-line front end; talks to the library only through cordkit.h.
#include <cstdio>
#include <iostream>
#include <list>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cordkit/cordkit.h"

namespace {

enum class Kind { json, string, list };

struct Override {
    CLI::Option* option = nullptr;
    std::string key;
    Kind kind = Kind::json;
    std::string value;
};

struct Failure {
    int exit_code;
};

// Common flags and config overrides of one subcommand.
class Stage {
public:
    Stage(CLI::App& app, const std::string& name, const std::string& help) : sub_(app.add_subcommand(name, help)) {
        sub_->add_option("--config", config_, "JSON config file (schema_version 1)")->check(CLI::ExistingFile);
        add("--seed", "seed", Kind::json, "master seed");
        add("--threads", "threads", Kind::json, "worker threads");
        sub_->add_option("--set", sets_, "override any config key, KEY=JSON (repeatable)");
    }

    CLI::App* app() { return sub_; }

    CLI::Option* add(const std::string& flag, const std::string& key, Kind kind, const std::string& help) {
        auto& o = overrides_.emplace_back();
        o.key = key;
        o.kind = kind;
        o.option = sub_->add_option(flag, o.value, help + " [" + key + "]");
        return o.option;
    }

    // Loads the config file (or defaults) and applies flag overrides.
    ck_config* build() {
        ck_config* cfg = nullptr;
        check(config_.empty() ? ck_config_default(&cfg) : ck_config_load(config_.c_str(), &cfg), nullptr);
        for (const auto& o : overrides_) {
            if (o.option->count() == 0) continue;
            ck_status st = CK_OK;
            if (o.kind == Kind::string) st = ck_config_set_string(cfg, o.key.c_str(), o.value.c_str());
            else if (o.kind == Kind::list) st = ck_config_set_json(cfg, o.key.c_str(), ("[" + o.value + "]").c_str());
            else st = ck_config_set_json(cfg, o.key.c_str(), o.value.c_str());
            check(st, cfg);
        }
        for (const auto& s : sets_) {
            const auto eq = s.find('=');
            if (eq == std::string::npos || eq == 0) {
                std::cerr << "error: --set expects KEY=JSON, got '" << s << "'\n";
                ck_config_free(cfg);
                throw Failure{1};
            }
            check(ck_config_set_json(cfg, s.substr(0, eq).c_str(), s.substr(eq + 1).c_str()), cfg);
        }
        check(ck_config_validate(cfg), cfg);
        return cfg;
    }

    static void check(ck_status st, ck_config* cfg) {
        if (st == CK_OK) return;
        std::cerr << "error (" << ck_status_name(st) << "): " << ck_last_error() << '\n';
        if (cfg) ck_config_free(cfg);
        throw Failure{ck_status_is_validation(st) ? 1 : 2};
    }

private:
    CLI::App* sub_;
    std::string config_;
    std::vector<std::string> sets_;
    std::list<Override> overrides_;
};

void emit(char* report) {
    if (report) std::cout << report;
    ck_string_free(report);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cordkit: spinal cord segmentation experiment toolkit"};
    app.set_version_flag("--version", std::string(ck_version()));
    app.require_subcommand(1);

    std::string out, in, bids, templ, metrics, participants, pred, gt, gt2, csv;
    bool by_fold = false, print_defaults = false;

    Stage phantom(app, "phantom", "generate a synthetic raw dataset with ground truth");
    phantom.app()->add_option("--out", out, "raw output directory")->required();
    phantom.add("--preset", "phantom.preset", Kind::string, "ds1 or ds2");
    phantom.add("--groups", "phantom.groups", Kind::list, "subjects per group HC,ALS,MS");
    phantom.add("--slices", "phantom.slices", Kind::list, "slices per subject MIN,MAX");
    phantom.add("--dataset-id", "phantom.dataset_id", Kind::string, "dataset id");

    Stage prep(app, "prep", "combine echoes, reslice, crop and write a BIDS tree");
    prep.app()->add_option("--raw", in, "raw dataset directory")->required()->check(CLI::ExistingDirectory);
    prep.app()->add_option("--out", out, "BIDS output directory")->required();
    prep.add("--target-res", "prep.target_res", Kind::json, "target resolution in mm");
    prep.add("--crop", "prep.crop", Kind::json, "crop size in pixels");
    prep.add("--combine", "prep.combine", Kind::string, "rss or sos");
    prep.add("--dataset-id", "prep.dataset_id", Kind::string, "dataset id");

    Stage split(app, "split", "plan subject-level cross-validation folds");
    split.app()->add_option("--bids", bids, "BIDS dataset")->required()->check(CLI::ExistingDirectory);
    split.app()->add_option("--out", out, "folds.tsv to write")->required();
    split.add("--k", "split.k", Kind::json, "number of folds");
    split.add("--stratify-fold0", "split.stratify_fold0", Kind::json, "true or false");

    Stage templ_stage(app, "template", "build a group-wise template and deformation fields");
    templ_stage.app()->add_option("--bids", bids, "BIDS dataset")->required()->check(CLI::ExistingDirectory);
    templ_stage.app()->add_option("--out", out, "template directory")->required();
    templ_stage.add("--outer-iters", "registration.outer_iters", Kind::json, "template iterations");
    templ_stage.add("--levels", "registration.levels", Kind::json, "pyramid levels");
    templ_stage.add("--iters", "registration.iters_per_level", Kind::json, "iterations per level");

    Stage augment(app, "augment", "write an augmented training tree");
    augment.app()->add_option("--bids", bids, "BIDS dataset")->required()->check(CLI::ExistingDirectory);
    augment.app()->add_option("--out", out, "output directory")->required();
    augment.app()->add_option("--template", templ, "template directory for realistic samples")
        ->check(CLI::ExistingDirectory);
    augment.add("--policy", "augment.policy", Kind::string, "without, classical, smart, realistic or hybrid");
    augment.add("--epochs", "augment.epochs", Kind::json, "epochs");

    Stage evaluate(app, "evaluate", "score a predicted label stack against ground truth");
    evaluate.app()->add_option("--pred", pred, "predicted labels (NIfTI)")->required()->check(CLI::ExistingFile);
    evaluate.app()->add_option("--gt", gt, "ground truth labels (NIfTI)")->required()->check(CLI::ExistingFile);
    evaluate.app()->add_option("--gt2", gt2, "second rater, reported as inter-rater agreement")
        ->check(CLI::ExistingFile);
    evaluate.app()->add_option("--csv", csv, "per-slice metrics CSV to write");

    Stage stats(app, "stats", "trimmed statistics and paired tests over a metrics CSV");
    stats.app()->add_option("--metrics", metrics, "metrics CSV")->required()->check(CLI::ExistingFile);
    stats.app()->add_option("--out", out, "output directory")->required();
    stats.app()->add_option("--participants", participants, "participants.tsv for per-group cells")
        ->check(CLI::ExistingFile);
    stats.app()->add_flag("--by-fold", by_fold, "one cell per fold");
    stats.add("--correction", "experiment.correction", Kind::string, "bonferroni, holm or none");
    stats.add("--trim", "experiment.trim_fraction", Kind::json, "trim fraction per tail");

    Stage exp1(app, "exp1", "multi-class vs single-class segmentation experiment");
    Stage exp2(app, "exp2", "data augmentation strategy experiment");
    for (Stage* s : {&exp1, &exp2}) {
        s->add("--ds1", "experiment.ds1", Kind::string, "DS1 BIDS dataset");
        s->add("--out", "experiment.output_dir", Kind::string, "output directory");
        s->add("--fold-plan", "experiment.fold_plan", Kind::string, "folds.tsv to reuse");
    }
    exp1.add("--folds", "experiment.folds", Kind::string, "all or fold-0");
    exp2.add("--ds2", "experiment.ds2", Kind::string, "DS2 BIDS dataset");
    exp2.add("--template", "experiment.template", Kind::string, "template directory");

    Stage config(app, "config", "print the effective configuration as JSON");
    config.app()->add_flag("--defaults", print_defaults, "ignore --config and overrides");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        char* report = nullptr;
        auto run = [&](Stage& stage, auto&& fn) {
            ck_config* cfg = stage.build();
            const ck_status st = fn(cfg);
            Stage::check(st, cfg);
            ck_config_free(cfg);
            emit(report);
        };
        auto opt = [](const std::string& s) { return s.empty() ? nullptr : s.c_str(); };

        if (phantom.app()->parsed()) {
            run(phantom, [&](ck_config* c) { return ck_run_phantom(c, out.c_str(), &report); });
        } else if (prep.app()->parsed()) {
            run(prep, [&](ck_config* c) { return ck_run_prep(c, in.c_str(), out.c_str(), &report); });
        } else if (split.app()->parsed()) {
            run(split, [&](ck_config* c) { return ck_run_split(c, bids.c_str(), out.c_str(), &report); });
        } else if (templ_stage.app()->parsed()) {
            run(templ_stage, [&](ck_config* c) { return ck_run_template(c, bids.c_str(), out.c_str(), &report); });
        } else if (augment.app()->parsed()) {
            run(augment, [&](ck_config* c) {
                return ck_run_augment(c, bids.c_str(), opt(templ), out.c_str(), &report);
            });
        } else if (evaluate.app()->parsed()) {
            run(evaluate, [&](ck_config*) {
                return ck_evaluate_files(pred.c_str(), gt.c_str(), opt(gt2), opt(csv), &report);
            });
        } else if (stats.app()->parsed()) {
            run(stats, [&](ck_config* c) {
                return ck_run_stats(c, metrics.c_str(), opt(participants), by_fold ? 1 : 0, out.c_str(), &report);
            });
        } else if (exp1.app()->parsed()) {
            run(exp1, [&](ck_config* c) { return ck_run_exp1(c, &report); });
        } else if (exp2.app()->parsed()) {
            run(exp2, [&](ck_config* c) { return ck_run_exp2(c, &report); });
        } else if (config.app()->parsed()) {
            ck_config* cfg = nullptr;
            if (print_defaults) Stage::check(ck_config_default(&cfg), nullptr);
            else cfg = config.build();
            const ck_status st = ck_config_to_json(cfg, &report);
            Stage::check(st, cfg);
            ck_config_free(cfg);
            emit(report);
        }
    } catch (const Failure& f) {
        return f.exit_code;
    }
    return 0;
}
