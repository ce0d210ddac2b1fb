#include "cordkit/cordkit.h"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <optional>
#include <sstream>

#include "json.hpp"

#include "cordkit/bids.hpp"
#include "cordkit/cvsplit.hpp"
#include "cordkit/error.hpp"
#include "cordkit/groupreg.hpp"
#include "cordkit/harness.hpp"
#include "cordkit/nifti.hpp"
#include "cordkit/preprocess.hpp"
#include "cordkit/segmetrics.hpp"
#include "cordkit/segstats.hpp"
#include "cordkit/tables.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace cordkit;

struct ck_config {
    json doc;
};
struct ck_image_stack {
    std::vector<ImageSlice> slices;
};
struct ck_label_stack {
    std::vector<LabelMask> masks;
};

namespace {

thread_local std::string last_error;

template <class F>
ck_status guarded(F&& f) {
    try {
        f();
        last_error.clear();
        return CK_OK;
    } catch (const Error& e) {
        last_error = e.what();
        return static_cast<ck_status>(e.code());
    } catch (const fs::filesystem_error& e) {
        last_error = e.what();
        return CK_ERR_IO;
    } catch (const json::exception& e) {
        last_error = e.what();
        return CK_ERR_CONFIG;
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
        return CK_ERR_INTERNAL;
    } catch (const std::exception& e) {
        last_error = e.what();
        return CK_ERR_INTERNAL;
    } catch (...) {
        last_error = "unknown error";
        return CK_ERR_INTERNAL;
    }
}

void need(const void* p, const char* name) {
    require(p != nullptr, ErrorCode::invalid_argument, std::string(name) + " must not be NULL");
}

void put(char** out, const std::string& s) {
    if (!out) return;
    *out = nullptr;
    char* buf = static_cast<char*>(std::malloc(s.size() + 1));
    if (!buf) throw std::bad_alloc();
    std::memcpy(buf, s.c_str(), s.size() + 1);
    *out = buf;
}

PipelineConfig settings(const ck_config* cfg) {
    need(cfg, "cfg");
    return parse_config(cfg->doc.dump());
}

json& slot(json& doc, const std::string& key) {
    require(!key.empty(), ErrorCode::invalid_argument, "empty config key");
    json* node = &doc;
    std::size_t start = 0;
    for (;;) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        require(!part.empty(), ErrorCode::invalid_argument, "malformed config key '" + key + "'");
        if (!node->is_object()) *node = json::object();
        node = &(*node)[part];
        if (dot == std::string::npos) return *node;
        start = dot + 1;
    }
}

// A preset supplies every phantom field, so choosing one drops the others.
void assign(json& doc, const std::string& key, json value) {
    if (key == "phantom.preset") {
        doc["phantom"] = json{{"preset", std::move(value)}};
        return;
    }
    slot(doc, key) = std::move(value);
}

std::string fixed(double v) { return format_fixed6(v); }

std::string percent(double share) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", 100 * share);
    return buf;
}

} // namespace

extern "C" {

const char* ck_version(void) { return "1.0.0"; }

const char* ck_last_error(void) { return last_error.c_str(); }

const char* ck_status_name(ck_status status) {
    if (status == CK_OK) return "ok";
    return to_string(static_cast<ErrorCode>(status));
}

int ck_status_is_validation(ck_status status) {
    return status == CK_ERR_INVALID_ARGUMENT || status == CK_ERR_CONFIG || status == CK_ERR_INFEASIBLE;
}

void ck_string_free(char* s) { std::free(s); }

ck_status ck_config_default(ck_config** out) {
    return guarded([&] {
        need(out, "out");
        *out = nullptr;
        auto cfg = std::make_unique<ck_config>();
        cfg->doc = json::parse(default_config_json());
        *out = cfg.release();
    });
}

ck_status ck_config_parse(const char* json_text, ck_config** out) {
    return guarded([&] {
        need(json_text, "json_text");
        need(out, "out");
        *out = nullptr;
        parse_config(json_text);
        auto cfg = std::make_unique<ck_config>();
        cfg->doc = json::parse(json_text);
        *out = cfg.release();
    });
}

ck_status ck_config_load(const char* path, ck_config** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = nullptr;
        const auto text = read_text_file(path);
        try {
            parse_config(text);
        } catch (const Error& e) {
            fail(e.code(), std::string(path) + ": " + e.what());
        }
        auto cfg = std::make_unique<ck_config>();
        cfg->doc = json::parse(text);
        *out = cfg.release();
    });
}

ck_status ck_config_set_json(ck_config* cfg, const char* key, const char* json_value) {
    return guarded([&] {
        need(cfg, "cfg");
        need(key, "key");
        need(json_value, "json_value");
        json v;
        try {
            v = json::parse(json_value);
        } catch (const json::exception&) {
            fail(ErrorCode::config, std::string("value for ") + key + " is not valid JSON: " + json_value);
        }
        assign(cfg->doc, key, std::move(v));
    });
}

ck_status ck_config_set_string(ck_config* cfg, const char* key, const char* value) {
    return guarded([&] {
        need(cfg, "cfg");
        need(key, "key");
        need(value, "value");
        assign(cfg->doc, key, std::string(value));
    });
}

ck_status ck_config_validate(const ck_config* cfg) { return guarded([&] { settings(cfg); }); }

ck_status ck_config_to_json(const ck_config* cfg, char** out) {
    return guarded([&] {
        need(cfg, "cfg");
        need(out, "out");
        put(out, cfg->doc.dump(2) + "\n");
    });
}

void ck_config_free(ck_config* cfg) { delete cfg; }

ck_status ck_image_stack_read(const char* path, ck_image_stack** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = nullptr;
        auto s = std::make_unique<ck_image_stack>();
        s->slices = read_image_stack(path);
        *out = s.release();
    });
}

size_t ck_image_stack_count(const ck_image_stack* s) { return s ? s->slices.size() : 0; }

ck_status ck_image_stack_dims(const ck_image_stack* s, size_t index, int* width, int* height) {
    return guarded([&] {
        need(s, "stack");
        require(index < s->slices.size(), ErrorCode::invalid_argument, "slice index out of range");
        if (width) *width = s->slices[index].width();
        if (height) *height = s->slices[index].height();
    });
}

ck_status ck_image_stack_copy(const ck_image_stack* s, size_t index, double* buffer, size_t length) {
    return guarded([&] {
        need(s, "stack");
        need(buffer, "buffer");
        require(index < s->slices.size(), ErrorCode::invalid_argument, "slice index out of range");
        const auto d = s->slices[index].data();
        require(length >= d.size(), ErrorCode::invalid_argument, "buffer too small");
        std::copy(d.begin(), d.end(), buffer);
    });
}

void ck_image_stack_free(ck_image_stack* s) { delete s; }

ck_status ck_label_stack_read(const char* path, ck_label_stack** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = nullptr;
        auto s = std::make_unique<ck_label_stack>();
        s->masks = read_label_stack(path);
        *out = s.release();
    });
}

size_t ck_label_stack_count(const ck_label_stack* s) { return s ? s->masks.size() : 0; }

ck_status ck_label_stack_dims(const ck_label_stack* s, size_t index, int* width, int* height) {
    return guarded([&] {
        need(s, "stack");
        require(index < s->masks.size(), ErrorCode::invalid_argument, "slice index out of range");
        if (width) *width = s->masks[index].width();
        if (height) *height = s->masks[index].height();
    });
}

ck_status ck_label_stack_copy(const ck_label_stack* s, size_t index, uint8_t* buffer, size_t length) {
    return guarded([&] {
        need(s, "stack");
        need(buffer, "buffer");
        require(index < s->masks.size(), ErrorCode::invalid_argument, "slice index out of range");
        const auto c = s->masks[index].codes();
        require(length >= c.size(), ErrorCode::invalid_argument, "buffer too small");
        std::copy(c.begin(), c.end(), buffer);
    });
}

void ck_label_stack_free(ck_label_stack* s) { delete s; }

ck_status ck_evaluate_slice(const ck_label_stack* pred, const ck_label_stack* gt, size_t index, double hd_percentile,
                            ck_slice_metrics* out) {
    return guarded([&] {
        need(pred, "pred");
        need(gt, "gt");
        need(out, "out");
        require(index < pred->masks.size() && index < gt->masks.size(), ErrorCode::invalid_argument,
                "slice index out of range");
        const auto r = evaluate_slice(pred->masks[index], gt->masks[index], {}, hd_percentile);
        for (int k = 0; k < 2; ++k) {
            out->dsc[k] = r[k].dsc;
            out->hdrfdst[k] = r[k].hdrfdst;
            out->volsmty[k] = r[k].volsmty;
            out->hd_valid[k] = r[k].hd_valid ? 1 : 0;
        }
    });
}

ck_status ck_evaluate_files(const char* pred, const char* gt, const char* gt2, const char* metrics_csv,
                            char** report) {
    return guarded([&] {
        need(pred, "pred");
        need(gt, "gt");
        const auto p = read_label_stack(pred);
        const auto g = read_label_stack(gt);
        require(p.size() == g.size(), ErrorCode::dimension,
                "prediction has " + std::to_string(p.size()) + " slices, ground truth " + std::to_string(g.size()));
        std::vector<LabelMask> g2;
        if (gt2) {
            g2 = read_label_stack(gt2);
            require(g2.size() == g.size(), ErrorCode::dimension, "second rater stack differs in length");
        }
        std::string subject = fs::path(pred).filename().string();
        subject = subject.substr(0, subject.find('.'));
        std::vector<MetricsRecord> records;
        std::ostringstream text;
        text << "slice class DSC HDRFDST VOLSMTY\n";
        double sum[2][2] = {{0, 0}, {0, 0}};
        for (std::size_t i = 0; i < p.size(); ++i) {
            const auto r = evaluate_slice(p[i], g[i], {subject, static_cast<int>(i), 0, "pred"});
            for (const auto& rec : r) {
                text << i << ' ' << to_string(rec.cls) << ' ' << fixed(rec.dsc) << ' '
                     << (rec.hd_valid ? fixed(rec.hdrfdst) : "NA") << ' ' << fixed(rec.volsmty) << '\n';
                sum[0][static_cast<int>(rec.cls)] += rec.dsc;
                records.push_back(rec);
            }
            if (!g2.empty()) {
                const auto ir = evaluate_slice(g2[i], g[i], {subject, static_cast<int>(i), 0, "inter-rater"});
                for (const auto& rec : ir) {
                    sum[1][static_cast<int>(rec.cls)] += rec.dsc;
                    records.push_back(rec);
                }
            }
        }
        const double n = p.empty() ? 1.0 : static_cast<double>(p.size());
        text << "mean DSC SC " << fixed(sum[0][0] / n) << " GM " << fixed(sum[0][1] / n) << '\n';
        if (!g2.empty())
            text << "inter-rater DSC SC " << fixed(sum[1][0] / n) << " GM " << fixed(sum[1][1] / n) << '\n';
        if (metrics_csv) write_metrics_csv(records, metrics_csv);
        put(report, text.str());
    });
}

ck_status ck_run_phantom(const ck_config* cfg, const char* out_dir, char** report) {
    return guarded([&] {
        need(out_dir, "out_dir");
        const auto c = settings(cfg);
        const auto m = generate_phantoms(c.phantom, c.seed, out_dir);
        put(report, "phantom " + m.dataset_id + ": " + std::to_string(m.subjects.size()) + " subjects, " +
                        std::to_string(m.total_slices()) + " slices written to " + out_dir + "\n");
    });
}

ck_status ck_run_prep(const ck_config* cfg, const char* raw_dir, const char* out_dir, char** report) {
    return guarded([&] {
        need(raw_dir, "raw_dir");
        need(out_dir, "out_dir");
        const auto c = settings(cfg);
        const auto r = run_preprocessing(raw_dir, out_dir, c.prep, c.prep_dataset_id);
        put(report, "prep " + r.manifest.dataset_id + ": " + std::to_string(r.processed) + " slices processed, " +
                        std::to_string(r.exclusions.size()) + " excluded, " +
                        std::to_string(r.manifest.subjects.size()) + " subjects\n");
    });
}

ck_status ck_run_split(const ck_config* cfg, const char* bids_dir, const char* folds_tsv, char** report) {
    return guarded([&] {
        need(bids_dir, "bids_dir");
        need(folds_tsv, "folds_tsv");
        const auto c = settings(cfg);
        const auto m = scan_bids_tree(bids_dir);
        const auto plan = plan_folds(m, SplitOptions{.k = c.split_k,
                                                     .seed = c.seed,
                                                     .stratify_fold0 = c.split_stratify,
                                                     .tolerance = c.split_tolerance});
        write_folds_tsv(plan, folds_tsv);
        PlanCheck check;
        check.tolerance = c.split_tolerance;
        std::ostringstream text;
        for (int f = 0; f < plan.k; ++f) {
            const auto r = realized_ratio(plan.folds[f], m);
            text << "fold " << f << ": train " << percent(r[0]) << " validation " << percent(r[1]) << " test "
                 << percent(r[2]) << '\n';
        }
        for (const auto& w : plan.warnings) text << "warning: " << w << '\n';
        for (const auto& v : validate_plan(plan, m, check)) text << "violation: " << v.message << '\n';
        put(report, text.str());
    });
}

ck_status ck_run_template(const ck_config* cfg, const char* bids_dir, const char* out_dir, char** report) {
    return guarded([&] {
        need(bids_dir, "bids_dir");
        need(out_dir, "out_dir");
        const auto c = settings(cfg);
        const auto space = build_template_from_bids(bids_dir, c.registration, c.template_outer_iters, c.threads);
        save_template_space(space, out_dir);
        const auto& last = space.trace.back();
        put(report, "template over " + std::to_string(space.subjects.size()) + " subjects: mean field " +
                        fixed(last.mean_field_norm) + " px, mean SSD " + fixed(last.mean_ssd) +
                        ", inverse residual " + fixed(space.inverse_residual) + " px\n");
    });
}

ck_status ck_run_augment(const ck_config* cfg, const char* bids_dir, const char* template_dir, const char* out_dir,
                         char** report) {
    return guarded([&] {
        need(bids_dir, "bids_dir");
        need(out_dir, "out_dir");
        const auto c = settings(cfg);
        std::optional<TemplateSpace> space;
        std::unique_ptr<TemplateProvider> provider;
        if (template_dir) {
            space = load_template_space(template_dir);
            provider = std::make_unique<TemplateProvider>(*space);
        }
        const auto run = run_augmentation(bids_dir, out_dir, c.augment, provider.get(), c.augment_epochs, c.threads);
        std::string text = "augment (" + std::string(to_string(c.augment.policy)) + "): " +
                           std::to_string(run.samples) + " samples\n";
        for (const auto& n : run.notices) text += "notice: " + n + "\n";
        put(report, text);
    });
}

ck_status ck_run_stats(const ck_config* cfg, const char* metrics_csv, const char* participants_tsv, int by_fold,
                       const char* out_dir, char** report) {
    return guarded([&] {
        need(metrics_csv, "metrics_csv");
        need(out_dir, "out_dir");
        const auto c = settings(cfg);
        const auto records = read_metrics_csv(metrics_csv);
        auto opts = c.experiment.stats;
        opts.by_fold = by_fold != 0;
        if (participants_tsv) {
            opts.by_group = true;
            for (const auto& s : read_participants_tsv(participants_tsv))
                opts.subject_groups.emplace_back(s.subject_id, to_string(s.group));
        }
        const auto summary = summarize(records, opts);
        const fs::path out(out_dir);
        write_text_file(out / "summary.csv", summary_csv(summary));
        write_text_file(out / "comparisons.csv", comparisons_csv(summary));
        std::string text = summary_report(summary);
        for (const auto& n : summary.notices) text += "notice: " + n + "\n";
        write_text_file(out / "report.txt", text);
        put(report, text);
    });
}

ck_status ck_run_exp1(const ck_config* cfg, char** report) {
    return guarded([&] {
        const auto c = settings(cfg);
        run_exp1(c.experiment);
        put(report, read_text_file(c.experiment.output_dir / "exp1/report.txt"));
    });
}

ck_status ck_run_exp2(const ck_config* cfg, char** report) {
    return guarded([&] {
        const auto c = settings(cfg);
        run_exp2(c.experiment);
        put(report, read_text_file(c.experiment.output_dir / "exp2/report.txt"));
    });
}

} // extern "C"
