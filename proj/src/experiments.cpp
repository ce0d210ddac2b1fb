#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <memory>
#include <optional>
#include <set>
#include <tuple>

#include "cordkit/cvsplit.hpp"
#include "cordkit/error.hpp"
#include "cordkit/harness.hpp"
#include "cordkit/nifti.hpp"
#include "cordkit/parallel.hpp"
#include "cordkit/tables.hpp"

namespace cordkit {

namespace fs = std::filesystem;

namespace {

void validate_segmenter(const SegmenterSpec& s, const std::string& arm) {
    require(s.kind == "baseline" || s.kind == "external", ErrorCode::config,
            "arm " + arm + ": segmenter kind must be baseline or external");
    if (s.kind == "external") {
        require(s.external.command.find("{input}") != std::string::npos &&
                    s.external.command.find("{output}") != std::string::npos,
                ErrorCode::config, "arm " + arm + ": external command needs {input} and {output}");
        require(s.external.timeout_s > 0, ErrorCode::config, "arm " + arm + ": timeout_s must be positive");
    }
    require(s.dsc_offset >= 0 && s.dsc_offset <= 1, ErrorCode::config, "arm " + arm + ": dsc_offset must be in [0,1]");
}

// Timestamps live only here so the other outputs stay byte-stable.
class RunLog {
public:
    explicit RunLog(const fs::path& path) {
        fs::create_directories(path.parent_path());
        out_.open(path, std::ios::app);
    }
    void line(const std::string& text) {
        std::lock_guard lock(mutex_);
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&now, &tm);
        char stamp[32];
        std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
        out_ << stamp << ' ' << text << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
    std::mutex mutex_;
};

using Dataset = std::map<std::string, SubjectStacks>;

Dataset load_dataset(const DatasetManifest& m) {
    Dataset d;
    for (const auto& s : m.subjects) d.emplace(s.subject_id, load_bids_subject(m.root, s.subject_id));
    return d;
}

FoldPlan obtain_plan(const ExperimentConfig& c, const DatasetManifest& m, const fs::path& out) {
    FoldPlan plan;
    if (!c.fold_plan.empty()) {
        plan = read_folds_tsv(c.fold_plan);
    } else {
        plan = plan_folds(m, SplitOptions{.k = c.k, .seed = c.master_seed, .stratify_fold0 = c.stratify_fold0});
    }
    for (const auto& fold : plan.folds)
        for (const auto& a : fold)
            require(m.find(a.subject) != nullptr, ErrorCode::consistency,
                    "fold plan names " + a.subject + ", absent from " + m.root.string());
    write_folds_tsv(plan, out / "folds.tsv");
    return plan;
}

struct SliceRef {
    std::string subject;
    int slice = 0;
};

std::vector<SliceRef> slices_of(const DatasetManifest& m, const std::vector<std::string>& subjects) {
    std::vector<SliceRef> out;
    for (const auto& s : subjects) {
        const auto* rec = m.find(s);
        require(rec != nullptr, ErrorCode::missing_subject, s + " missing from dataset");
        for (int k = 0; k < rec->n_slices; ++k) out.push_back({s, k});
    }
    return out;
}

struct SegContext {
    fs::path work;
    std::string train; ///< training tree for {train}
};

LabelMask segment(const SegmenterSpec& spec, SegMode mode, const ImageSlice& img, const LabelMask& gt,
                  const SegContext& ctx) {
    if (spec.kind == "baseline") return baseline_segment(img, mode);
    const fs::path dir = ctx.work / to_string(mode);
    const fs::path in = dir / "input.nii.gz", gt_path = dir / "gt.nii.gz", out = dir / "output.nii.gz";
    write_image_stack(in, std::span(&img, 1));
    if (spec.external.command.find("{gt}") != std::string::npos) write_label_stack(gt_path, std::span(&gt, 1));
    const auto mask = run_external_segmenter(spec.external, in, out, img.width(), img.height(),
                                             {{"gt", gt_path.string()},
                                              {"mode", to_string(mode)},
                                              {"subject", img.id().subject},
                                              {"slice", std::to_string(img.id().index)},
                                              {"train", ctx.train}});
    if (mode == SegMode::multi_class) return mask;
    // Single-class outputs may be binary or multi-class; in GM mode code 2
    // wins when present.
    const bool has_gm = std::find(mask.codes().begin(), mask.codes().end(), kGrayMatter) != mask.codes().end();
    std::vector<std::uint8_t> codes(mask.size(), 0);
    for (std::size_t i = 0; i < codes.size(); ++i) {
        const auto c = mask.codes()[i];
        if (mode == SegMode::sc_only) codes[i] = c != 0 ? kWhiteMatter : kBackground;
        else codes[i] = (has_gm ? c == kGrayMatter : c != 0) ? kGrayMatter : kBackground;
    }
    return mask.with_codes(std::move(codes));
}

void apply_offset(std::array<MetricsRecord, 2>& recs, double offset) {
    for (auto& r : recs) r.dsc = std::max(0.0, r.dsc - offset);
}

std::string failures_tsv(const std::vector<SliceFailure>& f) {
    std::string out = "arm\tdataset\tsubject\tslice\terror\n";
    for (const auto& x : f) {
        std::string err = x.error;
        std::replace(err.begin(), err.end(), '\t', ' ');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out += x.arm + '\t' + x.dataset + '\t' + x.subject + '\t' + std::to_string(x.slice) + '\t' + err + '\n';
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> subject_groups(const DatasetManifest& m) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& s : m.subjects) out.emplace_back(s.subject_id, to_string(s.group));
    return out;
}

void append_fig4(std::string& out, const Summary& s, const std::string& scope) {
    for (const auto& c : s.cells) {
        const std::string key = scope == "fold" ? std::to_string(c.fold) : scope == "group" ? c.group : "all";
        const std::pair<const char*, const TrimmedStats*> metrics[] = {
            {"dsc", &c.dsc}, {"hdrfdst", &c.hdrfdst}, {"volsmty", &c.volsmty}};
        for (const auto& [name, t] : metrics) {
            out += scope + ',' + key + ',' + c.method + ',' + to_string(c.cls) + ',' + name + ',' + std::to_string(t->n) + ',';
            out += t->n == 0 ? "NA,NA,NA\n"
                             : format_fixed6(t->trimmed_mean) + ',' + format_fixed6(t->trimmed_std) + ',' +
                                   format_fixed6(100.0 * t->outlier_pct) + '\n';
        }
    }
}

void emit(ExperimentReport& rep, const fs::path& root, const fs::path& rel, const std::string& content) {
    write_text_file(root / rel, content);
    rep.outputs.push_back(rel.generic_string());
}

class FilteredProvider : public RealisticProvider {
public:
    FilteredProvider(const TemplateSpace& space, std::set<std::string> allowed)
        : inner_(space), allowed_(std::move(allowed)) {}
    std::vector<std::string> targets_for(const std::string& subject) const override {
        std::vector<std::string> out;
        for (auto& t : inner_.targets_for(subject))
            if (allowed_.count(t)) out.push_back(t);
        return out;
    }
    AugmentedSample morph(const ImageSlice& img, const LabelMask& mask, const std::string& target) const override {
        return inner_.morph(img, mask, target);
    }

private:
    TemplateProvider inner_;
    std::set<std::string> allowed_;
};

std::string svg_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

} // namespace

void validate(const ExperimentConfig& c) {
    require(!c.ds1.empty(), ErrorCode::config, "experiment needs a ds1 path");
    require(!c.output_dir.empty(), ErrorCode::config, "experiment needs an output_dir");
    require(c.k >= 2, ErrorCode::config, "k must be >= 2");
    require(c.threads >= 1, ErrorCode::config, "threads must be >= 1");
    require(c.epochs >= 1, ErrorCode::config, "epochs must be >= 1");
    require(c.hd_percentile > 0 && c.hd_percentile <= 100, ErrorCode::config, "hd_percentile must be in (0,100]");
    std::set<std::string> names;
    for (const auto& a : c.exp1_arms) {
        require(!a.name.empty() && names.insert("1/" + a.name).second, ErrorCode::config,
                "exp1 arm names must be unique and nonempty");
        require(a.design == "mcs" || a.design == "scs", ErrorCode::config, "exp1 arm " + a.name + ": design must be mcs or scs");
        validate_segmenter(a.segmenter, a.name);
    }
    for (const auto& a : c.exp2_arms) {
        require(!a.name.empty() && names.insert("2/" + a.name).second, ErrorCode::config,
                "exp2 arm names must be unique and nonempty");
        validate_segmenter(a.segmenter, a.name);
    }
    validate(c.augment);
}

ExperimentReport run_exp1(const ExperimentConfig& c) {
    validate(c);
    require(!c.exp1_arms.empty(), ErrorCode::config, "exp1 needs at least one arm");
    const fs::path root = c.output_dir / "exp1";
    RunLog log(c.output_dir / "run.log");
    log.line("exp1 start: ds1=" + c.ds1.string());

    const auto manifest = scan_bids_tree(c.ds1);
    const auto data = load_dataset(manifest);
    const auto plan = obtain_plan(c, manifest, root);
    ExperimentReport rep;
    rep.outputs.push_back("exp1/folds.tsv");

    struct Job {
        int fold;
        SliceRef ref;
        std::size_t arm;
    };
    std::vector<Job> jobs;
    const int nfolds = c.all_folds ? static_cast<int>(plan.folds.size()) : 1;
    for (int f = 0; f < nfolds; ++f)
        for (const auto& ref : slices_of(manifest, plan.subjects_with(f, Role::test)))
            for (std::size_t a = 0; a < c.exp1_arms.size(); ++a) jobs.push_back({f, ref, a});
    log.line("exp1: " + std::to_string(jobs.size()) + " slice evaluations over " + std::to_string(nfolds) + " folds");

    struct Outcome {
        std::array<MetricsRecord, 2> records;
        std::string error;
        bool ok = false;
    };
    std::vector<Outcome> outcomes(jobs.size());
    parallel_for(jobs.size(), static_cast<unsigned>(c.threads), [&](std::size_t j) {
        const auto& job = jobs[j];
        const auto& arm = c.exp1_arms[job.arm];
        const auto& stacks = data.at(job.ref.subject);
        const auto& img = stacks.images.at(static_cast<std::size_t>(job.ref.slice));
        const auto& gt = stacks.masks.at(static_cast<std::size_t>(job.ref.slice));
        const SegContext ctx{root / "work" / arm.name / ("fold-" + std::to_string(job.fold)) /
                                 (job.ref.subject + "_slice-" + std::to_string(job.ref.slice)),
                             c.ds1.string()};
        try {
            LabelMask pred = arm.design == "mcs"
                                 ? segment(arm.segmenter, SegMode::multi_class, img, gt, ctx)
                                 : merge_single_class(segment(arm.segmenter, SegMode::sc_only, img, gt, ctx),
                                                      segment(arm.segmenter, SegMode::gm_only, img, gt, ctx));
            outcomes[j].records = evaluate_slice(pred, gt, {job.ref.subject, job.ref.slice, job.fold, arm.name},
                                                 c.hd_percentile);
            apply_offset(outcomes[j].records, arm.segmenter.dsc_offset);
            outcomes[j].ok = true;
        } catch (const std::exception& e) {
            outcomes[j].error = e.what();
        }
    });
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        if (outcomes[j].ok) {
            rep.records.insert(rep.records.end(), outcomes[j].records.begin(), outcomes[j].records.end());
        } else {
            rep.failures.push_back({c.exp1_arms[jobs[j].arm].name, manifest.dataset_id, jobs[j].ref.subject,
                                    jobs[j].ref.slice, outcomes[j].error});
            log.line("exp1 slice failure: " + jobs[j].ref.subject + " " + std::to_string(jobs[j].ref.slice) + ": " +
                     outcomes[j].error);
        }
    }

    auto opts = c.stats;
    opts.by_fold = true;
    opts.by_group = false;
    const auto by_fold = summarize(rep.records, opts);
    opts.by_fold = false;
    opts.by_group = true;
    opts.subject_groups = subject_groups(manifest);
    const auto by_group = summarize(rep.records, opts);
    opts.by_group = false;
    const auto overall = summarize(rep.records, opts);

    emit(rep, c.output_dir, "exp1/metrics.csv", metrics_csv(rep.records));
    emit(rep, c.output_dir, "exp1/summary_folds.csv", summary_csv(by_fold));
    emit(rep, c.output_dir, "exp1/summary_groups.csv", summary_csv(by_group));
    emit(rep, c.output_dir, "exp1/summary_overall.csv", summary_csv(overall));
    emit(rep, c.output_dir, "exp1/comparisons.csv", comparisons_csv(overall));
    emit(rep, c.output_dir, "exp1/comparisons_folds.csv", comparisons_csv(by_fold));
    emit(rep, c.output_dir, "exp1/comparisons_groups.csv", comparisons_csv(by_group));
    std::string fig4 = "scope,key,method,class,metric,n,trimmed_mean,trimmed_std,outlier_pct\n";
    append_fig4(fig4, by_fold, "fold");
    append_fig4(fig4, by_group, "group");
    append_fig4(fig4, overall, "overall");
    emit(rep, c.output_dir, "exp1/fig4.csv", fig4);

    std::string report = "Exp1 on " + manifest.dataset_id + ", " + std::to_string(nfolds) + " fold(s), " +
                         std::to_string(rep.failures.size()) + " failed slice evaluation(s)\n\nOverall\n" +
                         summary_report(overall) + "\nPer group\n" + summary_report(by_group);
    emit(rep, c.output_dir, "exp1/report.txt", report);
    emit(rep, c.output_dir, "exp1/failures.tsv", failures_tsv(rep.failures));
    log.line("exp1 done: " + std::to_string(rep.records.size()) + " records");
    return rep;
}

ExperimentReport run_exp2(const ExperimentConfig& c) {
    validate(c);
    require(!c.exp2_arms.empty(), ErrorCode::config, "exp2 needs at least one arm");
    const fs::path root = c.output_dir / "exp2";
    RunLog log(c.output_dir / "run.log");
    log.line("exp2 start: ds1=" + c.ds1.string() + " ds2=" + c.ds2.string());

    const auto m1 = scan_bids_tree(c.ds1);
    const auto d1 = load_dataset(m1);
    const auto plan = obtain_plan(c, m1, root);
    ExperimentReport rep;
    rep.outputs.push_back("exp2/folds.tsv");

    DatasetManifest m2;
    Dataset d2;
    if (!c.ds2.empty()) {
        m2 = scan_bids_tree(c.ds2);
        d2 = load_dataset(m2);
    }

    // Fold-0 training tree shared by the augmenting arms.
    const auto train = plan.subjects_with(0, Role::train);
    const fs::path train_src = root / "train_src";
    {
        DatasetManifest sub;
        sub.dataset_id = m1.dataset_id + "-fold0-train";
        Dataset part;
        for (const auto& s : train) {
            sub.subjects.push_back(*m1.find(s));
            part.emplace(s, d1.at(s));
        }
        write_bids_tree(sub, part, train_src);
    }
    std::optional<TemplateSpace> space;
    std::unique_ptr<RealisticProvider> provider;
    if (!c.template_dir.empty()) {
        space = load_template_space(c.template_dir);
        provider = std::make_unique<FilteredProvider>(*space, std::set<std::string>(train.begin(), train.end()));
    }
    std::vector<std::string> train_trees(c.exp2_arms.size());
    std::string notes;
    for (std::size_t a = 0; a < c.exp2_arms.size(); ++a) {
        const auto& arm = c.exp2_arms[a];
        if (arm.reference) continue;
        auto cfg = c.augment;
        cfg.policy = arm.policy;
        cfg.master_seed = c.master_seed;
        const fs::path tree = root / arm.name / "train_aug";
        const auto run = run_augmentation(train_src, tree, cfg, provider.get(), c.epochs, c.threads);
        train_trees[a] = tree.string();
        notes += arm.name + ": " + std::to_string(run.samples) + " training samples (" + to_string(arm.policy) + "), " +
                 std::to_string(run.notices.size()) + " notice(s)\n";
        log.line("exp2 arm " + arm.name + ": " + std::to_string(run.samples) + " augmented samples");
    }

    struct Job {
        int dataset; // 0: DS1 fold-0 test, 1: DS2
        SliceRef ref;
        std::size_t arm;
    };
    const std::string ds_name[2] = {"DS1", "DS2"};
    std::vector<Job> jobs;
    for (std::size_t a = 0; a < c.exp2_arms.size(); ++a) {
        for (const auto& ref : slices_of(m1, plan.subjects_with(0, Role::test))) jobs.push_back({0, ref, a});
        std::vector<std::string> all2;
        for (const auto& s : m2.subjects) all2.push_back(s.subject_id);
        for (const auto& ref : slices_of(m2, all2)) jobs.push_back({1, ref, a});
    }
    struct Outcome {
        std::array<MetricsRecord, 2> records;
        std::string error;
        bool ok = false;
    };
    std::vector<Outcome> outcomes(jobs.size());
    parallel_for(jobs.size(), static_cast<unsigned>(c.threads), [&](std::size_t j) {
        const auto& job = jobs[j];
        const auto& arm = c.exp2_arms[job.arm];
        const auto& stacks = (job.dataset == 0 ? d1 : d2).at(job.ref.subject);
        const auto& img = stacks.images.at(static_cast<std::size_t>(job.ref.slice));
        const auto& gt = stacks.masks.at(static_cast<std::size_t>(job.ref.slice));
        const SegContext ctx{root / "work" / arm.name / ds_name[job.dataset] /
                                 (job.ref.subject + "_slice-" + std::to_string(job.ref.slice)),
                             train_trees[job.arm]};
        try {
            const auto pred = segment(arm.segmenter, SegMode::multi_class, img, gt, ctx);
            outcomes[j].records =
                evaluate_slice(pred, gt, {job.ref.subject, job.ref.slice, 0, arm.name}, c.hd_percentile);
            apply_offset(outcomes[j].records, arm.segmenter.dsc_offset);
            outcomes[j].ok = true;
        } catch (const std::exception& e) {
            outcomes[j].error = e.what();
        }
    });

    std::vector<MetricsRecord> per_ds[2];
    // Rows ordered by arm (config order), class, dataset, subject, slice.
    std::vector<std::tuple<std::size_t, int, int, std::string, int, const MetricsRecord*>> rows;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        const auto& job = jobs[j];
        if (!outcomes[j].ok) {
            rep.failures.push_back({c.exp2_arms[job.arm].name, ds_name[job.dataset], job.ref.subject, job.ref.slice,
                                    outcomes[j].error});
            log.line("exp2 slice failure: " + job.ref.subject + " " + std::to_string(job.ref.slice) + ": " +
                     outcomes[j].error);
            continue;
        }
        for (const auto& r : outcomes[j].records) {
            per_ds[job.dataset].push_back(r);
            rows.emplace_back(job.arm, static_cast<int>(r.cls), job.dataset, r.subject, r.slice, &r);
        }
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        return std::tie(std::get<0>(a), std::get<1>(a), std::get<2>(a), std::get<3>(a), std::get<4>(a)) <
               std::tie(std::get<0>(b), std::get<1>(b), std::get<2>(b), std::get<3>(b), std::get<4>(b));
    });
    std::string box = "arm,class,dataset,subject,slice,dsc,hdrfdst,volsmty\n";
    for (const auto& [arm, cls, ds, subject, slice, r] : rows) {
        box += c.exp2_arms[arm].name + ',' + to_string(r->cls) + ',' + ds_name[ds] + ',' + subject + ',' +
               std::to_string(slice) + ',' + format_fixed6(r->dsc) + ',' +
               (r->hd_valid ? format_fixed6(r->hdrfdst) : std::string("NA")) + ',' + format_fixed6(r->volsmty) + '\n';
    }
    emit(rep, c.output_dir, "exp2/boxplot.csv", box);

    std::string report = "Exp2, " + std::to_string(c.exp2_arms.size()) + " arm(s), " +
                         std::to_string(rep.failures.size()) + " failed slice evaluation(s)\n" + notes;
    for (int ds = 0; ds < 2; ++ds) {
        if (ds == 1 && c.ds2.empty()) continue;
        const std::string tag = ds == 0 ? "ds1" : "ds2";
        if (per_ds[ds].empty()) {
            report += "\n" + ds_name[ds] + ": no evaluated slices\n";
            log.line("exp2: no records for " + ds_name[ds]);
            continue;
        }
        const auto summary = summarize(per_ds[ds], c.stats);
        emit(rep, c.output_dir, "exp2/metrics_" + tag + ".csv", metrics_csv(per_ds[ds]));
        emit(rep, c.output_dir, "exp2/summary_" + tag + ".csv", summary_csv(summary));
        emit(rep, c.output_dir, "exp2/comparisons_" + tag + ".csv", comparisons_csv(summary));
        report += "\n" + ds_name[ds] + (ds == 0 ? " (fold 0 test)\n" : "\n") + summary_report(summary);
        for (auto cls : {MetricClass::GM, MetricClass::SC}) {
            std::vector<std::pair<std::string, std::vector<double>>> groups;
            for (const auto& arm : c.exp2_arms) {
                std::vector<double> v;
                for (const auto& r : per_ds[ds])
                    if (r.method == arm.name && r.cls == cls) v.push_back(r.dsc);
                groups.emplace_back(arm.name, std::move(v));
            }
            const std::string cname = to_string(cls);
            emit(rep, c.output_dir, "exp2/boxplot_" + tag + "_" + cname + ".svg",
                 boxplot_svg(ds_name[ds] + " " + cname + " DSC", groups));
        }
        rep.records.insert(rep.records.end(), per_ds[ds].begin(), per_ds[ds].end());
    }
    emit(rep, c.output_dir, "exp2/report.txt", report);
    emit(rep, c.output_dir, "exp2/failures.tsv", failures_tsv(rep.failures));
    log.line("exp2 done: " + std::to_string(rep.records.size()) + " records");
    return rep;
}

BoxStats box_stats(std::vector<double> v) {
    BoxStats b;
    if (v.empty()) return b;
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
        const double pos = p * static_cast<double>(v.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    b.q1 = q(0.25);
    b.median = q(0.5);
    b.q3 = q(0.75);
    const double iqr = b.q3 - b.q1, lo = b.q1 - 1.5 * iqr, hi = b.q3 + 1.5 * iqr;
    b.whisker_lo = b.q1;
    b.whisker_hi = b.q3;
    for (double x : v) {
        if (x < lo || x > hi) {
            b.outliers.push_back(x);
            continue;
        }
        b.whisker_lo = std::min(b.whisker_lo, x);
        b.whisker_hi = std::max(b.whisker_hi, x);
    }
    return b;
}

std::string boxplot_svg(const std::string& title, const std::vector<std::pair<std::string, std::vector<double>>>& groups) {
    const double left = 60, top = 40, plot_h = 260, slot = 100;
    const double width = left + 20 + slot * static_cast<double>(std::max<std::size_t>(groups.size(), 1));
    const double height = top + plot_h + 50;
    auto ypos = [&](double v) { return top + plot_h * (1.0 - std::clamp(v, 0.0, 1.0)); };
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + svg_num(width) + "\" height=\"" +
                    svg_num(height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<text x=\"" + svg_num(width / 2) + "\" y=\"20\" text-anchor=\"middle\">" + xml_escape(title) + "</text>\n";
    s += "<line x1=\"" + svg_num(left) + "\" y1=\"" + svg_num(top) + "\" x2=\"" + svg_num(left) + "\" y2=\"" +
         svg_num(top + plot_h) + "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 5; ++t) {
        const double v = t * 0.2, y = ypos(v);
        s += "<line x1=\"" + svg_num(left - 4) + "\" y1=\"" + svg_num(y) + "\" x2=\"" + svg_num(width - 20) +
             "\" y2=\"" + svg_num(y) + "\" stroke=\"#ddd\"/>\n";
        s += "<text x=\"" + svg_num(left - 8) + "\" y=\"" + svg_num(y + 4) + "\" text-anchor=\"end\">" + svg_num(v) +
             "</text>\n";
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const double cx = left + slot * (static_cast<double>(g) + 0.5);
        s += "<text x=\"" + svg_num(cx) + "\" y=\"" + svg_num(top + plot_h + 20) + "\" text-anchor=\"middle\">" +
             xml_escape(groups[g].first) + " (n=" + std::to_string(groups[g].second.size()) + ")</text>\n";
        if (groups[g].second.empty()) continue;
        const auto b = box_stats(groups[g].second);
        const double x0 = cx - 25, x1 = cx + 25;
        s += "<line x1=\"" + svg_num(cx) + "\" y1=\"" + svg_num(ypos(b.whisker_lo)) + "\" x2=\"" + svg_num(cx) +
             "\" y2=\"" + svg_num(ypos(b.whisker_hi)) + "\" stroke=\"black\"/>\n";
        s += "<rect x=\"" + svg_num(x0) + "\" y=\"" + svg_num(ypos(b.q3)) + "\" width=\"50\" height=\"" +
             svg_num(ypos(b.q1) - ypos(b.q3)) + "\" fill=\"#9cc3e6\" stroke=\"black\"/>\n";
        s += "<line x1=\"" + svg_num(x0) + "\" y1=\"" + svg_num(ypos(b.median)) + "\" x2=\"" + svg_num(x1) +
             "\" y2=\"" + svg_num(ypos(b.median)) + "\" stroke=\"black\" stroke-width=\"2\"/>\n";
        for (double w : {b.whisker_lo, b.whisker_hi})
            s += "<line x1=\"" + svg_num(cx - 12) + "\" y1=\"" + svg_num(ypos(w)) + "\" x2=\"" + svg_num(cx + 12) +
                 "\" y2=\"" + svg_num(ypos(w)) + "\" stroke=\"black\"/>\n";
        for (double o : b.outliers)
            s += "<circle cx=\"" + svg_num(cx) + "\" cy=\"" + svg_num(ypos(o)) +
                 "\" r=\"3\" fill=\"none\" stroke=\"black\"/>\n";
    }
    return s + "</svg>\n";
}

} // namespace cordkit
