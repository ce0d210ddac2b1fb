#include <set>

#include "json.hpp"

#include "cordkit/error.hpp"
#include "cordkit/harness.hpp"

namespace cordkit {

using nlohmann::json;

namespace {

// Reads an object section, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        require(j_.is_object(), ErrorCode::config, where() + " must be an object");
    }
    ~Section() = default;

    bool has(const char* key) {
        used_.insert(key);
        return j_.contains(key);
    }
    const json& raw(const char* key) {
        used_.insert(key);
        return j_.at(key);
    }

    template <class T>
    void get(const char* key, T& out) {
        if (!has(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            fail(ErrorCode::config, where() + "." + key + ": " + e.what());
        }
    }
    void get(const char* key, Range& out) {
        if (!has(key)) return;
        const auto& v = j_.at(key);
        require(v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number(), ErrorCode::config,
                where() + "." + key + " must be [lo, hi]");
        out = {v[0].get<double>(), v[1].get<double>()};
    }
    void get(const char* key, std::filesystem::path& out) {
        std::string s;
        if (!has(key)) return;
        get(key, s);
        out = s;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            require(used_.count(k) > 0, ErrorCode::config, "unknown key " + where() + "." + k);
    }
    std::string where() const { return path_.empty() ? "<root>" : path_; }
    const std::string& path() const { return path_; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <class T, std::size_t N>
void get_array(Section& s, const char* key, std::array<T, N>& out) {
    if (!s.has(key)) return;
    const auto& v = s.raw(key);
    require(v.is_array() && v.size() == N, ErrorCode::config,
            s.where() + "." + key + " must be an array of " + std::to_string(N));
    try {
        for (std::size_t i = 0; i < N; ++i) out[i] = v[i].get<T>();
    } catch (const json::exception& e) {
        fail(ErrorCode::config, s.where() + "." + key + ": " + e.what());
    }
}

void read_phantom(const json& j, PhantomSpec& p) {
    Section s(j, "phantom");
    if (s.has("preset")) {
        std::string name;
        s.get("preset", name);
        p = PhantomSpec::preset(name);
    }
    s.get("dataset_id", p.dataset_id);
    get_array(s, "groups", p.groups);
    get_array(s, "slices", p.slices);
    s.get("cord_rx", p.cord_rx);
    s.get("cord_ry", p.cord_ry);
    s.get("lobe_offset", p.lobe_offset);
    s.get("lobe_rx", p.lobe_rx);
    s.get("lobe_ry", p.lobe_ry);
    s.get("csf_width", p.csf_width);
    s.get("rotation_deg", p.rotation_deg);
    s.get("center_jitter", p.center_jitter);
    s.get("background", p.background);
    s.get("csf", p.csf);
    s.get("wm", p.wm);
    s.get("gm", p.gm);
    s.get("noise_std", p.noise_std);
    s.get("fov_mm", p.fov_mm);
    s.get("echoes", p.echoes);
    if (s.has("resolutions")) {
        const auto& rows = s.raw("resolutions");
        require(rows.is_array(), ErrorCode::config, "phantom.resolutions must be an array");
        p.resolutions.clear();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            Section r(rows[i], "phantom.resolutions[" + std::to_string(i) + "]");
            ResolutionRow row;
            std::string acq = to_string(row.acq);
            r.get("acq", acq);
            try {
                row.acq = acquisition_from_string(acq);
            } catch (const Error& e) {
                fail(ErrorCode::config, r.where() + ".acq: " + e.what());
            }
            r.get("res", row.res);
            r.get("thickness", row.thickness);
            r.get("center", row.center);
            r.get("weight", row.weight);
            r.finish();
            p.resolutions.push_back(row);
        }
    }
    s.finish();
}

void read_augment(const json& j, AugmentConfig& a, int& epochs) {
    Section s(j, "augment");
    if (s.has("policy")) {
        std::string p;
        s.get("policy", p);
        try {
            a.policy = policy_from_string(p);
        } catch (const Error& e) {
            fail(ErrorCode::config, std::string("augment.policy: ") + e.what());
        }
    }
    s.get("rotation_deg", a.rotation_deg);
    s.get("scale", a.scale);
    s.get("translation_px", a.translation_px);
    s.get("resize_scale", a.resize_scale);
    s.get("elastic_grid", a.elastic_grid);
    s.get("elastic_max_disp", a.elastic_max_disp);
    s.get("ghost_period", a.ghost_period);
    s.get("ghost_intensity", a.ghost_intensity);
    s.get("motion_shift_px", a.motion_shift_px);
    s.get("motion_cutoff", a.motion_cutoff);
    s.get("phase_axis", a.phase_axis);
    get_array(s, "weights", a.weights);
    s.get("samples_per_slice", a.samples_per_slice);
    s.get("epochs", epochs);
    s.finish();
}

SegmenterSpec read_segmenter(const json& j, const std::string& path) {
    Section s(j, path);
    SegmenterSpec seg;
    s.get("kind", seg.kind);
    s.get("command", seg.external.command);
    s.get("timeout_s", seg.external.timeout_s);
    s.get("dsc_offset", seg.dsc_offset);
    s.finish();
    return seg;
}

void read_experiment(const json& j, ExperimentConfig& e) {
    Section s(j, "experiment");
    s.get("ds1", e.ds1);
    s.get("ds2", e.ds2);
    s.get("output_dir", e.output_dir);
    s.get("fold_plan", e.fold_plan);
    s.get("template", e.template_dir);
    if (s.has("folds")) {
        std::string f;
        s.get("folds", f);
        require(f == "all" || f == "fold-0", ErrorCode::config, "experiment.folds must be all or fold-0");
        e.all_folds = f == "all";
    }
    s.get("hd_percentile", e.hd_percentile);
    s.get("trim_fraction", e.stats.trim_fraction);
    s.get("alpha", e.stats.alpha);
    if (s.has("correction")) {
        std::string c;
        s.get("correction", c);
        try {
            e.stats.correction = correction_from_string(c);
        } catch (const Error& err) {
            fail(ErrorCode::config, std::string("experiment.correction: ") + err.what());
        }
    }
    if (s.has("exp1_arms")) {
        const auto& arms = s.raw("exp1_arms");
        require(arms.is_array(), ErrorCode::config, "experiment.exp1_arms must be an array");
        e.exp1_arms.clear();
        for (std::size_t i = 0; i < arms.size(); ++i) {
            const std::string path = "experiment.exp1_arms[" + std::to_string(i) + "]";
            Section a(arms[i], path);
            Exp1Arm arm;
            a.get("name", arm.name);
            a.get("design", arm.design);
            if (a.has("segmenter")) arm.segmenter = read_segmenter(a.raw("segmenter"), path + ".segmenter");
            a.finish();
            e.exp1_arms.push_back(std::move(arm));
        }
    }
    if (s.has("exp2_arms")) {
        const auto& arms = s.raw("exp2_arms");
        require(arms.is_array(), ErrorCode::config, "experiment.exp2_arms must be an array");
        e.exp2_arms.clear();
        for (std::size_t i = 0; i < arms.size(); ++i) {
            const std::string path = "experiment.exp2_arms[" + std::to_string(i) + "]";
            Section a(arms[i], path);
            Exp2Arm arm;
            a.get("name", arm.name);
            std::string policy = "without";
            a.get("policy", policy);
            if (policy == "reference") {
                arm.reference = true;
            } else {
                try {
                    arm.policy = policy_from_string(policy);
                } catch (const Error& err) {
                    fail(ErrorCode::config, path + ".policy: " + err.what());
                }
            }
            if (a.has("segmenter")) arm.segmenter = read_segmenter(a.raw("segmenter"), path + ".segmenter");
            a.finish();
            e.exp2_arms.push_back(std::move(arm));
        }
    }
    s.finish();
}

void default_arms(ExperimentConfig& e) {
    e.exp1_arms = {{"MCS", "mcs", {}}, {"SCS", "scs", {}}};
    e.exp2_arms = {{"without", Policy::without, false, {}},
                   {"classical", Policy::classical, false, {}},
                   {"hybrid", Policy::hybrid, false, {}}};
}

} // namespace

PipelineConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        fail(ErrorCode::config, std::string("config is not valid JSON: ") + e.what());
    }
    PipelineConfig c;
    default_arms(c.experiment);
    Section s(j, "");
    require(s.has("schema_version"), ErrorCode::config, "config needs schema_version");
    int version = 0;
    s.get("schema_version", version);
    require(version == kSchemaVersion, ErrorCode::config,
            "unsupported schema_version " + std::to_string(version) + " (expected " + std::to_string(kSchemaVersion) + ")");
    s.get("seed", c.seed);
    s.get("threads", c.threads);
    require(c.threads >= 1, ErrorCode::config, "threads must be >= 1");
    if (s.has("phantom")) read_phantom(s.raw("phantom"), c.phantom);
    if (s.has("prep")) {
        Section p(s.raw("prep"), "prep");
        p.get("target_res", c.prep.target_res);
        p.get("crop", c.prep.crop);
        if (p.has("combine")) {
            std::string m;
            p.get("combine", m);
            try {
                c.prep.combine_mode = combine_mode_from_string(m);
            } catch (const Error& e) {
                fail(ErrorCode::config, std::string("prep.combine: ") + e.what());
            }
        }
        p.get("dataset_id", c.prep_dataset_id);
        p.finish();
    }
    if (s.has("split")) {
        Section p(s.raw("split"), "split");
        p.get("k", c.split_k);
        p.get("stratify_fold0", c.split_stratify);
        p.get("tolerance", c.split_tolerance);
        p.finish();
    }
    if (s.has("registration")) {
        Section p(s.raw("registration"), "registration");
        p.get("levels", c.registration.levels);
        p.get("iters_per_level", c.registration.iters_per_level);
        p.get("step", c.registration.step);
        p.get("fluid_sigma", c.registration.fluid_sigma);
        p.get("diffusion_sigma", c.registration.diffusion_sigma);
        p.get("convergence_tol", c.registration.convergence_tol);
        p.get("outer_iters", c.template_outer_iters);
        p.finish();
    }
    if (s.has("augment")) read_augment(s.raw("augment"), c.augment, c.augment_epochs);
    if (s.has("experiment")) read_experiment(s.raw("experiment"), c.experiment);
    s.finish();

    c.prep.threads = c.threads;
    c.augment.master_seed = c.seed;
    auto& e = c.experiment;
    e.master_seed = c.seed;
    e.threads = c.threads;
    e.k = c.split_k;
    e.stratify_fold0 = c.split_stratify;
    e.epochs = c.augment_epochs;
    e.augment = c.augment;

    validate(c.phantom);
    validate(c.prep);
    validate(c.registration);
    validate(c.augment);
    require(c.split_k >= 2, ErrorCode::config, "split.k must be >= 2");
    require(c.template_outer_iters >= 0, ErrorCode::config, "registration.outer_iters must be >= 0");
    require(c.augment_epochs >= 1, ErrorCode::config, "augment.epochs must be >= 1");
    return c;
}

std::string default_config_json() {
    const PipelineConfig c = parse_config(R"({"schema_version": 1})");
    auto range = [](const Range& r) { return json::array({r.lo, r.hi}); };
    json res = json::array();
    for (const auto& r : c.phantom.resolutions)
        res.push_back({{"acq", to_string(r.acq)}, {"res", r.res}, {"thickness", r.thickness}, {"center", r.center},
                       {"weight", r.weight}});
    const auto& p = c.phantom;
    const auto& a = c.augment;
    auto seg = [](const SegmenterSpec& s) {
        return json{{"kind", s.kind}, {"command", s.external.command}, {"timeout_s", s.external.timeout_s},
                    {"dsc_offset", s.dsc_offset}};
    };
    json arms1 = json::array(), arms2 = json::array();
    for (const auto& arm : c.experiment.exp1_arms)
        arms1.push_back({{"name", arm.name}, {"design", arm.design}, {"segmenter", seg(arm.segmenter)}});
    for (const auto& arm : c.experiment.exp2_arms)
        arms2.push_back({{"name", arm.name}, {"policy", arm.reference ? "reference" : to_string(arm.policy)},
                         {"segmenter", seg(arm.segmenter)}});
    json j = {
        {"schema_version", kSchemaVersion},
        {"seed", c.seed},
        {"threads", c.threads},
        {"phantom",
         {{"preset", "ds1"}, {"dataset_id", p.dataset_id}, {"groups", p.groups}, {"slices", p.slices},
          {"cord_rx", range(p.cord_rx)}, {"cord_ry", range(p.cord_ry)}, {"lobe_offset", range(p.lobe_offset)},
          {"lobe_rx", range(p.lobe_rx)}, {"lobe_ry", range(p.lobe_ry)}, {"csf_width", range(p.csf_width)},
          {"rotation_deg", range(p.rotation_deg)}, {"center_jitter", range(p.center_jitter)},
          {"background", range(p.background)}, {"csf", range(p.csf)}, {"wm", range(p.wm)}, {"gm", range(p.gm)},
          {"noise_std", p.noise_std}, {"fov_mm", p.fov_mm}, {"echoes", p.echoes}, {"resolutions", res}}},
        {"prep",
         {{"target_res", c.prep.target_res}, {"crop", c.prep.crop}, {"combine", "rss"}, {"dataset_id", ""}}},
        {"split", {{"k", c.split_k}, {"stratify_fold0", c.split_stratify}, {"tolerance", c.split_tolerance}}},
        {"registration",
         {{"levels", c.registration.levels}, {"iters_per_level", c.registration.iters_per_level},
          {"step", c.registration.step}, {"fluid_sigma", c.registration.fluid_sigma},
          {"diffusion_sigma", c.registration.diffusion_sigma}, {"convergence_tol", c.registration.convergence_tol},
          {"outer_iters", c.template_outer_iters}}},
        {"augment",
         {{"policy", to_string(a.policy)}, {"rotation_deg", range(a.rotation_deg)}, {"scale", range(a.scale)},
          {"translation_px", range(a.translation_px)}, {"resize_scale", range(a.resize_scale)},
          {"elastic_grid", a.elastic_grid}, {"elastic_max_disp", range(a.elastic_max_disp)},
          {"ghost_period", range(a.ghost_period)}, {"ghost_intensity", range(a.ghost_intensity)},
          {"motion_shift_px", range(a.motion_shift_px)}, {"motion_cutoff", range(a.motion_cutoff)},
          {"phase_axis", a.phase_axis}, {"weights", a.weights}, {"samples_per_slice", a.samples_per_slice},
          {"epochs", c.augment_epochs}}},
        {"experiment",
         {{"ds1", ""}, {"ds2", ""}, {"output_dir", ""}, {"fold_plan", ""}, {"template", ""}, {"folds", "all"},
          {"hd_percentile", c.experiment.hd_percentile}, {"trim_fraction", c.experiment.stats.trim_fraction},
          {"alpha", c.experiment.stats.alpha}, {"correction", to_string(c.experiment.stats.correction)},
          {"exp1_arms", arms1}, {"exp2_arms", arms2}}},
    };
    return j.dump(2) + "\n";
}

} // namespace cordkit
