#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "doctest.h"

#include "cordkit/bids.hpp"
#include "cordkit/error.hpp"
#include "cordkit/harness.hpp"
#include "cordkit/nifti.hpp"
#include "cordkit/rng.hpp"
#include "cordkit/tables.hpp"
#include "temp_dir.hpp"

using namespace cordkit;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double dice_codes(const LabelMask& a, const LabelMask& b, bool gm) {
    double inter = 0, sa = 0, sb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = gm ? a.codes()[i] == 2 : a.codes()[i] != 0;
        const bool y = gm ? b.codes()[i] == 2 : b.codes()[i] != 0;
        inter += x && y;
        sa += x;
        sb += y;
    }
    return sa + sb == 0 ? 1.0 : 2 * inter / (sa + sb);
}

PhantomSpec small_spec(int subjects, int slices) {
    auto s = PhantomSpec::preset("ds1");
    s.groups = {subjects - subjects / 2, subjects / 2, 0};
    s.slices = {slices, slices};
    return s;
}

// phantom -> prep, returns the BIDS root.
fs::path prepared(const TempDir& dir, const PhantomSpec& spec, std::uint64_t seed, const std::string& name) {
    generate_phantoms(spec, seed, dir / (name + "_raw"));
    run_preprocessing(dir / (name + "_raw"), dir / name, {}, spec.dataset_id);
    return dir / name;
}

std::string cp_gt_command() { return "test -f {input} && cp {gt} {output}"; }

} // namespace

TEST_CASE("phantom presets mirror the dataset structure") {
    const auto ds1 = PhantomSpec::preset("ds1");
    CHECK(ds1.groups == std::array<int, 3>{34, 25, 13});
    CHECK(ds1.resolutions.size() == 4);
    CHECK((ds1.slices[0] + ds1.slices[1]) / 2.0 == doctest::Approx(14.0));
    const auto ds2 = PhantomSpec::preset("ds2");
    CHECK(ds2.groups == std::array<int, 3>{5, 0, 0});
    CHECK_NOTHROW(validate(ds1));
    CHECK_NOTHROW(validate(ds2));
    CHECK_THROWS_AS(PhantomSpec::preset("ds9"), Error);
}

TEST_CASE("full DS1-shaped phantom manifest") {
    TempDir dir("phantom-ds1");
    auto spec = PhantomSpec::preset("ds1");
    spec.fov_mm = 24.0; // keeps the 72-subject run light
    spec.center_jitter = {-3.0, 3.0};
    const auto m = generate_phantoms(spec, 5, dir.path());
    REQUIRE(m.subjects.size() == 72);
    int counts[3] = {0, 0, 0};
    std::set<double> res;
    for (const auto& s : m.subjects) {
        ++counts[static_cast<int>(s.group)];
        res.insert(s.in_plane_res);
        CHECK(s.n_slices >= 8);
        CHECK(s.n_slices <= 20);
    }
    CHECK(counts[0] == 34);
    CHECK(counts[1] == 25);
    CHECK(counts[2] == 13);
    CHECK(res.size() == 4);
    const double mean = double(m.total_slices()) / 72.0;
    CHECK(mean > 12.0);
    CHECK(mean < 16.0);
    const auto back = read_participants_tsv(dir / "participants.tsv");
    REQUIRE(back.size() == m.subjects.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].subject_id == m.subjects[i].subject_id);
        CHECK(back[i].group == m.subjects[i].group);
        CHECK(back[i].in_plane_res == m.subjects[i].in_plane_res);
    }
}

TEST_CASE("phantom ground truth keeps gray matter strictly inside the cord") {
    const auto spec = PhantomSpec::preset("ds1");
    for (double res : {0.17, 0.27, 0.40})
        for (int k = 0; k < 4; ++k) {
            const auto ph = render_phantom_slice(spec, res, 11, "sub-0" + std::to_string(k + 1), k);
            const auto& m = ph.labels;
            int gm = 0;
            for (int y = 1; y + 1 < m.height(); ++y)
                for (int x = 1; x + 1 < m.width(); ++x) {
                    if (m.at(x, y) != 2) continue;
                    ++gm;
                    CHECK(m.at(x - 1, y) != 0);
                    CHECK(m.at(x + 1, y) != 0);
                    CHECK(m.at(x, y - 1) != 0);
                    CHECK(m.at(x, y + 1) != 0);
                }
            CHECK(gm > 0);
            CHECK(m.count(kSpinalCordCodes) > std::size_t(gm));
        }
}

TEST_CASE("phantom generation is deterministic") {
    TempDir a("phantom-a"), b("phantom-b");
    const auto spec = small_spec(3, 2);
    generate_phantoms(spec, 9, a.path());
    generate_phantoms(spec, 9, b.path());
    for (const auto& e : fs::recursive_directory_iterator(a.path())) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a.path());
        CHECK(slurp(e.path()) == slurp(b.path() / rel));
    }
    TempDir c("phantom-c");
    generate_phantoms(spec, 10, c.path());
    CHECK(slurp(a / "sub-01/sub-01_mask.nii.gz") != slurp(c / "sub-01/sub-01_mask.nii.gz"));
}

TEST_CASE("infeasible phantom specs are rejected") {
    auto s = PhantomSpec::preset("ds1");
    s.lobe_offset = {0.6, 0.7};
    s.lobe_rx = {0.3, 0.4};
    try {
        validate(s);
        FAIL("expected throw");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::config);
    }
    s = PhantomSpec::preset("ds1");
    s.noise_std = 0.2;
    CHECK_THROWS_AS(validate(s), Error);
    s = PhantomSpec::preset("ds1");
    s.resolutions.clear();
    CHECK_THROWS_AS(validate(s), Error);
}

TEST_CASE("otsu threshold splits a bimodal sample") {
    std::vector<double> v;
    for (int i = 0; i < 100; ++i) v.push_back(0.1 + 0.001 * i);
    for (int i = 0; i < 50; ++i) v.push_back(0.8 + 0.001 * i);
    double eta = 0;
    const double t = otsu_threshold(v, &eta);
    CHECK(t > 0.2);
    CHECK(t < 0.8);
    CHECK(eta > 0.9);
}

TEST_CASE("baseline segmenter on canonical phantoms") {
    auto spec = PhantomSpec::preset("ds1");
    spec.fov_mm = 128 * 0.175;
    spec.noise_std = 0.0;
    for (int k = 0; k < 6; ++k) {
        const auto ph = render_phantom_slice(spec, 0.175, 3, "sub-0" + std::to_string(k + 1), k);
        REQUIRE(ph.image.width() == 128);
        const auto mc = baseline_segment(ph.image, SegMode::multi_class);
        CHECK(dice_codes(mc, ph.labels, false) > 0.9);
        for (auto c : mc.codes()) CHECK(c <= 2);
        const auto sc = baseline_segment(ph.image, SegMode::sc_only);
        const auto gm = baseline_segment(ph.image, SegMode::gm_only);
        for (auto c : sc.codes()) CHECK(c <= 1);
        for (auto c : gm.codes()) CHECK((c == 0 || c == 2));
        const auto merged = merge_single_class(sc, gm);
        CHECK(std::equal(merged.codes().begin(), merged.codes().end(), mc.codes().begin()));
    }
}

TEST_CASE("baseline segmenter on pure noise") {
    Rng rng(4);
    for (int t = 0; t < 5; ++t) {
        std::vector<double> v(128 * 128);
        for (auto& x : v) x = 0.5 + 0.1 * rng.normal();
        const auto m = baseline_segment(ImageSlice(128, 128, Spacing{}, v), SegMode::multi_class);
        CHECK(m.count(kSpinalCordCodes) < 0.01 * 128 * 128);
    }
    const auto flat = baseline_segment(ImageSlice(128, 128, Spacing{}, 0.3), SegMode::multi_class);
    CHECK(flat.count(kSpinalCordCodes) == 0);
}

TEST_CASE("single-class merge gives gray matter priority") {
    const LabelMask sc(3, 1, Spacing{}, {1, 1, 0});
    const LabelMask gm(3, 1, Spacing{}, {0, 2, 2});
    const auto m = merge_single_class(sc, gm);
    CHECK(m.codes()[0] == 1);
    CHECK(m.codes()[1] == 2);
    CHECK(m.codes()[2] == 2);
}

TEST_CASE("placeholder substitution") {
    CHECK(substitute("a {input} b {output} {input} {x}", {{"input", "I"}, {"output", "O"}}) == "a I b O I {x}");
    CHECK(substitute("{input}", {{"input", "{input}"}}) == "{input}");
}

TEST_CASE("external segmenter adapter") {
    TempDir dir("external");
    const LabelMask gt(16, 16, Spacing{}, std::vector<std::uint8_t>(256, 1));
    write_label_stack(dir / "gt.nii.gz", std::span(&gt, 1));
    const ImageSlice img(16, 16, Spacing{}, 0.5);
    write_image_stack(dir / "in.nii.gz", std::span(&img, 1));

    const auto ok = run_external_segmenter({"cp {gt} {output}", 10}, dir / "in.nii.gz", dir / "out.nii.gz", 16, 16,
                                           {{"gt", (dir / "gt.nii.gz").string()}});
    CHECK(ok.count(kSpinalCordCodes) == 256);

    auto code_of = [&](const ExternalCall& call, int w) {
        try {
            run_external_segmenter(call, dir / "in.nii.gz", dir / "out.nii.gz", w, w,
                                   {{"gt", (dir / "gt.nii.gz").string()}});
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::internal;
    };
    CHECK(code_of({"exit 1", 10}, 16) == ErrorCode::external_exit);
    CHECK(code_of({"sleep 5", 0.2}, 16) == ErrorCode::external_timeout);
    CHECK(code_of({"true", 10}, 16) == ErrorCode::external_output);
    CHECK(code_of({"echo junk > {output}", 10}, 16) == ErrorCode::external_output);
    CHECK(code_of({"cp {gt} {output}", 10}, 32) == ErrorCode::external_output);
}

TEST_CASE("config parsing") {
    const auto c = parse_config(R"({"schema_version": 1, "seed": 4, "threads": 2,
        "phantom": {"preset": "ds2", "groups": [3, 0, 0]},
        "experiment": {"ds1": "a", "output_dir": "o", "folds": "fold-0",
                       "exp2_arms": [{"name": "sct", "policy": "reference",
                                      "segmenter": {"kind": "external", "command": "x {input} {output}"}}]}})");
    CHECK(c.seed == 4);
    CHECK(c.experiment.master_seed == 4);
    CHECK(c.experiment.threads == 2);
    CHECK(c.phantom.dataset_id == "DS2");
    CHECK(c.phantom.groups[0] == 3);
    CHECK_FALSE(c.experiment.all_folds);
    REQUIRE(c.experiment.exp2_arms.size() == 1);
    CHECK(c.experiment.exp2_arms[0].reference);
    CHECK(c.experiment.exp1_arms.size() == 2);

    auto code_of = [](const std::string& text) {
        try {
            parse_config(text);
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::internal;
    };
    CHECK(code_of("{}") == ErrorCode::config);
    CHECK(code_of(R"({"schema_version": 2})") == ErrorCode::config);
    CHECK(code_of(R"({"schema_version": 1, "bogus": 1})") == ErrorCode::config);
    CHECK(code_of(R"({"schema_version": 1, "prep": {"crop": "big"}})") == ErrorCode::config);
    CHECK(code_of(R"({"schema_version": 1, "augment": {"scale": [1.2, 0.9]}})") == ErrorCode::config);
    CHECK(code_of("not json") == ErrorCode::config);

    const auto defaults = parse_config(default_config_json());
    CHECK(defaults.phantom.groups == PhantomSpec::preset("ds1").groups);
    CHECK(defaults.experiment.exp2_arms.size() == 3);

    ExperimentConfig e = c.experiment;
    e.exp1_arms = {{"A", "mcs", {}}};
    e.exp1_arms[0].segmenter.kind = "external";
    e.exp1_arms[0].segmenter.external.command = "cp {gt} somewhere";
    CHECK_THROWS_AS(validate(e), Error);
}

TEST_CASE("box statistics") {
    const auto b = box_stats({1, 2, 3, 4, 5, 6, 7, 8, 9, 100});
    CHECK(b.median == doctest::Approx(5.5));
    CHECK(b.q1 == doctest::Approx(3.25));
    CHECK(b.q3 == doctest::Approx(7.75));
    CHECK(b.whisker_hi == 9);
    REQUIRE(b.outliers.size() == 1);
    CHECK(b.outliers[0] == 100);
    const auto svg = boxplot_svg("t<1>", {{"a", {0.5, 0.6}}, {"b", {}}});
    CHECK(svg.find("<svg") == 0);
    CHECK(svg.find("t&lt;1&gt;") != std::string::npos);
}

TEST_CASE("experiments end to end on a small phantom set") {
    TempDir dir("exp");
    const auto ds1 = prepared(dir, small_spec(10, 3), 21, "ds1");
    auto spec2 = PhantomSpec::preset("ds2");
    spec2.groups = {3, 0, 0};
    spec2.slices = {10, 10};
    const auto ds2 = prepared(dir, spec2, 22, "ds2");

    ExperimentConfig c;
    c.ds1 = ds1;
    c.ds2 = ds2;
    c.master_seed = 3;
    c.output_dir = dir / "out";

    SUBCASE("exp1 with oracle arms") {
        SegmenterSpec oracle{"external", {cp_gt_command(), 30}, 0.0};
        c.exp1_arms = {{"MCS", "mcs", oracle}, {"SCS", "scs", oracle}};
        c.all_folds = false;
        const auto rep = run_exp1(c);
        CHECK(rep.failures.empty());
        REQUIRE_FALSE(rep.records.empty());
        for (const auto& r : rep.records) CHECK(r.dsc == 1.0);
        const auto cmp = read_table(c.output_dir / "exp1/comparisons.csv", ',');
        const auto col = std::find(cmp.header.begin(), cmp.header.end(), "p_value") - cmp.header.begin();
        REQUIRE(cmp.rows.size() == 2);
        for (const auto& row : cmp.rows) CHECK(std::stod(row[col]) == 1.0);
    }

    SUBCASE("exp1 baseline arms fill nine folds") {
        c.exp1_arms = {{"MCS", "mcs", {}}, {"SCS", "scs", {}}};
        const auto rep = run_exp1(c);
        const auto fig4 = read_table(c.output_dir / "exp1/fig4.csv", ',');
        std::set<std::tuple<std::string, std::string, std::string, std::string>> keys;
        for (const auto& row : fig4.rows)
            if (row[0] == "fold") keys.insert({row[1], row[2], row[3], row[4]});
        CHECK(keys.size() == 9 * 2 * 2 * 3);
        for (const auto& row : fig4.rows)
            if (row[0] == "overall" && row[4] == "dsc" && row[3] == "SC") CHECK(std::stod(row[6]) > 0.85);
        CHECK(fs::exists(c.output_dir / "exp1/summary_groups.csv"));
        CHECK(fs::exists(c.output_dir / "run.log"));
    }

    SUBCASE("exp1 failing command is isolated") {
        c.exp1_arms = {{"MCS", "mcs", {}}, {"bad", "mcs", {"external", {"exit 1 # {input} {output}", 10}, 0.0}}};
        c.all_folds = false;
        const auto rep = run_exp1(c);
        CHECK_FALSE(rep.failures.empty());
        CHECK_FALSE(rep.records.empty());
        const auto f = read_table(c.output_dir / "exp1/failures.tsv", '\t');
        CHECK(f.rows.size() == rep.failures.size());
    }

    SUBCASE("exp2 null experiment and injected degradation") {
        c.exp2_arms = {{"without", Policy::without, false, {}},
                       {"classical", Policy::classical, false, {}},
                       {"degraded", Policy::without, false, {"baseline", {}, 0.1}}};
        c.stats.correction = Correction::bonferroni;
        const auto rep = run_exp2(c);
        CHECK(rep.failures.empty());
        const auto box = read_table(c.output_dir / "exp2/boxplot.csv", ',');
        const auto ds1_test = [&] {
            std::size_t n = 0;
            for (const auto& r : rep.records)
                if (r.method == "without" && r.cls == MetricClass::SC) ++n;
            return n;
        }();
        CHECK(box.rows.size() == 3 * 2 * ds1_test);
        const auto cmp = read_table(c.output_dir / "exp2/comparisons_ds2.csv", ',');
        const auto col = [&](const std::string& name) {
            return std::find(cmp.header.begin(), cmp.header.end(), name) - cmp.header.begin();
        };
        int checked = 0;
        for (const auto& row : cmp.rows) {
            const bool involves_degraded = row[col("method_a")] == "degraded" || row[col("method_b")] == "degraded";
            if (involves_degraded) {
                CHECK(std::stoi(row[col("n")]) == 30);
                CHECK(std::stod(row[col("corrected_p")]) < 0.05);
                ++checked;
            } else {
                CHECK(std::stod(row[col("p_value")]) == 1.0);
            }
        }
        CHECK(checked == 4);
        for (const char* f : {"exp2/boxplot_ds1_GM.svg", "exp2/boxplot_ds2_SC.svg", "exp2/summary_ds2.csv",
                              "exp2/classical/train_aug/provenance.tsv"})
            CHECK(fs::exists(c.output_dir / f));
    }
}
