// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cordkit/augment.hpp"
#include "cordkit/bids.hpp"
#include "cordkit/cvsplit.hpp"
#include "cordkit/groupreg.hpp"
#include "cordkit/harness.hpp"
#include "cordkit/preprocess.hpp"
#include "cordkit/rng.hpp"
#include "cordkit/segmetrics.hpp"
#include "cordkit/segstats.hpp"
#include "cordkit/tables.hpp"
#include "temp_dir.hpp"

using namespace cordkit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string num(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Collects failed checks; the first few go into the detail text.
class Checks {
public:
    void expect(bool cond, const std::string& what) {
        if (cond) return;
        if (failed_ < 3) notes_ += (notes_.empty() ? "" : "; ") + what;
        ++failed_;
    }
    Outcome outcome(const std::string& summary) const {
        if (failed_ == 0) return {true, summary};
        return {false, std::to_string(failed_) + " failed check(s): " + notes_ + " [" + summary + "]"};
    }

private:
    int failed_ = 0;
    std::string notes_;
};

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

// 1. Metrics against set-based brute force.

Outcome metric_oracle() {
    Stopwatch clock;
    Checks checks;
    Rng rng(101);
    int pairs = 0;
    double worst = 0.0;
    for (int n : {8, 16, 32}) {
        for (int t = 0; t < 100; ++t, ++pairs) {
            const double pa = rng.uniform(0.05, 0.6), pb = rng.uniform(0.05, 0.6);
            BinaryMask a{n, n, std::vector<std::uint8_t>(std::size_t(n) * n)};
            BinaryMask b = a;
            std::vector<std::pair<int, int>> sa, sb;
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    const auto i = std::size_t(y) * n + x;
                    a.bits[i] = rng.uniform() < pa;
                    b.bits[i] = rng.uniform() < pb;
                    if (a.bits[i]) sa.emplace_back(x, y);
                    if (b.bits[i]) sb.emplace_back(x, y);
                }
            if (sa.empty()) a.bits[0] = 1, sa.emplace_back(0, 0);
            if (sb.empty()) b.bits.back() = 1, sb.emplace_back(n - 1, n - 1);

            const std::set<std::pair<int, int>> A(sa.begin(), sa.end()), B(sb.begin(), sb.end());
            std::size_t inter = 0;
            for (const auto& p : A) inter += B.count(p);
            const double na = double(A.size()), nb = double(B.size());
            const double dsc = 2.0 * double(inter) / (na + nb);
            const double vs = 1.0 - std::abs(na - nb) / (na + nb);
            auto directed = [](const auto& from, const auto& to) {
                double worst_sq = 0;
                for (const auto& [x0, y0] : from) {
                    double best = std::numeric_limits<double>::infinity();
                    for (const auto& [x1, y1] : to)
                        best = std::min(best, double((x0 - x1) * (x0 - x1) + (y0 - y1) * (y0 - y1)));
                    worst_sq = std::max(worst_sq, best);
                }
                return worst_sq;
            };
            const double hd = std::sqrt(std::max(directed(sa, sb), directed(sb, sa)));

            const double d1 = std::abs(dice(a, b) - dsc), d2 = std::abs(volumetric_similarity(a, b) - vs);
            worst = std::max({worst, d1, d2});
            checks.expect(d1 <= 1e-12, "DSC mismatch at " + std::to_string(n));
            checks.expect(d2 <= 1e-12, "VOLSMTY mismatch at " + std::to_string(n));
            checks.expect(hausdorff(a, b) == hd, "HDRFDST mismatch at " + std::to_string(n));
        }
    }
    const double s = clock.seconds();
    checks.expect(s < 10.0, "runtime " + num(s) + " s");
    return checks.outcome(std::to_string(pairs) + " pairs, max DSC/VOLSMTY error " + num(worst) + ", HD exact, " +
                          num(s) + " s");
}

// 2. Preprocessing on all four DS1 acquisition rows.

Outcome preprocessing_contract() {
    TempDir dir("acc-prep");
    auto spec = PhantomSpec::preset("ds1");
    spec.groups = {10, 6, 4};
    spec.slices = {10, 10};
    const auto raw = generate_phantoms(spec, 202, dir / "raw");
    std::set<std::pair<double, double>> rows;
    for (const auto& s : raw.subjects) rows.insert({s.in_plane_res, s.slice_thickness});

    Stopwatch clock;
    const auto rep = run_preprocessing(dir / "raw", dir / "bids", {}, spec.dataset_id);
    const double s = clock.seconds();

    Checks checks;
    checks.expect(rows.size() == 4, std::to_string(rows.size()) + " resolution rows");
    checks.expect(rep.processed == 200, std::to_string(rep.processed) + " slices processed");
    checks.expect(rep.exclusions.empty(), "exclusions present");
    double worst = 0.0;
    std::size_t slices = 0;
    for (const auto& sub : rep.manifest.subjects) {
        const auto stacks = load_bids_subject(dir / "bids", sub.subject_id);
        for (std::size_t k = 0; k < stacks.images.size(); ++k, ++slices) {
            const auto& img = stacks.images[k];
            const auto& m = stacks.masks[k];
            checks.expect(img.width() == 128 && img.height() == 128 && m.width() == 128 && m.height() == 128,
                          sub.subject_id + " not 128x128");
            checks.expect(std::abs(img.spacing().x - 0.175) < 1e-9 && std::abs(img.spacing().y - 0.175) < 1e-9,
                          sub.subject_id + " spacing");
            const auto [bx, by] = barycenter(m, kSpinalCordCodes);
            worst = std::max(worst, std::hypot(bx - 64.0, by - 64.0));
        }
    }
    checks.expect(slices == 200, std::to_string(slices) + " slices read back");
    checks.expect(worst <= 1.0, "barycenter offset " + num(worst) + " px");
    checks.expect(s < 30.0, "runtime " + num(s) + " s");
    return checks.outcome(std::to_string(slices) + " slices over " + std::to_string(rows.size()) +
                          " rows, max barycenter offset " + num(worst) + " px, " + num(s) + " s");
}

// 3. Fold plan on a DS1-shaped manifest.

Outcome fold_plan() {
    DatasetManifest m;
    m.dataset_id = "DS1";
    Rng rng(303);
    const Group groups[3] = {Group::HC, Group::ALS, Group::MS};
    const int counts[3] = {34, 25, 13};
    int id = 1;
    for (int g = 0; g < 3; ++g)
        for (int i = 0; i < counts[g]; ++i, ++id) {
            SubjectRecord r;
            char name[16];
            std::snprintf(name, sizeof name, "sub-%02d", id);
            r.subject_id = name;
            r.group = groups[g];
            r.n_slices = 8 + int(rng.below(13));
            m.subjects.push_back(r);
        }
    const auto plan = plan_folds(m, SplitOptions{.k = 9, .seed = 7, .stratify_fold0 = true});
    const auto violations = validate_plan(plan, m);

    Checks checks;
    checks.expect(plan.folds.size() == 9, "fold count");
    checks.expect(plan.stratified_fold0, "fold 0 not stratified");
    for (const auto& v : violations) checks.expect(false, v.kind + ": " + v.message);

    // Independent re-check of the ratios and of per-group shares in fold 0.
    double worst = 0.0, worst_group = 0.0;
    std::set<std::string> tested;
    const double target[3] = {0.70, 0.15, 0.15};
    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
        double share[3] = {0, 0, 0}, total = 0;
        std::map<Group, std::array<double, 4>> per_group;
        for (const auto& a : plan.folds[f]) {
            const auto* s = m.find(a.subject);
            share[int(a.role)] += s->n_slices;
            total += s->n_slices;
            per_group[s->group][int(a.role)] += s->n_slices;
            per_group[s->group][3] += s->n_slices;
            if (a.role == Role::test) tested.insert(a.subject);
        }
        checks.expect(plan.folds[f].size() == m.subjects.size(), "fold " + std::to_string(f) + " not a partition");
        for (int r = 0; r < 3; ++r) worst = std::max(worst, std::abs(share[r] / total - target[r]));
        if (f == 0)
            for (const auto& [g, v] : per_group)
                for (int r = 0; r < 3; ++r) worst_group = std::max(worst_group, std::abs(v[r] / v[3] - target[r]));
    }
    checks.expect(worst <= 0.05 + 1e-12, "ratio deviation " + num(worst));
    checks.expect(worst_group <= 0.05 + 1e-12, "fold 0 group deviation " + num(worst_group));
    checks.expect(tested.size() == m.subjects.size(), "test coverage " + std::to_string(tested.size()));
    return checks.outcome("72 subjects, " + std::to_string(violations.size()) +
                          " violations, max share deviation " + num(100 * worst) + " pts, fold-0 group max " +
                          num(100 * worst_group) + " pts, coverage " + std::to_string(tested.size()) + "/72");
}

// Small BIDS tree shared by criteria 4 and 9.
fs::path prepared(const fs::path& dir, const std::string& name, const std::string& preset,
                  std::array<int, 3> groups, int slices, std::uint64_t seed) {
    auto spec = PhantomSpec::preset(preset);
    spec.groups = groups;
    spec.slices = {slices, slices};
    generate_phantoms(spec, seed, dir / (name + "_raw"));
    run_preprocessing(dir / (name + "_raw"), dir / name, {}, spec.dataset_id);
    return dir / name;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
}

// 4. Identity transforms and thread-count independence.

bool identical(const AugmentedSample& s, const ImageSlice& img, const LabelMask& mask) {
    return std::equal(s.image.data().begin(), s.image.data().end(), img.data().begin(), img.data().end()) &&
           std::equal(s.labels.codes().begin(), s.labels.codes().end(), mask.codes().begin(), mask.codes().end());
}

Outcome augmentation_identity() {
    TempDir dir("acc-aug");
    const auto bids = prepared(dir.path(), "bids", "ds1", {3, 2, 1}, 2, 404);
    const auto stacks = load_bids_subject(bids, "sub-01");
    const auto& img = stacks.images[0];
    const auto& mask = stacks.masks[0];

    Checks checks;
    checks.expect(identical(affine_transform(img, mask, 0.0, 1.0, 0.0, 0.0), img, mask), "affine");
    checks.expect(identical(resize_aug(img, mask, 1.0), img, mask), "resize");
    checks.expect(identical(elastic_deform(img, mask, 7, 0.0, 9), img, mask), "elastic");
    for (int period = 2; period <= 6; ++period)
        checks.expect(identical(ghosting(img, mask, period, 0.0), img, mask), "ghosting");
    for (double cutoff : {0.3, 0.7})
        checks.expect(identical(motion_artifact(img, mask, 0.0, cutoff), img, mask), "motion");

    const auto space = build_template_from_bids(bids, {}, 1);
    const TemplateProvider provider(space);
    AugmentConfig c;
    c.policy = Policy::hybrid;
    c.master_seed = 44;
    c.samples_per_slice = 2;
    run_augmentation(bids, dir / "t1", c, &provider, 2, 1);
    run_augmentation(bids, dir / "t8", c, &provider, 2, 8);
    const auto a = tree_bytes(dir / "t1"), b = tree_bytes(dir / "t8");
    checks.expect(!a.empty() && a == b, "1-thread and 8-thread trees differ");

    std::set<std::string> kinds;
    const auto prov = read_table(dir / "t1/provenance.tsv", '\t');
    const auto col = std::find(prov.header.begin(), prov.header.end(), "kind") - prov.header.begin();
    for (const auto& row : prov.rows) kinds.insert(row[col]);
    std::string kind_list;
    for (const auto& k : kinds) kind_list += (kind_list.empty() ? "" : ",") + k;
    return checks.outcome("5 kernels bit-exact at identity; " + std::to_string(a.size()) +
                          " files identical at 1 and 8 threads (kinds " + kind_list + ")");
}

// 5. Spectral kernels against the analytic impulse response.

Outcome spectral_checks() {
    Checks checks;
    const int n = 64;
    Rng rng(505);
    std::vector<double> v(std::size_t(n) * n);
    for (auto& x : v) x = rng.uniform();
    const ImageSlice img(n, n, Spacing{1, 1}, v);
    const LabelMask mask(n, n, Spacing{1, 1});

    double worst = 0.0;
    auto diff = [&](const ImageSlice& out) {
        double d = 0;
        for (std::size_t i = 0; i < v.size(); ++i) d = std::max(d, std::abs(out.data()[i] - v[i]));
        return d;
    };
    for (int axis : {0, 1}) {
        worst = std::max(worst, diff(ghosting(img, mask, 3, 0.0, axis).image));
        worst = std::max(worst, diff(motion_artifact(img, mask, 0.0, 0.5, axis).image));
    }
    checks.expect(worst <= 1e-9, "identity deviation " + num(worst));

    // Zeroing the even non-DC lines along y leaves the DC term 1/n plus half
    // the impulse at its source and minus half at the half-FOV position.
    const int x0 = 10, y0 = 20;
    std::vector<double> imp(std::size_t(n) * n, 0.0);
    imp[std::size_t(y0) * n + x0] = 1.0;
    const auto g = ghosting(ImageSlice(n, n, Spacing{1, 1}, imp), mask, 2, 1.0, 1).image;
    double err = 0.0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double expect = 0.0;
            if (x == x0) expect = y == y0 ? 0.5 + 1.0 / n : y == (y0 + n / 2) % n ? 0.5 - 1.0 / n : 1.0 / n;
            err = std::max(err, std::abs(g.at(x, y) - expect));
        }
    checks.expect(err <= 1e-9, "impulse response error " + num(err));
    const double replica = g.at(x0, (y0 + n / 2) % n);
    return checks.outcome("identity max deviation " + num(worst) + "; replica at half FOV " + num(replica, 6) +
                          " (source " + num(g.at(x0, y0), 6) + "), max error " + num(err));
}

// Phantom group for criteria 6 and 7: noise-free 128x128 slices.
struct Group10 {
    std::vector<ImageSlice> images;
    std::vector<LabelMask> labels;
    std::vector<std::string> subjects;
};

Group10 phantom_group(int count) {
    auto spec = PhantomSpec::preset("ds1");
    spec.noise_std = 0.0;
    spec.fov_mm = 128 * 0.175;
    Group10 g;
    for (int i = 0; i < count; ++i) {
        char name[16];
        std::snprintf(name, sizeof name, "sub-%02d", i + 1);
        auto p = render_phantom_slice(spec, 0.175, 606, name, 0);
        g.images.push_back(gaussian_smooth(p.image, 1.0));
        g.labels.push_back(p.labels);
        g.subjects.push_back(name);
    }
    return g;
}

ImageSlice shifted(const ImageSlice& img, int tx, int ty) {
    std::vector<double> v(img.size());
    const int w = img.width(), h = img.height();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            v[std::size_t(y) * w + x] = img.at(std::clamp(x - tx, 0, w - 1), std::clamp(y - ty, 0, h - 1));
    return img.with_data(std::move(v));
}

// 6. Registration and template properties.

Outcome registration(const Group10& g, TemplateSpace& space) {
    Checks checks;
    const auto fixed = normalize_unit(g.images[0]);
    const int tx = 3, ty = -2;
    const auto f = register_pair(shifted(fixed, tx, ty), fixed);
    double mx = 0, my = 0, cnt = 0;
    for (std::size_t i = 0; i < f.size(); ++i)
        if (g.labels[0].codes()[i] != 0) {
            mx += f.dx()[i];
            my += f.dy()[i];
            cnt += 1;
        }
    mx /= cnt;
    my /= cnt;
    const double terr = std::hypot(mx - tx, my - ty);
    checks.expect(terr <= 0.5, "translation error " + num(terr) + " px");

    int pairs = 0, increases = 0;
    std::vector<ImageSlice> norm;
    for (const auto& im : g.images) norm.push_back(normalize_unit(im));
    for (std::size_t i = 0; i < norm.size(); ++i)
        for (std::size_t j = 0; j < norm.size(); ++j) {
            if (i == j) continue;
            const auto phi = register_pair(norm[i], norm[j]);
            ++pairs;
            if (ssd(warp_clamped(norm[i], phi), norm[j]) > ssd(norm[i], norm[j])) ++increases;
        }
    checks.expect(increases == 0, std::to_string(increases) + " pairs with SSD increase");

    Stopwatch clock;
    space = build_template(g.images, g.subjects, {}, 3, 1);
    const double s = clock.seconds();
    const double mean_field = space.trace.back().mean_field_norm;
    checks.expect(space.inverse_residual < 0.2, "inverse residual " + num(space.inverse_residual) + " px");
    checks.expect(mean_field < 0.5, "mean field " + num(mean_field) + " px");
    checks.expect(s < 120.0, "template runtime " + num(s) + " s");
    return checks.outcome("translation error " + num(terr) + " px; " + std::to_string(pairs) +
                          " pairs without SSD increase; residual " + num(space.inverse_residual) +
                          " px; mean field " + num(mean_field) + " px; template " + num(s) + " s");
}

// 7. Realistic augmentation contract.

Outcome realistic_da(const Group10& g, const TemplateSpace& space) {
    Checks checks;
    const std::size_t n = g.images.size();
    double self_min = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = realistic_augment(g.images[i], g.labels[i], g.subjects[i], g.subjects[i], space);
        self_min = std::min({self_min, dice_codes(s.labels, g.labels[i], false), dice_codes(s.labels, g.labels[i], true)});
    }
    checks.expect(self_min > 0.98, "self-morph DSC " + num(self_min, 4));

    int pairs = 0, improved = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const auto s = realistic_augment(g.images[i], g.labels[i], g.subjects[i], g.subjects[j], space);
            ++pairs;
            if (dice_codes(s.labels, g.labels[j], false) > dice_codes(g.labels[i], g.labels[j], false)) ++improved;
        }
    const double frac = double(improved) / pairs;
    checks.expect(frac >= 0.95, "overlap improved in " + num(100 * frac) + "% of pairs");

    std::map<std::string, std::vector<std::pair<ImageSlice, LabelMask>>> dataset;
    for (std::size_t i = 0; i < n; ++i) dataset[g.subjects[i]].push_back({g.images[i], g.labels[i]});
    const auto set = generate_realistic_set(dataset, space);
    std::map<std::string, std::set<std::string>> targets;
    for (const auto& s : set) {
        checks.expect(s.provenance.target != s.provenance.source.subject, "self target in set");
        targets[s.provenance.source.subject].insert(s.provenance.target);
    }
    checks.expect(set.size() == n * (n - 1), "set size " + std::to_string(set.size()));
    for (const auto& [src, t] : targets) checks.expect(t.size() == n - 1, src + " has " + std::to_string(t.size()));
    return checks.outcome("self-morph min DSC " + num(self_min, 4) + "; overlap improved in " +
                          std::to_string(improved) + "/" + std::to_string(pairs) + " pairs; " +
                          std::to_string(set.size()) + " samples = N(N-1) with N=" + std::to_string(n));
}

// 8. Statistics against enumeration.

double enumerated_p(const std::vector<double>& d) {
    const std::size_t n = d.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return std::abs(d[a]) < std::abs(d[b]); });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[idx[j + 1]]) == std::abs(d[idx[i]])) ++j;
        for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = (double(i) + double(j)) / 2.0 + 1.0;
        i = j + 1;
    }
    const double mu = std::accumulate(rank.begin(), rank.end(), 0.0) / 2.0;
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] > 0) w += rank[i];
    std::size_t hits = 0;
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask >> i & 1) s += rank[i];
        if (std::abs(s - mu) >= std::abs(w - mu) - 1e-9) ++hits;
    }
    return double(hits) / double(std::size_t{1} << n);
}

Outcome statistics() {
    Checks checks;
    Rng rng(808);
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        std::vector<double> d(1 + rng.below(10));
        for (auto& x : d) {
            x = double(int(rng.below(9)) - 4) * 0.5;
            if (x == 0) x = 0.25;
        }
        const auto r = wilcoxon_signed_rank(d);
        checks.expect(r.method == TestMethod::exact, "not exact");
        worst = std::max(worst, std::abs(r.p_value - enumerated_p(d)));
    }
    checks.expect(worst <= 1e-12, "Wilcoxon deviation " + num(worst));

    std::vector<double> v(10);
    std::iota(v.begin(), v.end(), 0.0);
    const double tm = trimmed_stats(v, 0.15).trimmed_mean;
    checks.expect(std::abs(tm - 4.5) <= 1e-12, "trimmed mean " + num(tm, 10));

    int monotone_cases = 0;
    for (int t = 0; t < 200; ++t, ++monotone_cases) {
        std::vector<double> p(1 + rng.below(12));
        for (auto& x : p) x = rng.uniform();
        const auto c = bonferroni(p);
        for (std::size_t i = 0; i < p.size(); ++i) {
            checks.expect(c[i] >= p[i] && c[i] <= 1.0, "bonferroni bound");
            checks.expect(std::abs(c[i] - std::min(1.0, p[i] * double(p.size()))) <= 1e-15, "bonferroni value");
            for (std::size_t j = 0; j < p.size(); ++j)
                if (p[i] <= p[j]) checks.expect(c[i] <= c[j], "bonferroni order");
        }
    }
    return checks.outcome("200 Wilcoxon cases, max |p - enumeration| " + num(worst) + "; trimmed mean " +
                          num(tm, 10) + "; Bonferroni monotone on " + std::to_string(monotone_cases) + " vectors");
}

// 9. End-to-end pipeline.

struct PipelineRun {
    Outcome outcome;
    fs::path out;
};

PipelineRun pipeline(const fs::path& root, std::uint64_t seed) {
    Checks checks;
    Stopwatch clock;
    auto spec = PhantomSpec::preset("ds1");
    spec.groups = {5, 3, 2};
    spec.slices = {3, 3};
    generate_phantoms(spec, seed, root / "raw1");
    run_preprocessing(root / "raw1", root / "ds1", {}, "DS1");
    auto spec2 = PhantomSpec::preset("ds2");
    spec2.groups = {3, 0, 0};
    spec2.slices = {10, 10};
    generate_phantoms(spec2, seed + 1, root / "raw2");
    run_preprocessing(root / "raw2", root / "ds2", {}, "DS2");

    const auto manifest = scan_bids_tree(root / "ds1");
    const auto plan = plan_folds(manifest, SplitOptions{.k = 9, .seed = seed, .stratify_fold0 = true});
    write_folds_tsv(plan, root / "folds.tsv");

    const auto space = build_template_from_bids(root / "ds1", {}, 3, 1);
    save_template_space(space, root / "template");
    checks.expect(space.inverse_residual < 0.2, "template residual " + num(space.inverse_residual));
    const auto loaded = load_template_space(root / "template");
    const TemplateProvider provider(loaded);
    AugmentConfig aug;
    aug.policy = Policy::hybrid;
    aug.master_seed = seed;
    const auto arun = run_augmentation(root / "ds1", root / "augmented", aug, &provider, 1, 1);
    checks.expect(arun.samples == manifest.total_slices(), "augmented " + std::to_string(arun.samples));

    ExperimentConfig c;
    c.ds1 = root / "ds1";
    c.ds2 = root / "ds2";
    c.output_dir = root / "out";
    c.fold_plan = root / "folds.tsv";
    c.template_dir = root / "template";
    c.master_seed = seed;
    c.augment = aug;
    c.exp1_arms = {{"MCS", "mcs", {}}, {"SCS", "scs", {}}};
    c.exp2_arms = {{"without", Policy::without, false, {}},
                   {"hybrid", Policy::hybrid, false, {}},
                   {"degraded", Policy::without, false, {"baseline", {}, 0.1}}};
    const auto e1 = run_exp1(c);
    const auto e2 = run_exp2(c);
    checks.expect(e1.failures.empty() && e2.failures.empty(), "slice failures");

    const auto fig4 = read_table(c.output_dir / "exp1/fig4.csv", ',');
    std::set<std::string> fold_keys;
    for (const auto& row : fig4.rows)
        if (row[0] == "fold") fold_keys.insert(row[1] + row[2] + row[3] + row[4]);
    checks.expect(fold_keys.size() == 9 * 2 * 2 * 3, "Fig.4 table has " + std::to_string(fold_keys.size()) + " keys");

    const auto box = read_table(c.output_dir / "exp2/boxplot.csv", ',');
    checks.expect(!box.rows.empty(), "empty Fig.5 table");
    for (const char* f : {"exp2/boxplot_ds2_GM.svg", "exp2/boxplot_ds2_SC.svg", "exp1/summary_groups.csv"})
        checks.expect(fs::exists(c.output_dir / f), std::string("missing ") + f);

    const auto cmp = read_table(c.output_dir / "exp2/comparisons_ds2.csv", ',');
    auto col = [&](const std::string& name) {
        return std::find(cmp.header.begin(), cmp.header.end(), name) - cmp.header.begin();
    };
    int detected = 0;
    double worst_p = 0.0;
    std::string worst_text = "none";
    for (const auto& row : cmp.rows) {
        if (row[col("method_a")] != "degraded" && row[col("method_b")] != "degraded") continue;
        checks.expect(std::stoi(row[col("n")]) == 30, "n = " + row[col("n")]);
        const double p = std::stod(row[col("corrected_p")]);
        if (p >= worst_p) {
            worst_p = p;
            worst_text = row[col("corrected_p")];
        }
        if (p < 0.05) ++detected;
    }
    checks.expect(detected == 4, std::to_string(detected) + "/4 degraded comparisons significant");
    const double s = clock.seconds();
    checks.expect(s < 300.0, "runtime " + num(s) + " s");
    return {checks.outcome("10 subjects, " + std::to_string(e1.records.size()) + " Exp1 and " +
                           std::to_string(e2.records.size()) + " Exp2 records; " + std::to_string(box.rows.size()) +
                           " Fig.5 rows; degradation detected in " + std::to_string(detected) +
                           "/4 comparisons (max corrected p " + worst_text + ", n=30); " + num(s) + " s"),
            c.output_dir};
}

// 10. Repeat of 9 with the same seed.

std::map<std::string, std::string> result_files(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
        if (it->is_directory() && it->path().filename() == "work") {
            it.disable_recursion_pending();
            continue;
        }
        const auto ext = it->path().extension();
        if (it->is_regular_file() && (ext == ".csv" || ext == ".svg" || ext == ".tsv"))
            out[fs::relative(it->path(), root).string()] = slurp(it->path());
    }
    return out;
}

Outcome determinism(const fs::path& first_out, const fs::path& second_root) {
    const auto second = pipeline(second_root, 909);
    const auto a = result_files(first_out), b = result_files(second.out);
    Checks checks;
    checks.expect(second.outcome.ok, "repeat run: " + second.outcome.detail);
    checks.expect(!a.empty(), "no outputs");
    std::size_t differing = 0;
    std::string first_diff;
    for (const auto& [name, bytes] : a) {
        const auto it = b.find(name);
        if (it == b.end() || it->second != bytes) {
            if (first_diff.empty()) first_diff = name;
            ++differing;
        }
    }
    checks.expect(a.size() == b.size(), "file sets differ");
    checks.expect(differing == 0, std::to_string(differing) + " files differ, e.g. " + first_diff);
    return checks.outcome(std::to_string(a.size()) + " CSV/SVG/TSV files byte-identical across two runs");
}

} // namespace

int main() {
    int failed = 0;
    auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.ok) ++failed;
        std::printf("%s %2d %-34s %s\n", o.ok ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    };

    report(1, "metric oracle equivalence", metric_oracle);
    report(2, "preprocessing contract", preprocessing_contract);
    report(3, "fold-plan constraints", fold_plan);
    report(4, "augmentation identity/determinism", augmentation_identity);
    report(5, "ghosting/motion spectral checks", spectral_checks);

    Group10 group;
    TemplateSpace space;
    bool have_space = false;
    report(6, "registration and template", [&] {
        group = phantom_group(10);
        auto o = registration(group, space);
        have_space = true;
        return o;
    });
    report(7, "realistic DA contract", [&] {
        if (!have_space) return Outcome{false, "no template space (criterion 6 raised)"};
        return realistic_da(group, space);
    });
    report(8, "statistics oracles", statistics);

    TempDir e2e("acc-e2e");
    fs::path first_out;
    report(9, "end-to-end Exp1/Exp2", [&] {
        auto run = pipeline(e2e / "run1", 909);
        first_out = run.out;
        return run.outcome;
    });
    report(10, "determinism", [&] {
        if (first_out.empty()) return Outcome{false, "criterion 9 produced no outputs"};
        return determinism(first_out, e2e / "run2");
    });

    std::printf("%d of 10 criteria passed\n", 10 - failed);
    return failed == 0 ? 0 : 1;
}
