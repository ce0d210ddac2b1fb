#include "cordkit/augment.hpp"

#include <charconv>
#include <cmath>
#include <numbers>
#include <optional>

#include "json.hpp"

#include "cordkit/bids.hpp"
#include "cordkit/error.hpp"
#include "cordkit/nifti.hpp"
#include "cordkit/parallel.hpp"
#include "cordkit/rng.hpp"
#include "cordkit/tables.hpp"

namespace cordkit {

namespace fs = std::filesystem;

const char* to_string(Policy p) noexcept {
    switch (p) {
    case Policy::without: return "without";
    case Policy::classical: return "classical";
    case Policy::smart: return "smart";
    case Policy::realistic: return "realistic";
    case Policy::hybrid: return "hybrid";
    }
    return "?";
}

Policy policy_from_string(const std::string& s) {
    if (s == "without") return Policy::without;
    if (s == "classical") return Policy::classical;
    if (s == "smart") return Policy::smart;
    if (s == "realistic") return Policy::realistic;
    if (s == "hybrid") return Policy::hybrid;
    fail(ErrorCode::config, "unknown augmentation policy '" + s + "'");
}

namespace {

void check_range(const Range& r, const char* name, double min, double max) {
    require(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi, ErrorCode::config,
            std::string(name) + ": range must be finite with lo <= hi");
    require(r.lo >= min && r.hi <= max, ErrorCode::config, std::string(name) + ": range out of bounds");
}

std::string shortest(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

} // namespace

void validate(const AugmentConfig& c) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    check_range(c.rotation_deg, "rotation_deg", -inf, inf);
    check_range(c.scale, "scale", 1e-6, inf);
    check_range(c.translation_px, "translation_px", -inf, inf);
    check_range(c.resize_scale, "resize_scale", 1e-6, inf);
    check_range(c.elastic_max_disp, "elastic_max_disp", 0.0, inf);
    check_range(c.ghost_period, "ghost_period", 2.0, inf);
    check_range(c.ghost_intensity, "ghost_intensity", 0.0, 1.0);
    check_range(c.motion_shift_px, "motion_shift_px", -inf, inf);
    check_range(c.motion_cutoff, "motion_cutoff", 0.0, 1.0);
    require(c.motion_cutoff.lo > 0.0 && c.motion_cutoff.hi < 1.0, ErrorCode::config, "motion_cutoff must lie in (0,1)");
    require(c.elastic_grid >= 2, ErrorCode::config, "elastic_grid must be >= 2");
    require(c.phase_axis == 0 || c.phase_axis == 1, ErrorCode::config, "phase_axis must be 0 or 1");
    require(c.samples_per_slice >= 1, ErrorCode::config, "samples_per_slice must be >= 1");
    double sum = 0.0;
    for (double w : c.weights) {
        require(std::isfinite(w) && w >= 0.0, ErrorCode::config, "weights must be non-negative");
        sum += w;
    }
    require(sum > 0.0, ErrorCode::config, "weights must not all be zero");
}

double Provenance::param(const std::string& name) const {
    for (const auto& [k, v] : params)
        if (k == name) return v;
    fail(ErrorCode::invalid_argument, "provenance has no parameter '" + name + "'");
}

std::string Provenance::params_text() const {
    std::string out;
    for (const auto& [k, v] : params) out += (out.empty() ? "" : ";") + k + '=' + shortest(v);
    return out;
}

namespace {

AugmentedSample identity_sample(const ImageSlice& img, const LabelMask& mask, std::string kind,
                                std::vector<std::pair<std::string, double>> params) {
    return {img, mask, Provenance{img.id(), std::move(kind), std::move(params), 0, {}, {}}};
}

void exact_cos_sin(double deg, double& c, double& s) {
    const double q = deg / 90.0;
    if (q == std::round(q)) {
        static constexpr double cs[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
        const auto k = static_cast<std::size_t>(((static_cast<long long>(q) % 4) + 4) % 4);
        c = cs[k][0];
        s = cs[k][1];
        return;
    }
    const double rad = deg * std::numbers::pi / 180.0;
    c = std::cos(rad);
    s = std::sin(rad);
}

} // namespace

AugmentedSample affine_transform(const ImageSlice& img, const LabelMask& mask, double theta_deg, double scale,
                                 double tx, double ty) {
    require(img.same_grid(mask.width(), mask.height()), ErrorCode::dimension, "image and mask grids differ");
    require(scale > 0 && std::isfinite(scale), ErrorCode::invalid_argument, "scale must be positive");
    std::vector<std::pair<std::string, double>> params{{"theta", theta_deg}, {"scale", scale}, {"tx", tx}, {"ty", ty}};
    if (theta_deg == 0.0 && scale == 1.0 && tx == 0.0 && ty == 0.0)
        return identity_sample(img, mask, "affine", std::move(params));

    double c, s;
    exact_cos_sin(theta_deg, c, s);
    const int w = img.width(), h = img.height();
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    std::vector<double> pix(img.size());
    std::vector<std::uint8_t> lab(img.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            // q = R(-theta)(p - c - t) / s + c
            const double dx = x - cx - tx, dy = y - cy - ty;
            const double qx = (c * dx + s * dy) / scale + cx;
            const double qy = (-s * dx + c * dy) / scale + cy;
            const auto i = static_cast<std::size_t>(y) * w + x;
            pix[i] = std::max(0.0, bilinear_sample(img, qx, qy));
            lab[i] = nearest_sample(mask, qx, qy);
        }
    return {img.with_data(std::move(pix)), mask.with_codes(std::move(lab)),
            Provenance{img.id(), "affine", std::move(params), 0, {}, {}}};
}

AugmentedSample resize_aug(const ImageSlice& img, const LabelMask& mask, double scale) {
    auto out = affine_transform(img, mask, 0.0, scale, 0.0, 0.0);
    out.provenance.kind = "resize";
    out.provenance.params = {{"scale", scale}};
    return out;
}

DeformationField elastic_field(int width, int height, int grid_n, double max_disp, std::uint64_t seed) {
    require(grid_n >= 2, ErrorCode::invalid_argument, "grid_n must be >= 2");
    require(max_disp >= 0 && std::isfinite(max_disp), ErrorCode::invalid_argument, "max_disp must be >= 0");
    Rng rng(seed);
    const auto n = static_cast<std::size_t>(grid_n);
    std::vector<double> cx(n * n), cy(n * n);
    for (std::size_t i = 0; i < n * n; ++i) {
        cx[i] = rng.uniform(-max_disp, max_disp);
        cy[i] = rng.uniform(-max_disp, max_disp);
    }
    std::vector<double> dx(static_cast<std::size_t>(width) * height), dy(dx.size());
    const double gx = width > 1 ? (grid_n - 1.0) / (width - 1.0) : 0.0;
    const double gy = height > 1 ? (grid_n - 1.0) / (height - 1.0) : 0.0;
    for (int y = 0; y < height; ++y) {
        const double v = y * gy;
        const auto j0 = std::min(static_cast<std::size_t>(v), n - 2);
        const double fy = v - static_cast<double>(j0);
        for (int x = 0; x < width; ++x) {
            const double u = x * gx;
            const auto i0 = std::min(static_cast<std::size_t>(u), n - 2);
            const double fx = u - static_cast<double>(i0);
            auto lerp2 = [&](const std::vector<double>& g) {
                const double a = g[j0 * n + i0], b = g[j0 * n + i0 + 1];
                const double c = g[(j0 + 1) * n + i0], d = g[(j0 + 1) * n + i0 + 1];
                return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy;
            };
            const auto k = static_cast<std::size_t>(y) * width + x;
            dx[k] = lerp2(cx);
            dy[k] = lerp2(cy);
        }
    }
    return DeformationField(width, height, std::move(dx), std::move(dy));
}

AugmentedSample elastic_deform(const ImageSlice& img, const LabelMask& mask, int grid_n, double max_disp,
                               std::uint64_t seed) {
    require(img.same_grid(mask.width(), mask.height()), ErrorCode::dimension, "image and mask grids differ");
    std::vector<std::pair<std::string, double>> params{{"grid", grid_n}, {"max_disp", max_disp}};
    if (max_disp == 0.0) {
        auto out = identity_sample(img, mask, "elastic", std::move(params));
        out.provenance.seed = seed;
        return out;
    }
    const auto f = elastic_field(img.width(), img.height(), grid_n, max_disp, seed);
    return {warp_image(img, f), warp_labels(mask, f), Provenance{img.id(), "elastic", std::move(params), seed, {}, {}}};
}

namespace {

// Index of DFT bin k along an axis of length n in linear centred order.
std::size_t centred_position(std::size_t k, std::size_t n) {
    const auto half = static_cast<long long>(n / 2);
    const long long signed_k = static_cast<long long>(k) < static_cast<long long>((n + 1) / 2)
                                   ? static_cast<long long>(k)
                                   : static_cast<long long>(k) - static_cast<long long>(n);
    return static_cast<std::size_t>(signed_k + half);
}

double signed_frequency(std::size_t k, std::size_t n) {
    return k < (n + 1) / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
}

} // namespace

AugmentedSample ghosting(const ImageSlice& img, const LabelMask& mask, int period, double intensity, int axis) {
    require(period >= 2, ErrorCode::invalid_argument, "ghost period must be >= 2");
    require(intensity >= 0.0 && intensity <= 1.0, ErrorCode::invalid_argument, "ghost intensity must be in [0,1]");
    require(axis == 0 || axis == 1, ErrorCode::invalid_argument, "axis must be 0 or 1");
    std::vector<std::pair<std::string, double>> params{{"period", period}, {"intensity", intensity}, {"axis", axis}};
    if (intensity == 0.0) return identity_sample(img, mask, "ghosting", std::move(params));

    auto spec = dft2(img);
    const double keep = 1.0 - intensity;
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            const int k = axis == 1 ? y : x;
            if (k != 0 && k % period == 0) spec(x, y) *= keep;
        }
    return {idft2_magnitude(spec, img.spacing(), img.id()), mask,
            Provenance{img.id(), "ghosting", std::move(params), 0, {}, {}}};
}

AugmentedSample motion_artifact(const ImageSlice& img, const LabelMask& mask, double shift_px, double cutoff, int axis) {
    require(cutoff > 0.0 && cutoff <= 1.0, ErrorCode::invalid_argument, "cutoff must be in (0,1]");
    require(axis == 0 || axis == 1, ErrorCode::invalid_argument, "axis must be 0 or 1");
    require(std::isfinite(shift_px), ErrorCode::invalid_argument, "shift must be finite");
    std::vector<std::pair<std::string, double>> params{{"shift", shift_px}, {"cutoff", cutoff}, {"axis", axis}};
    if (shift_px == 0.0) return identity_sample(img, mask, "motion", std::move(params));

    auto spec = dft2(img);
    const auto n = static_cast<std::size_t>(axis == 1 ? spec.height : spec.width);
    const auto moved_lines = static_cast<std::size_t>(std::floor(cutoff * static_cast<double>(n)));
    for (std::size_t k = 0; k < n; ++k) {
        if (centred_position(k, n) >= moved_lines) continue;
        const double phase = -2.0 * std::numbers::pi * signed_frequency(k, n) * shift_px / static_cast<double>(n);
        const std::complex<double> ramp(std::cos(phase), std::sin(phase));
        if (axis == 1)
            for (int x = 0; x < spec.width; ++x) spec(x, static_cast<int>(k)) *= ramp;
        else
            for (int y = 0; y < spec.height; ++y) spec(static_cast<int>(k), y) *= ramp;
    }
    return {idft2_magnitude(spec, img.spacing(), img.id()), mask,
            Provenance{img.id(), "motion", std::move(params), 0, {}, {}}};
}

namespace {

double draw(Rng& rng, const Range& r) { return r.lo == r.hi ? r.lo : rng.uniform(r.lo, r.hi); }

int draw_int(Rng& rng, const Range& r) {
    const auto lo = static_cast<long long>(std::ceil(r.lo));
    const auto hi = static_cast<long long>(std::floor(r.hi));
    require(lo <= hi, ErrorCode::config, "integer range contains no integer");
    return static_cast<int>(lo + static_cast<long long>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))));
}

AugmentedSample with_seed(AugmentedSample s, std::uint64_t seed) {
    s.provenance.seed = seed;
    return s;
}

} // namespace

AugmentedSample random_affine(const ImageSlice& img, const LabelMask& mask, const AugmentConfig& c, std::uint64_t seed) {
    Rng rng(seed);
    const double theta = draw(rng, c.rotation_deg);
    const double s = draw(rng, c.scale);
    const double tx = draw(rng, c.translation_px);
    const double ty = draw(rng, c.translation_px);
    return with_seed(affine_transform(img, mask, theta, s, tx, ty), seed);
}

AugmentedSample random_resize(const ImageSlice& img, const LabelMask& mask, const AugmentConfig& c, std::uint64_t seed) {
    Rng rng(seed);
    return with_seed(resize_aug(img, mask, draw(rng, c.resize_scale)), seed);
}

AugmentedSample random_elastic(const ImageSlice& img, const LabelMask& mask, const AugmentConfig& c,
                               std::uint64_t seed) {
    Rng rng(seed);
    const double m = draw(rng, c.elastic_max_disp);
    return elastic_deform(img, mask, c.elastic_grid, m, combine_seed(seed, 1));
}

AugmentedSample random_ghosting(const ImageSlice& img, const LabelMask& mask, const AugmentConfig& c,
                                std::uint64_t seed) {
    Rng rng(seed);
    const int period = draw_int(rng, c.ghost_period);
    const double intensity = draw(rng, c.ghost_intensity);
    return with_seed(ghosting(img, mask, period, intensity, c.phase_axis), seed);
}

AugmentedSample random_motion(const ImageSlice& img, const LabelMask& mask, const AugmentConfig& c, std::uint64_t seed) {
    Rng rng(seed);
    const double shift = draw(rng, c.motion_shift_px);
    const double cutoff = draw(rng, c.motion_cutoff);
    return with_seed(motion_artifact(img, mask, shift, cutoff, c.phase_axis), seed);
}

std::uint64_t sample_seed(std::uint64_t master_seed, const SliceId& slice, int epoch, int index) {
    const auto s = combine_seed(combine_seed(master_seed, hash_string(slice.str())), static_cast<std::uint64_t>(epoch));
    return index == 0 ? s : combine_seed(s, static_cast<std::uint64_t>(index));
}

namespace {

enum class Category { classical, smart, realistic };

AugmentedSample apply_category(Category cat, const ImageSlice& img, const LabelMask& mask, const AugmentConfig& c,
                               const RealisticProvider* provider, Rng& rng, std::uint64_t seed) {
    const auto child = combine_seed(seed, 0x5eed);
    if (cat == Category::realistic) {
        std::vector<std::string> targets;
        if (provider) targets = provider->targets_for(img.id().subject);
        if (!targets.empty()) {
            const auto& target = targets[rng.below(targets.size())];
            auto s = provider->morph(img, mask, target);
            s.provenance.source = img.id();
            s.provenance.kind = "realistic";
            s.provenance.target = target;
            s.provenance.seed = child;
            return s;
        }
        auto s = apply_category(Category::smart, img, mask, c, provider, rng, seed);
        s.provenance.note = "realistic provider empty; fell back to smart";
        return s;
    }
    if (cat == Category::classical)
        return rng.below(2) == 0 ? random_affine(img, mask, c, child) : random_resize(img, mask, c, child);
    switch (rng.below(3)) {
    case 0: return random_elastic(img, mask, c, child);
    case 1: return random_ghosting(img, mask, c, child);
    default: return random_motion(img, mask, c, child);
    }
}

} // namespace

AugmentedSample augment_sample(const ImageSlice& img, const LabelMask& mask, const AugmentConfig& c,
                               const RealisticProvider* provider, int epoch, int index) {
    validate(c);
    const auto seed = sample_seed(c.master_seed, img.id(), epoch, index);
    Rng rng(seed);
    switch (c.policy) {
    case Policy::without: {
        auto s = identity_sample(img, mask, "identity", {});
        s.provenance.seed = seed;
        return s;
    }
    case Policy::classical: return apply_category(Category::classical, img, mask, c, provider, rng, seed);
    case Policy::smart: return apply_category(Category::smart, img, mask, c, provider, rng, seed);
    case Policy::realistic: return apply_category(Category::realistic, img, mask, c, provider, rng, seed);
    case Policy::hybrid: break;
    }
    const double total = c.weights[0] + c.weights[1] + c.weights[2];
    const double u = rng.uniform() * total;
    Category cat = Category::realistic;
    if (u < c.weights[0])
        cat = Category::classical;
    else if (u < c.weights[0] + c.weights[1] || c.weights[2] == 0.0)
        cat = Category::smart;
    return apply_category(cat, img, mask, c, provider, rng, seed);
}

AugmentedSample hybrid_sample(const ImageSlice& img, const LabelMask& mask, const AugmentConfig& c,
                              const RealisticProvider* provider, int epoch, int index) {
    require(c.policy == Policy::hybrid, ErrorCode::config, "hybrid_sample needs the hybrid policy");
    return augment_sample(img, mask, c, provider, epoch, index);
}

AugmentedSample replay(const ImageSlice& img, const LabelMask& mask, const Provenance& p,
                       const RealisticProvider* provider) {
    AugmentedSample s = [&] {
        if (p.kind == "identity") return identity_sample(img, mask, "identity", {});
        if (p.kind == "affine")
            return affine_transform(img, mask, p.param("theta"), p.param("scale"), p.param("tx"), p.param("ty"));
        if (p.kind == "resize") return resize_aug(img, mask, p.param("scale"));
        if (p.kind == "elastic")
            return elastic_deform(img, mask, static_cast<int>(p.param("grid")), p.param("max_disp"), p.seed);
        if (p.kind == "ghosting")
            return ghosting(img, mask, static_cast<int>(p.param("period")), p.param("intensity"),
                            static_cast<int>(p.param("axis")));
        if (p.kind == "motion")
            return motion_artifact(img, mask, p.param("shift"), p.param("cutoff"), static_cast<int>(p.param("axis")));
        if (p.kind == "realistic") {
            require(provider != nullptr, ErrorCode::invalid_argument, "replaying a realistic sample needs a provider");
            return provider->morph(img, mask, p.target);
        }
        fail(ErrorCode::invalid_argument, "unknown transform kind '" + p.kind + "'");
    }();
    s.provenance = p;
    return s;
}

std::string provenance_tsv(const std::vector<std::pair<std::string, Provenance>>& rows) {
    std::string out = "sample_id\tsource\tkind\tparameters\tseed\ttarget\tnote\n";
    for (const auto& [id, p] : rows)
        out += id + '\t' + p.source.str() + '\t' + p.kind + '\t' + p.params_text() + '\t' + std::to_string(p.seed) +
               '\t' + p.target + '\t' + p.note + '\n';
    return out;
}

AugmentRun run_augmentation(const fs::path& bids_root, const fs::path& out_dir, const AugmentConfig& c,
                            const RealisticProvider* provider, int epochs, int threads) {
    validate(c);
    require(epochs >= 1, ErrorCode::config, "epochs must be >= 1");
    const auto manifest = scan_bids_tree(bids_root);
    std::vector<SubjectStacks> data;
    for (const auto& s : manifest.subjects) data.push_back(load_bids_subject(bids_root, s.subject_id));

    struct Item {
        std::size_t subject;
        std::size_t slice;
        int epoch;
        int index;
    };
    std::vector<Item> items;
    for (std::size_t s = 0; s < data.size(); ++s)
        for (int e = 0; e < epochs; ++e)
            for (int r = 0; r < c.samples_per_slice; ++r)
                for (std::size_t k = 0; k < data[s].images.size(); ++k) items.push_back({s, k, e, r});

    std::vector<std::optional<AugmentedSample>> results(items.size());
    parallel_for(items.size(), threads, [&](std::size_t i) {
        const auto& it = items[i];
        results[i] = augment_sample(data[it.subject].images[it.slice], data[it.subject].masks[it.slice], c, provider,
                                    it.epoch, it.index);
    });

    AugmentRun run;
    std::vector<std::pair<std::string, Provenance>> prov;
    std::size_t i = 0;
    while (i < items.size()) {
        const auto& first = items[i];
        const auto& sub = manifest.subjects[first.subject];
        const std::string desc = "desc-e" + std::to_string(first.epoch) + "s" + std::to_string(first.index);
        std::vector<ImageSlice> imgs;
        std::vector<LabelMask> masks;
        for (; i < items.size() && items[i].subject == first.subject && items[i].epoch == first.epoch &&
               items[i].index == first.index;
             ++i) {
            auto& r = *results[i];
            prov.emplace_back(sub.subject_id + "_" + desc + "_slice-" + [&] {
                char buf[8];
                std::snprintf(buf, sizeof buf, "%03zu", items[i].slice);
                return std::string(buf);
            }(), r.provenance);
            if (!r.provenance.note.empty()) run.notices.push_back(r.provenance.source.str() + ": " + r.provenance.note);
            imgs.push_back(std::move(r.image));
            masks.push_back(std::move(r.labels));
            ++run.samples;
        }
        const auto dir = out_dir / sub.subject_id / "anat";
        write_image_stack(dir / (sub.subject_id + "_" + desc + "_T2star.nii.gz"), imgs, sub.slice_thickness);
        write_label_stack(dir / (sub.subject_id + "_" + desc + "_seg-manual.nii.gz"), masks, sub.slice_thickness);
    }
    write_text_file(out_dir / "provenance.tsv", provenance_tsv(prov));
    nlohmann::json desc = {{"Name", manifest.dataset_id + " augmented"},
                           {"BIDSVersion", "1.8.0"},
                           {"DatasetType", "derivative"},
                           {"GeneratedBy", nlohmann::json::array({{{"Name", "cordkit augment"},
                                                                   {"Policy", to_string(c.policy)}}})}};
    write_text_file(out_dir / "dataset_description.json", desc.dump(2) + "\n");
    return run;
}

} // namespace cordkit
