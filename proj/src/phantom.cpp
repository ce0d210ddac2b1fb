#include <algorithm>
#include <cmath>
#include <numbers>

#include "cordkit/error.hpp"
#include "cordkit/harness.hpp"
#include "cordkit/nifti.hpp"
#include "cordkit/rng.hpp"

namespace cordkit {

namespace fs = std::filesystem;

namespace {

constexpr double kCanonicalRes = 0.175;

void check_range(const Range& r, const char* name, double lo_bound = -1e300) {
    require(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi && r.lo >= lo_bound, ErrorCode::config,
            std::string("phantom range ") + name + " is empty or out of bounds");
}

double draw(Rng& rng, const Range& r) { return r.lo == r.hi ? r.lo : rng.uniform(r.lo, r.hi); }

} // namespace

PhantomSpec PhantomSpec::preset(const std::string& name) {
    PhantomSpec s;
    if (name == "ds1") {
        s.resolutions = {{Acquisition::HR, 0.17, 2.2, "MRS", 26},
                         {Acquisition::HR, 0.20, 4.0, "MRS", 1},
                         {Acquisition::MR, 0.27, 5.0, "MRS", 42},
                         {Acquisition::LR, 0.40, 3.3, "MRS", 3}};
        return s;
    }
    if (name == "ds2") {
        s.dataset_id = "DS2";
        s.groups = {5, 0, 0};
        s.slices = {10, 14};
        s.background = {0.05, 0.10};
        s.csf = {0.22, 0.30};
        s.wm = {0.50, 0.60};
        s.gm = {0.70, 0.78};
        s.noise_std = 0.03;
        s.rotation_deg = {-25.0, 25.0};
        s.resolutions = {{Acquisition::MR, 0.26, 6.0, "ZH", 1},
                         {Acquisition::MR, 0.30, 6.6, "NY", 1},
                         {Acquisition::LR, 0.40, 2.2, "NY", 1},
                         {Acquisition::MR, 0.27, 2.5, "MRS", 2}};
        return s;
    }
    fail(ErrorCode::config, "unknown phantom preset '" + name + "' (ds1, ds2)");
}

void validate(const PhantomSpec& spec) {
    require(!spec.dataset_id.empty(), ErrorCode::config, "phantom dataset_id is empty");
    for (int g : spec.groups) require(g >= 0, ErrorCode::config, "phantom group sizes must be >= 0");
    require(spec.groups[0] + spec.groups[1] + spec.groups[2] >= 1, ErrorCode::config, "phantom has no subjects");
    require(spec.groups[0] + spec.groups[1] + spec.groups[2] <= 999, ErrorCode::config, "at most 999 phantom subjects");
    require(spec.slices[0] >= 1 && spec.slices[0] <= spec.slices[1], ErrorCode::config, "phantom slice range invalid");
    check_range(spec.cord_rx, "cord_rx", 2.0);
    check_range(spec.cord_ry, "cord_ry", 2.0);
    check_range(spec.lobe_offset, "lobe_offset", 0.0);
    check_range(spec.lobe_rx, "lobe_rx", 0.01);
    check_range(spec.lobe_ry, "lobe_ry", 0.01);
    check_range(spec.csf_width, "csf_width", 0.0);
    check_range(spec.rotation_deg, "rotation_deg");
    check_range(spec.center_jitter, "center_jitter");
    check_range(spec.background, "background", 0.0);
    check_range(spec.csf, "csf", 0.0);
    check_range(spec.wm, "wm", 0.0);
    check_range(spec.gm, "gm", 0.0);
    require(spec.noise_std >= 0 && std::isfinite(spec.noise_std), ErrorCode::config, "noise_std must be >= 0");
    require(spec.fov_mm > 0, ErrorCode::config, "fov_mm must be positive");
    require(spec.echoes >= 1 && spec.echoes <= 16, ErrorCode::config, "echoes must be in [1, 16]");
    require(!spec.resolutions.empty(), ErrorCode::config, "phantom needs at least one resolution row");
    for (const auto& r : spec.resolutions)
        require(r.res > 0 && r.thickness > 0 && r.weight > 0, ErrorCode::config,
                "resolution rows need positive res, thickness and weight");

    // The farthest lobe point, in cord-radius units, must stay inside the cord.
    const double d = spec.lobe_offset.hi, lx = spec.lobe_rx.hi, ly = spec.lobe_ry.hi;
    double worst = 0.0;
    for (int k = 0; k < 360; ++k) {
        const double t = k * std::numbers::pi / 180.0;
        const double u = d + lx * std::cos(t), v = ly * std::sin(t);
        worst = std::max(worst, u * u + v * v);
    }
    require(worst < 0.95 * 0.95, ErrorCode::config, "gray matter lobes do not fit inside the cord");

    const double gap = 3.0 * spec.noise_std;
    require(spec.background.hi + gap <= spec.csf.lo && spec.csf.hi + gap <= spec.wm.lo &&
                spec.wm.hi + gap <= spec.gm.lo,
            ErrorCode::config, "tissue intensities must be ordered and at least 3 noise std apart");

    const double max_extent = std::max(spec.cord_rx.hi, spec.cord_ry.hi) + spec.csf_width.hi +
                              std::max(std::abs(spec.center_jitter.lo), std::abs(spec.center_jitter.hi));
    require(max_extent * kCanonicalRes < spec.fov_mm / 2, ErrorCode::config, "cord does not fit in the field of view");
}

PhantomSlice render_phantom_slice(const PhantomSpec& spec, double res, std::uint64_t seed, const std::string& subject,
                                  int slice) {
    require(res > 0, ErrorCode::invalid_argument, "resolution must be positive");
    const std::uint64_t subject_seed = combine_seed(seed, hash_string(subject));
    Rng srng(subject_seed);
    const double rx0 = draw(srng, spec.cord_rx), ry0 = draw(srng, spec.cord_ry);
    const double lobe_d = draw(srng, spec.lobe_offset), lobe_x = draw(srng, spec.lobe_rx), lobe_y = draw(srng, spec.lobe_ry);
    const double csf_w = draw(srng, spec.csf_width);
    const double rot0 = draw(srng, spec.rotation_deg);
    const double i_bg = draw(srng, spec.background), i_csf = draw(srng, spec.csf);
    const double i_wm = draw(srng, spec.wm), i_gm = draw(srng, spec.gm);

    Rng rng(combine_seed(subject_seed, static_cast<std::uint64_t>(slice)));
    const double scale = rng.uniform(0.92, 1.08);
    const double rx = rx0 * scale, ry = ry0 * scale;
    const double cx = draw(rng, spec.center_jitter), cy = draw(rng, spec.center_jitter);
    const double theta = (rot0 + rng.uniform(-3.0, 3.0)) * std::numbers::pi / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);

    // 0 background, 1 WM, 2 GM, 3 CSF; at a point in canonical pixels.
    auto tissue = [&](double px, double py) -> int {
        const double x = px - cx, y = py - cy;
        const double u = ct * x + st * y, v = -st * x + ct * y;
        const double cord = (u / rx) * (u / rx) + (v / ry) * (v / ry);
        if (cord > 1.0) {
            const double ox = rx + csf_w, oy = ry + csf_w;
            return (u / ox) * (u / ox) + (v / oy) * (v / oy) <= 1.0 ? 3 : 0;
        }
        const double du = (std::abs(u) - lobe_d * rx) / (lobe_x * rx), dv = v / (lobe_y * ry);
        if (du * du + dv * dv <= 1.0) return 2;
        if (std::abs(u) <= lobe_d * rx && std::abs(v) <= 0.12 * ry) return 2; // commissure
        return 1;
    };
    const double level[4] = {i_bg, i_wm, i_gm, i_csf};

    const int n = std::max(8, static_cast<int>(std::lround(spec.fov_mm / res)));
    const double c = (n - 1) / 2.0, k = res / kCanonicalRes;
    std::vector<double> img(static_cast<std::size_t>(n) * n);
    std::vector<std::uint8_t> lab(img.size());
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const auto i = static_cast<std::size_t>(y) * n + x;
            const double px = (x - c) * k, py = (y - c) * k;
            const int t = tissue(px, py);
            lab[i] = t == 1 || t == 2 ? static_cast<std::uint8_t>(t) : 0;
            double v = 0.0; // 2x2 supersampling for partial volume
            for (int sy = 0; sy < 2; ++sy)
                for (int sx = 0; sx < 2; ++sx) v += level[tissue(px + (sx - 0.5) * 0.5 * k, py + (sy - 0.5) * 0.5 * k)];
            img[i] = std::max(0.0, v / 4.0 + spec.noise_std * rng.normal());
        }
    const SliceId id{subject, slice};
    return {ImageSlice(n, n, Spacing{res, res}, std::move(img), id),
            LabelMask(n, n, Spacing{res, res}, std::move(lab), id)};
}

DatasetManifest generate_phantoms(const PhantomSpec& spec, std::uint64_t seed, const fs::path& out) {
    validate(spec);
    DatasetManifest manifest;
    manifest.dataset_id = spec.dataset_id;
    manifest.root = out;

    const int total = spec.groups[0] + spec.groups[1] + spec.groups[2];
    Rng rng(combine_seed(seed, hash_string(spec.dataset_id)));
    double wsum = 0.0;
    for (const auto& r : spec.resolutions) wsum += r.weight;

    std::vector<double> echo_gain(static_cast<std::size_t>(spec.echoes));
    double g2 = 0.0;
    for (int e = 0; e < spec.echoes; ++e) {
        echo_gain[e] = std::exp(-0.4 * e);
        g2 += echo_gain[e] * echo_gain[e];
    }
    for (auto& g : echo_gain) g /= std::sqrt(g2); // root-sum-of-squares gives back the slice

    for (int s = 0; s < total; ++s) {
        SubjectRecord rec;
        char name[16];
        std::snprintf(name, sizeof name, "sub-%02d", s + 1);
        rec.subject_id = name;
        rec.group = s < spec.groups[0] ? Group::HC : s < spec.groups[0] + spec.groups[1] ? Group::ALS : Group::MS;
        // The first subjects cover every row once; the rest follow the weights.
        std::size_t row = static_cast<std::size_t>(s);
        if (row >= spec.resolutions.size()) {
            double u = rng.uniform() * wsum;
            row = 0;
            while (row + 1 < spec.resolutions.size() && u >= spec.resolutions[row].weight)
                u -= spec.resolutions[row++].weight;
        }
        const auto& r = spec.resolutions[row];
        rec.acq = r.acq;
        rec.in_plane_res = r.res;
        rec.slice_thickness = r.thickness;
        rec.center_id = r.center;
        rec.n_slices = spec.slices[0] + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.slices[1] - spec.slices[0] + 1)));

        std::vector<std::vector<ImageSlice>> echoes(static_cast<std::size_t>(spec.echoes));
        std::vector<LabelMask> masks;
        for (int k = 0; k < rec.n_slices; ++k) {
            auto ph = render_phantom_slice(spec, r.res, seed, rec.subject_id, k);
            for (int e = 0; e < spec.echoes; ++e) {
                std::vector<double> v(ph.image.data().begin(), ph.image.data().end());
                for (auto& x : v) x *= echo_gain[e];
                echoes[e].push_back(ph.image.with_data(std::move(v)));
            }
            masks.push_back(std::move(ph.labels));
        }
        rec.matrix_x = masks.front().width();
        rec.matrix_y = masks.front().height();
        for (int e = 0; e < spec.echoes; ++e)
            write_image_stack(raw::echo_path(out, rec.subject_id, e + 1), echoes[e], r.thickness);
        write_label_stack(raw::mask_path(out, rec.subject_id), masks, r.thickness);
        manifest.subjects.push_back(std::move(rec));
    }
    write_participants_tsv(out / "participants.tsv", manifest.subjects);
    return manifest;
}

} // namespace cordkit
