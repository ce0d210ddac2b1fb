#include "cordkit/groupreg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cordkit/bids.hpp"
#include "cordkit/error.hpp"
#include "cordkit/nifti.hpp"
#include "cordkit/parallel.hpp"
#include "cordkit/tables.hpp"

namespace cordkit {

namespace fs = std::filesystem;

void validate(const RegistrationParams& p) {
    require(p.levels >= 1, ErrorCode::invalid_argument, "levels must be >= 1");
    require(p.iters_per_level >= 1, ErrorCode::invalid_argument, "iters_per_level must be >= 1");
    require(p.step > 0 && p.fluid_sigma >= 0 && p.diffusion_sigma >= 0 && p.convergence_tol >= 0,
            ErrorCode::invalid_argument, "registration parameters must be positive");
}

namespace {

double clamped_bilinear(const ImageSlice& img, double x, double y) {
    return bilinear_sample(img, std::clamp(x, 0.0, img.width() - 1.0), std::clamp(y, 0.0, img.height() - 1.0));
}

ImageSlice downsample(const ImageSlice& img) {
    const auto s = gaussian_smooth(img, 1.0);
    const int w = (img.width() + 1) / 2, h = (img.height() + 1) / 2;
    std::vector<double> v(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) v[static_cast<std::size_t>(y) * w + x] = s.at(2 * x, 2 * y);
    const auto sp = img.spacing();
    return ImageSlice(w, h, Spacing{sp.x * 2, sp.y * 2}, std::move(v), img.id());
}

DeformationField upsample(const DeformationField& coarse, int w, int h) {
    std::vector<double> dx(static_cast<std::size_t>(w) * h), dy(dx.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto [cx, cy] = coarse.sample(x / 2.0, y / 2.0);
            const auto i = static_cast<std::size_t>(y) * w + x;
            dx[i] = 2 * cx;
            dy[i] = 2 * cy;
        }
    return DeformationField(w, h, std::move(dx), std::move(dy));
}

void check_unit(const ImageSlice& img, const char* what) {
    for (double v : img.data())
        require(v <= 1.0 + 1e-9, ErrorCode::invalid_argument,
                std::string(what) + " intensities must be normalized to [0,1]");
}

// One pyramid level; returns the best field seen, never worse than `start`
// or the zero field.
DeformationField register_level(const ImageSlice& moving, const ImageSlice& fixed, DeformationField start,
                                const RegistrationParams& p) {
    const int w = fixed.width(), h = fixed.height();
    const DeformationField zero(w, h);
    DeformationField phi = std::move(start);
    double cur = ssd(warp_clamped(moving, phi), fixed);
    const double zero_ssd = ssd(moving, fixed);
    if (zero_ssd <= cur) {
        phi = zero;
        cur = zero_ssd;
    }
    DeformationField best = phi;
    double best_ssd = cur;
    std::vector<double> history{cur};

    std::vector<double> ux(static_cast<std::size_t>(w) * h), uy(ux.size());
    for (int it = 0; it < p.iters_per_level; ++it) {
        const auto warped = warp_clamped(moving, phi);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const auto i = static_cast<std::size_t>(y) * w + x;
                const int xl = std::max(x - 1, 0), xr = std::min(x + 1, w - 1);
                const int yu = std::max(y - 1, 0), yd = std::min(y + 1, h - 1);
                const double gx = xr > xl ? (warped.at(xr, y) - warped.at(xl, y)) / (xr - xl) : 0.0;
                const double gy = yd > yu ? (warped.at(x, yd) - warped.at(x, yu)) / (yd - yu) : 0.0;
                const double diff = warped.data()[i] - fixed.data()[i];
                const double denom = gx * gx + gy * gy + diff * diff;
                if (denom < 1e-12) {
                    ux[i] = uy[i] = 0.0;
                    continue;
                }
                ux[i] = -p.step * diff * gx / denom;
                uy[i] = -p.step * diff * gy / denom;
            }
        auto u = gaussian_smooth(DeformationField(w, h, ux, uy), p.fluid_sigma);
        phi = gaussian_smooth(compose_fields(phi, u), p.diffusion_sigma);
        cur = ssd(warp_clamped(moving, phi), fixed);
        if (cur < best_ssd) {
            best_ssd = cur;
            best = phi;
        }
        history.push_back(best_ssd);
        const std::size_t n = history.size();
        if (n > 5 && history[n - 6] > 0 &&
            (history[n - 6] - history[n - 1]) / history[n - 6] < p.convergence_tol)
            break;
    }
    return best;
}

} // namespace

ImageSlice warp_clamped(const ImageSlice& img, const DeformationField& f) {
    require(img.same_grid(f.width(), f.height()), ErrorCode::dimension, "warp_clamped: grid mismatch");
    const int w = img.width(), h = img.height();
    std::vector<double> out(img.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto i = static_cast<std::size_t>(y) * w + x;
            out[i] = clamped_bilinear(img, x + f.dx()[i], y + f.dy()[i]);
        }
    return img.with_data(std::move(out));
}

double ssd(const ImageSlice& a, const ImageSlice& b) {
    require(a.same_grid(b.width(), b.height()), ErrorCode::dimension, "ssd: grid mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return s;
}

ImageSlice normalize_unit(const ImageSlice& img) {
    const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
    const double range = *hi - *lo;
    std::vector<double> v(img.size(), 0.0);
    if (range > 0)
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::clamp((img.data()[i] - *lo) / range, 0.0, 1.0);
    return img.with_data(std::move(v));
}

DeformationField register_pair(const ImageSlice& moving, const ImageSlice& fixed, const RegistrationParams& params) {
    validate(params);
    require(moving.same_grid(fixed.width(), fixed.height()), ErrorCode::dimension,
            "register_pair: moving and fixed grids differ");
    check_unit(moving, "moving");
    check_unit(fixed, "fixed");

    std::vector<ImageSlice> mov{moving}, fix{fixed};
    for (int l = 1; l < params.levels; ++l) {
        if (mov.back().width() < 16 || mov.back().height() < 16) break;
        mov.push_back(downsample(mov.back()));
        fix.push_back(downsample(fix.back()));
    }
    DeformationField phi(mov.back().width(), mov.back().height());
    for (std::size_t l = mov.size(); l-- > 0;) {
        if (phi.width() != mov[l].width() || phi.height() != mov[l].height())
            phi = upsample(phi, mov[l].width(), mov[l].height());
        phi = register_level(mov[l], fix[l], std::move(phi), params);
    }
    return phi;
}

std::size_t TemplateSpace::index_of(const std::string& subject) const {
    const auto it = std::lower_bound(subjects.begin(), subjects.end(), subject);
    require(it != subjects.end() && *it == subject, ErrorCode::missing_subject,
            subject + " is not registered in the template space");
    return static_cast<std::size_t>(it - subjects.begin());
}

namespace {

ImageSlice mean_image(const std::vector<ImageSlice>& imgs) {
    std::vector<double> v(imgs.front().size(), 0.0);
    for (const auto& im : imgs)
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += im.data()[i];
    for (auto& x : v) x /= static_cast<double>(imgs.size());
    return imgs.front().with_data(std::move(v)).with_id({"template", 0});
}

DeformationField mean_field(const std::vector<DeformationField>& fields) {
    const auto& f0 = fields.front();
    std::vector<double> dx(f0.size(), 0.0), dy(f0.size(), 0.0);
    for (const auto& f : fields)
        for (std::size_t i = 0; i < dx.size(); ++i) {
            dx[i] += f.dx()[i];
            dy[i] += f.dy()[i];
        }
    const auto n = static_cast<double>(fields.size());
    for (std::size_t i = 0; i < dx.size(); ++i) {
        dx[i] /= n;
        dy[i] /= n;
    }
    return DeformationField(f0.width(), f0.height(), std::move(dx), std::move(dy));
}

} // namespace

TemplateSpace build_template(const std::vector<ImageSlice>& slices, const std::vector<std::string>& subjects,
                             const RegistrationParams& params, int outer_iters, int threads) {
    require(slices.size() >= 2, ErrorCode::invalid_argument, "a template needs at least 2 slices");
    require(slices.size() == subjects.size(), ErrorCode::invalid_argument, "one subject name per slice");
    require(outer_iters >= 0, ErrorCode::invalid_argument, "outer_iters must be >= 0");
    validate(params);
    for (const auto& s : slices)
        require(s.same_grid(slices.front().width(), slices.front().height()), ErrorCode::dimension,
                "template inputs must share a grid");

    // Sorted subject order so outputs do not depend on input order.
    std::vector<std::size_t> order(slices.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return subjects[a] < subjects[b]; });
    TemplateSpace space;
    std::vector<ImageSlice> norm;
    for (auto i : order) {
        require(space.subjects.empty() || space.subjects.back() != subjects[i], ErrorCode::invalid_argument,
                "duplicate subject " + subjects[i]);
        space.subjects.push_back(subjects[i]);
        norm.push_back(normalize_unit(slices[i]));
    }
    const std::size_t n = norm.size();
    const int w = norm.front().width(), h = norm.front().height();
    ImageSlice tmpl = mean_image(norm);

    std::vector<DeformationField> fields(n, DeformationField(w, h));
    std::vector<ImageSlice> warped(n, tmpl);
    auto register_all = [&] {
        parallel_for(n, static_cast<unsigned>(std::max(threads, 1)), [&](std::size_t s) {
            fields[s] = register_pair(norm[s], tmpl, params);
            warped[s] = warp_clamped(norm[s], fields[s]);
        });
    };
    auto record = [&](int iteration) {
        double mssd = 0.0;
        for (std::size_t s = 0; s < n; ++s) mssd += ssd(warped[s], tmpl);
        space.trace.push_back({iteration, mean_field(fields).mean_norm(), mssd / static_cast<double>(n)});
    };

    for (int it = 0; it < outer_iters; ++it) {
        register_all();
        record(it);
        const auto avg = mean_image(warped);
        tmpl = warp_clamped(avg, invert_field(mean_field(fields)));
    }
    register_all();
    record(outer_iters);

    space.template_image = tmpl;
    space.forward = fields;
    space.inverse.assign(n, DeformationField(w, h));
    std::vector<double> residual(n, 0.0);
    parallel_for(n, static_cast<unsigned>(std::max(threads, 1)), [&](std::size_t s) {
        InversionReport rep;
        space.inverse[s] = invert_field(fields[s], 50, 0.01, &rep);
        residual[s] = rep.residual;
    });
    space.inverse_residual = *std::max_element(residual.begin(), residual.end());
    return space;
}

AugmentedSample realistic_augment(const ImageSlice& img, const LabelMask& mask, const std::string& source_subject,
                                  const std::string& target_subject, const TemplateSpace& space) {
    const auto i = space.index_of(source_subject);
    const auto j = space.index_of(target_subject);
    require(img.same_grid(space.template_image.width(), space.template_image.height()) &&
                img.same_grid(mask.width(), mask.height()),
            ErrorCode::dimension, "slice grid differs from the template grid");
    const auto field = compose_fields(space.forward[i], space.inverse[j]);
    AugmentedSample s{warp_image(img, field), warp_labels(mask, field), {}};
    s.provenance.source = img.id();
    s.provenance.kind = "realistic";
    s.provenance.target = target_subject;
    return s;
}

std::vector<AugmentedSample> generate_realistic_set(
    const std::map<std::string, std::vector<std::pair<ImageSlice, LabelMask>>>& dataset, const TemplateSpace& space) {
    std::vector<AugmentedSample> out;
    for (const auto& [subject, slices] : dataset) {
        space.index_of(subject);
        for (const auto& [img, mask] : slices)
            for (const auto& target : space.subjects)
                if (target != subject) out.push_back(realistic_augment(img, mask, subject, target, space));
    }
    return out;
}

std::vector<std::string> TemplateProvider::targets_for(const std::string& subject) const {
    if (!std::binary_search(space_.subjects.begin(), space_.subjects.end(), subject)) return {};
    std::vector<std::string> out;
    for (const auto& s : space_.subjects)
        if (s != subject) out.push_back(s);
    return out;
}

AugmentedSample TemplateProvider::morph(const ImageSlice& img, const LabelMask& mask, const std::string& target) const {
    return realistic_augment(img, mask, img.id().subject, target, space_);
}

void save_template_space(const TemplateSpace& space, const fs::path& dir) {
    write_image_stack(dir / "template.nii.gz", std::span(&space.template_image, 1));
    for (std::size_t s = 0; s < space.subjects.size(); ++s) {
        write_field(dir / "fields" / (space.subjects[s] + "_fwd.nii.gz"), space.forward[s]);
        write_field(dir / "fields" / (space.subjects[s] + "_inv.nii.gz"), space.inverse[s]);
    }
    std::string csv = "iteration,mean_field_norm,mean_ssd\n";
    for (const auto& r : space.trace)
        csv += std::to_string(r.iteration) + ',' + format_fixed6(r.mean_field_norm) + ',' + format_fixed6(r.mean_ssd) + '\n';
    write_text_file(dir / "trace.csv", csv);
}

TemplateSpace load_template_space(const fs::path& dir) {
    TemplateSpace space;
    const auto t = read_image_stack(dir / "template.nii.gz", "template");
    require(t.size() == 1, ErrorCode::consistency, "template.nii.gz must hold one slice");
    space.template_image = t.front();
    std::vector<std::string> subjects;
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(dir / "fields", ec)) {
        const auto name = e.path().filename().string();
        const std::string suffix = "_fwd.nii.gz";
        if (name.size() > suffix.size() && name.ends_with(suffix))
            subjects.push_back(name.substr(0, name.size() - suffix.size()));
    }
    if (ec) fail(ErrorCode::io, "cannot list " + (dir / "fields").string());
    std::sort(subjects.begin(), subjects.end());
    for (const auto& s : subjects) {
        space.subjects.push_back(s);
        space.forward.push_back(read_field(dir / "fields" / (s + "_fwd.nii.gz")));
        space.inverse.push_back(read_field(dir / "fields" / (s + "_inv.nii.gz")));
    }
    if (fs::exists(dir / "trace.csv")) {
        const auto table = read_table(dir / "trace.csv", ',');
        for (const auto& row : table.rows)
            space.trace.push_back({std::stoi(row.at(0)), std::stod(row.at(1)), std::stod(row.at(2))});
    }
    for (std::size_t s = 0; s < space.subjects.size(); ++s)
        space.inverse_residual =
            std::max(space.inverse_residual, compose_fields(space.forward[s], space.inverse[s]).max_norm());
    return space;
}

TemplateSpace build_template_from_bids(const fs::path& bids_root, const RegistrationParams& params, int outer_iters,
                                       int threads) {
    const auto manifest = scan_bids_tree(bids_root);
    std::vector<ImageSlice> slices;
    std::vector<std::string> subjects;
    for (const auto& s : manifest.subjects) {
        auto stack = read_image_stack(bids::anat_path(bids_root, s.subject_id), s.subject_id);
        slices.push_back(std::move(stack[stack.size() / 2]));
        subjects.push_back(s.subject_id);
    }
    return build_template(slices, subjects, params, outer_iters, threads);
}

} // namespace cordkit
