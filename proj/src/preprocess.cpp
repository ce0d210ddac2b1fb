#include "cordkit/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>

#include "cordkit/error.hpp"
#include "cordkit/nifti.hpp"
#include "cordkit/parallel.hpp"
#include "cordkit/tables.hpp"

namespace cordkit {

namespace fs = std::filesystem;

const char* to_string(CombineMode m) noexcept {
    return m == CombineMode::sum_of_squares ? "sum_of_squares" : "root_sum_of_squares";
}

CombineMode combine_mode_from_string(const std::string& s) {
    if (s == "root_sum_of_squares" || s == "rss") return CombineMode::root_sum_of_squares;
    if (s == "sum_of_squares" || s == "sos") return CombineMode::sum_of_squares;
    fail(ErrorCode::config, "unknown combine mode '" + s + "'");
}

void validate(const PreprocParams& p) {
    require(p.target_res > 0, ErrorCode::invalid_argument, "target_res must be positive");
    require(p.crop > 0 && p.crop % 2 == 0, ErrorCode::invalid_argument, "crop must be positive and even");
}

ImageSlice medic_combine(std::span<const ImageSlice> echoes, CombineMode mode) {
    require(!echoes.empty(), ErrorCode::invalid_argument, "medic_combine needs at least one echo");
    const auto& first = echoes.front();
    for (const auto& e : echoes)
        require(first.same_grid(e.width(), e.height()) && e.spacing() == first.spacing(),
                ErrorCode::invalid_argument, "echo grids differ");
    std::vector<double> out(first.size(), 0.0);
    for (const auto& e : echoes) {
        const auto d = e.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i] * d[i];
    }
    if (mode == CombineMode::root_sum_of_squares)
        for (auto& v : out) v = std::sqrt(v);
    return first.with_data(std::move(out));
}

namespace {

int resampled_extent(int n, double spacing, double target) {
    return std::max(1, static_cast<int>(std::lround(n * spacing / target)));
}

// Source coordinate of output pixel j, pixel centres aligned.
double source_coord(int j, double spacing, double target) {
    const double x = ((j + 0.5) * target) / spacing - 0.5;
    const double r = std::round(x);
    return std::abs(x - r) < 1e-9 ? r : x;
}

} // namespace

std::pair<ImageSlice, LabelMask> reslice_and_crop(const ImageSlice& img, const LabelMask& mask,
                                                  const PreprocParams& params) {
    validate(params);
    require(img.same_grid(mask.width(), mask.height()), ErrorCode::dimension, "image and mask grids differ");
    const auto sp = img.spacing();
    const double r = params.target_res;
    const int w = resampled_extent(img.width(), sp.x, r);
    const int h = resampled_extent(img.height(), sp.y, r);

    std::vector<double> xs(static_cast<std::size_t>(w)), ys(static_cast<std::size_t>(h));
    for (int j = 0; j < w; ++j) xs[static_cast<std::size_t>(j)] = source_coord(j, sp.x, r);
    for (int i = 0; i < h; ++i) ys[static_cast<std::size_t>(i)] = source_coord(i, sp.y, r);

    std::vector<std::uint8_t> full(static_cast<std::size_t>(w) * h);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            full[static_cast<std::size_t>(i) * w + j] =
                nearest_sample(mask, std::clamp(xs[static_cast<std::size_t>(j)], 0.0, mask.width() - 1.0),
                               std::clamp(ys[static_cast<std::size_t>(i)], 0.0, mask.height() - 1.0));
    const LabelMask resampled(w, h, Spacing{r, r}, std::move(full), mask.id());
    require(resampled.count(kSpinalCordCodes) > 0, ErrorCode::empty_mask,
            "no spinal cord pixel in mask " + mask.id().str());
    const auto [bx, by] = barycenter(resampled, kSpinalCordCodes);

    const int c = params.crop;
    const int x0 = static_cast<int>(std::lround(bx)) - c / 2;
    const int y0 = static_cast<int>(std::lround(by)) - c / 2;
    std::vector<double> pix(static_cast<std::size_t>(c) * c, 0.0);
    std::vector<std::uint8_t> lab(static_cast<std::size_t>(c) * c, 0);
    for (int v = 0; v < c; ++v) {
        const int i = y0 + v;
        if (i < 0 || i >= h) continue;
        const double sy = std::clamp(ys[static_cast<std::size_t>(i)], 0.0, img.height() - 1.0);
        for (int u = 0; u < c; ++u) {
            const int j = x0 + u;
            if (j < 0 || j >= w) continue;
            const double sx = std::clamp(xs[static_cast<std::size_t>(j)], 0.0, img.width() - 1.0);
            const auto o = static_cast<std::size_t>(v) * c + u;
            pix[o] = std::max(0.0, bilinear_sample(img, sx, sy));
            lab[o] = resampled.at(j, i);
        }
    }
    return {ImageSlice(c, c, Spacing{r, r}, std::move(pix), img.id()),
            LabelMask(c, c, Spacing{r, r}, std::move(lab), mask.id())};
}

namespace raw {

fs::path echo_path(const fs::path& root, const std::string& subject, int echo) {
    return root / subject / (subject + "_echo-" + std::to_string(echo) + ".nii.gz");
}

fs::path mask_path(const fs::path& root, const std::string& subject) {
    return root / subject / (subject + "_mask.nii.gz");
}

} // namespace raw

std::string exclusions_tsv(const std::vector<Exclusion>& exclusions) {
    std::string out = "subject\tslice\treason\n";
    for (const auto& e : exclusions) out += e.subject + '\t' + std::to_string(e.slice) + '\t' + e.reason + '\n';
    return out;
}

PreprocReport run_preprocessing(const fs::path& raw_root, const fs::path& out, const PreprocParams& params,
                                const std::string& dataset_id) {
    validate(params);
    const auto subjects = read_participants_tsv(raw_root / "participants.tsv");
    PreprocReport report;
    report.manifest.dataset_id = dataset_id.empty() ? raw_root.filename().string() : dataset_id;
    report.manifest.root = out;
    std::map<std::string, SubjectStacks> data;

    for (const auto& subj : subjects) {
        const auto& id = subj.subject_id;
        std::vector<std::vector<ImageSlice>> echoes;
        for (int k = 1; fs::exists(raw::echo_path(raw_root, id, k)); ++k)
            echoes.push_back(read_image_stack(raw::echo_path(raw_root, id, k), id));
        require(!echoes.empty(), ErrorCode::io, "no echo images for " + id + " under " + (raw_root / id).string());
        const std::size_t n = echoes.front().size();
        for (const auto& e : echoes)
            require(e.size() == n, ErrorCode::consistency, id + ": echo stacks differ in length");

        std::vector<LabelMask> masks;
        if (fs::exists(raw::mask_path(raw_root, id))) masks = read_label_stack(raw::mask_path(raw_root, id), id);

        struct Outcome {
            std::optional<std::pair<ImageSlice, LabelMask>> result;
            std::string reason;
        };
        std::vector<Outcome> outcomes(n);
        parallel_for(n, params.threads, [&](std::size_t s) {
            if (s >= masks.size()) {
                outcomes[s].reason = "mask missing";
                return;
            }
            std::vector<ImageSlice> per_echo;
            for (const auto& e : echoes) per_echo.push_back(e[s]);
            const auto combined = medic_combine(per_echo, params.combine_mode);
            try {
                outcomes[s].result = reslice_and_crop(combined, masks[s], params);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::empty_mask) throw;
                outcomes[s].reason = "empty spinal cord mask";
            }
        });

        SubjectStacks stacks;
        for (std::size_t s = 0; s < n; ++s) {
            auto& o = outcomes[s];
            if (!o.result) {
                report.exclusions.push_back({id, static_cast<int>(s), o.reason});
                continue;
            }
            const SliceId sid{id, static_cast<int>(stacks.images.size())};
            stacks.images.push_back(o.result->first.with_id(sid));
            stacks.masks.push_back(o.result->second.with_id(sid));
        }
        if (stacks.images.empty()) continue;
        report.processed += stacks.images.size();
        auto rec = subj;
        rec.n_slices = static_cast<int>(stacks.images.size());
        report.manifest.subjects.push_back(rec);
        data.emplace(id, std::move(stacks));
    }

    write_bids_tree(report.manifest, data, out);
    write_text_file(out / "exclusions.tsv", exclusions_tsv(report.exclusions));
    return report;
}

} // namespace cordkit
