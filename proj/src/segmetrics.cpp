#include "cordkit/segmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cordkit/error.hpp"

namespace cordkit {

namespace {

void check_grid(const BinaryMask& a, const BinaryMask& b, const char* what) {
    require(a.width == b.width && a.height == b.height, ErrorCode::dimension, std::string(what) + ": grid mismatch");
}

constexpr double kFar = 1e20;

// Lower envelope of parabolas for one row/column of squared distances.
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    auto at = [](auto& c, int i) -> auto& { return c[static_cast<std::size_t>(i)]; };
    auto meet = [&](int q, int p) {
        return ((at(f, q) + double(q) * q) - (at(f, p) + double(p) * p)) / (2.0 * (q - p));
    };
    int k = 0;
    at(v, 0) = 0;
    at(z, 0) = -std::numeric_limits<double>::infinity();
    at(z, 1) = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s = meet(q, at(v, k));
        while (s <= at(z, k)) {
            --k;
            s = meet(q, at(v, k));
        }
        ++k;
        at(v, k) = q;
        at(z, k) = s;
        at(z, k + 1) = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (at(z, k + 1) < q) ++k;
        const int p = at(v, k);
        at(d, q) = double(q - p) * (q - p) + at(f, p);
    }
}

} // namespace

const char* to_string(MetricClass c) noexcept { return c == MetricClass::SC ? "SC" : "GM"; }

MetricClass metric_class_from_string(const std::string& s) {
    if (s == "SC") return MetricClass::SC;
    if (s == "GM") return MetricClass::GM;
    fail(ErrorCode::invalid_argument, "unknown metric class '" + s + "'");
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

BinaryMask binary_mask(const LabelMask& mask, std::span<const std::uint8_t> classes) {
    BinaryMask out{mask.width(), mask.height(), std::vector<std::uint8_t>(mask.size(), 0)};
    for (std::size_t i = 0; i < mask.size(); ++i)
        out.bits[i] = std::find(classes.begin(), classes.end(), mask.codes()[i]) != classes.end();
    return out;
}

BinaryMask class_mask(const LabelMask& mask, MetricClass cls) {
    return cls == MetricClass::SC ? binary_mask(mask, kSpinalCordCodes) : binary_mask(mask, kGrayMatterCodes);
}

double dice(const BinaryMask& a, const BinaryMask& b) {
    check_grid(a, b, "dice");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        na += a.bits[i];
        nb += b.bits[i];
        both += a.bits[i] & b.bits[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double volumetric_similarity(const BinaryMask& a, const BinaryMask& b) {
    check_grid(a, b, "volumetric_similarity");
    const auto na = static_cast<double>(a.count());
    const auto nb = static_cast<double>(b.count());
    if (na + nb == 0) return 1.0;
    return 1.0 - std::abs(na - nb) / (na + nb);
}

std::vector<double> squared_distance_transform(const BinaryMask& m) {
    const int w = m.width;
    const int h = m.height;
    std::vector<double> out(m.bits.size());
    if (m.empty()) {
        std::fill(out.begin(), out.end(), std::numeric_limits<double>::infinity());
        return out;
    }
    const int n = std::max(w, h);
    std::vector<double> f(static_cast<std::size_t>(n)), d(static_cast<std::size_t>(n));
    std::vector<int> v(static_cast<std::size_t>(n));
    std::vector<double> z(static_cast<std::size_t>(n) + 1);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.bits[i] ? 0.0 : kFar;

    f.resize(static_cast<std::size_t>(h));
    d.resize(static_cast<std::size_t>(h));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) f[static_cast<std::size_t>(y)] = out[static_cast<std::size_t>(y) * w + x];
        edt_1d(f, d, v, z);
        for (int y = 0; y < h; ++y) out[static_cast<std::size_t>(y) * w + x] = d[static_cast<std::size_t>(y)];
    }
    f.resize(static_cast<std::size_t>(w));
    d.resize(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) f[static_cast<std::size_t>(x)] = out[static_cast<std::size_t>(y) * w + x];
        edt_1d(f, d, v, z);
        for (int x = 0; x < w; ++x) out[static_cast<std::size_t>(y) * w + x] = d[static_cast<std::size_t>(x)];
    }
    return out;
}

double hausdorff(const BinaryMask& a, const BinaryMask& b, double percentile) {
    check_grid(a, b, "hausdorff");
    require(percentile > 0.0 && percentile <= 100.0, ErrorCode::invalid_argument,
            "hausdorff percentile must be in (0, 100]");
    if (a.empty() || b.empty()) fail(ErrorCode::empty_mask, "hausdorff of an empty mask");
    const auto da = squared_distance_transform(a);
    const auto db = squared_distance_transform(b);
    if (percentile == 100.0) {
        double worst = 0.0;
        for (std::size_t i = 0; i < a.bits.size(); ++i) {
            if (a.bits[i]) worst = std::max(worst, db[i]);
            if (b.bits[i]) worst = std::max(worst, da[i]);
        }
        return std::sqrt(worst);
    }
    std::vector<double> pooled;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        if (a.bits[i]) pooled.push_back(db[i]);
        if (b.bits[i]) pooled.push_back(da[i]);
    }
    std::sort(pooled.begin(), pooled.end());
    const auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(pooled.size())));
    return std::sqrt(pooled[std::max<std::size_t>(rank, 1) - 1]);
}

std::array<MetricsRecord, 2> evaluate_slice(const LabelMask& pred, const LabelMask& gt, const SliceMeta& meta,
                                            double hd_percentile) {
    require(pred.width() == gt.width() && pred.height() == gt.height(), ErrorCode::dimension,
            "evaluate_slice: prediction and ground truth grids differ");
    std::array<MetricsRecord, 2> out;
    const MetricClass classes[] = {MetricClass::SC, MetricClass::GM};
    for (std::size_t k = 0; k < 2; ++k) {
        const auto p = class_mask(pred, classes[k]);
        const auto g = class_mask(gt, classes[k]);
        auto& r = out[k];
        r.subject = meta.subject;
        r.slice = meta.slice;
        r.fold = meta.fold;
        r.method = meta.method;
        r.cls = classes[k];
        r.dsc = dice(p, g);
        r.volsmty = volumetric_similarity(p, g);
        if (p.empty() || g.empty()) {
            r.hd_valid = false;
            r.hdrfdst = 0.0;
        } else {
            r.hdrfdst = hausdorff(p, g, hd_percentile);
        }
    }
    return out;
}

} // namespace cordkit
