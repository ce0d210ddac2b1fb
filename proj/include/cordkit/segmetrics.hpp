#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cordkit/image.hpp"

namespace cordkit {

enum class MetricClass { SC, GM };

const char* to_string(MetricClass c) noexcept;
MetricClass metric_class_from_string(const std::string& s);

/// Binary pixel set on a grid; bits are 0/1.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    std::size_t count() const;
    bool empty() const { return count() == 0; }
};

BinaryMask binary_mask(const LabelMask& mask, std::span<const std::uint8_t> classes);
BinaryMask class_mask(const LabelMask& mask, MetricClass cls);

/// 2|a∩b| / (|a|+|b|); both empty → 1, exactly one empty → 0.
double dice(const BinaryMask& a, const BinaryMask& b);

/// Symmetric Hausdorff distance between pixel centres, in pixels. The default
/// percentile 100 is the classical maximum; lower values take the given
/// nearest-rank percentile of the pooled directed distances (e.g. 95).
/// Throws empty_mask if either set is empty.
double hausdorff(const BinaryMask& a, const BinaryMask& b, double percentile = 100.0);

/// 1 - ||a|-|b|| / (|a|+|b|); both empty → 1.
double volumetric_similarity(const BinaryMask& a, const BinaryMask& b);

/// Exact squared Euclidean distance from every pixel to the nearest set pixel
/// (two-pass lower-envelope transform). Entries are +inf if the set is empty.
std::vector<double> squared_distance_transform(const BinaryMask& m);

struct MetricsRecord {
    std::string subject;
    int slice = 0;
    int fold = 0;
    std::string method;
    MetricClass cls = MetricClass::SC;
    double dsc = 0.0;
    double hdrfdst = 0.0;
    double volsmty = 0.0;
    bool hd_valid = true; ///< false when either mask was empty; excluded from HD aggregation

    bool operator==(const MetricsRecord&) const = default;
};

struct SliceMeta {
    std::string subject;
    int slice = 0;
    int fold = 0;
    std::string method;
};

/// SC (codes 1∪2) and GM (code 2) records for one predicted slice.
std::array<MetricsRecord, 2> evaluate_slice(const LabelMask& pred, const LabelMask& gt, const SliceMeta& meta,
                                            double hd_percentile = 100.0);

} // namespace cordkit
