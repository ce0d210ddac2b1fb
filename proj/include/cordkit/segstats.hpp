#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cordkit/segmetrics.hpp"

namespace cordkit {

struct TrimmedStats {
    std::size_t n = 0;
    double trim_fraction = 0.15;
    double trimmed_mean = 0.0;
    double trimmed_std = 0.0;
    std::pair<double, double> ci95{0.0, 0.0};
    std::vector<std::size_t> outlier_indices; ///< into the input order
    double outlier_pct = 0.0;                 ///< fraction in [0,1]
};

/// Removes floor(trim_fraction * n) values from each tail of the sorted input.
/// Outliers are values outside trimmed_mean +/- 1.96 trimmed_std.
TrimmedStats trimmed_stats(std::span<const double> values, double trim_fraction = 0.15);

enum class TestMethod { exact, normal_approx };
const char* to_string(TestMethod m) noexcept;

struct TestResult {
    double statistic = 0.0; ///< W+, sum of ranks of positive differences
    double p_value = 1.0;
    std::size_t n = 0; ///< non-zero differences
    TestMethod method = TestMethod::exact;
    double corrected_p = 1.0;
    bool significant = false;
};

/// Two-sided paired signed-rank test on differences. Zero differences are
/// dropped; mid-ranks for ties. Exact null distribution for n <= 20, normal
/// approximation with tie and continuity corrections above.
TestResult wilcoxon_signed_rank(std::span<const double> diffs);

enum class Correction { bonferroni, holm, none };
const char* to_string(Correction c) noexcept;
Correction correction_from_string(const std::string& s);

std::vector<double> bonferroni(std::span<const double> p_values);
std::vector<double> holm(std::span<const double> p_values);
std::vector<double> correct_p_values(std::span<const double> p_values, Correction c);

struct SummaryOptions {
    bool by_fold = false;
    bool by_group = false;
    double trim_fraction = 0.15;
    Correction correction = Correction::bonferroni;
    double alpha = 0.05;
    /// subject -> group label, required when by_group is set
    std::vector<std::pair<std::string, std::string>> subject_groups;
};

/// fold = -1 and group = "" mean "all".
struct SummaryCell {
    std::string method;
    MetricClass cls = MetricClass::SC;
    int fold = -1;
    std::string group;
    TrimmedStats dsc;
    TrimmedStats hdrfdst; ///< over records with a valid distance only
    TrimmedStats volsmty;
};

struct Comparison {
    MetricClass cls = MetricClass::SC;
    int fold = -1;
    std::string group;
    std::string method_a;
    std::string method_b;
    double mean_diff = 0.0; ///< mean of a - b over paired DSC
    TestResult test;
};

struct Summary {
    std::vector<SummaryCell> cells;
    std::vector<Comparison> comparisons;
    std::vector<std::string> notices;
};

/// Cells per (method, class[, fold, group]) in sorted order. Every pair of
/// methods within a (class[, fold, group]) cell is compared on DSC, paired by
/// (subject, slice, fold); the correction runs over the whole family.
Summary summarize(std::span<const MetricsRecord> records, const SummaryOptions& options = {});

std::string summary_csv(const Summary& s);
std::string comparisons_csv(const Summary& s);
/// "mean±std" lines in the style of a results section.
std::string summary_report(const Summary& s);

} // namespace cordkit
