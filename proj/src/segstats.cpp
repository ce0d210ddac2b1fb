#include "cordkit/segstats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

#include "cordkit/error.hpp"
#include "cordkit/tables.hpp"

namespace cordkit {

namespace {

constexpr double kZ95 = 1.96;
constexpr double kTieTol = 1e-12;
constexpr int kExactLimit = 20;

} // namespace

TrimmedStats trimmed_stats(std::span<const double> values, double trim_fraction) {
    require(!values.empty(), ErrorCode::invalid_argument, "trimmed_stats of an empty list");
    require(trim_fraction >= 0.0 && trim_fraction < 0.5, ErrorCode::invalid_argument,
            "trim fraction must be in [0, 0.5)");
    for (double v : values) require(std::isfinite(v), ErrorCode::invalid_argument, "non-finite value");

    TrimmedStats s;
    s.n = values.size();
    s.trim_fraction = trim_fraction;
    std::vector<double> sorted(values.begin(), values.end());
    std::stable_sort(sorted.begin(), sorted.end());
    const auto k = static_cast<std::size_t>(std::floor(trim_fraction * static_cast<double>(s.n)));
    const auto first = sorted.begin() + static_cast<std::ptrdiff_t>(k);
    const auto last = sorted.end() - static_cast<std::ptrdiff_t>(k);
    const auto m = static_cast<std::size_t>(last - first);

    s.trimmed_mean = std::accumulate(first, last, 0.0) / static_cast<double>(m);
    if (m > 1) {
        double ss = 0.0;
        for (auto it = first; it != last; ++it) ss += (*it - s.trimmed_mean) * (*it - s.trimmed_mean);
        s.trimmed_std = std::sqrt(ss / static_cast<double>(m - 1));
    }
    const double half = kZ95 * s.trimmed_std / std::sqrt(static_cast<double>(m));
    s.ci95 = {s.trimmed_mean - half, s.trimmed_mean + half};

    const double band = kZ95 * s.trimmed_std;
    const double eps = 1e-12 * std::max(1.0, std::abs(s.trimmed_mean));
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double d = std::abs(values[i] - s.trimmed_mean);
        if (d > band + eps) s.outlier_indices.push_back(i);
    }
    s.outlier_pct = static_cast<double>(s.outlier_indices.size()) / static_cast<double>(s.n);
    return s;
}

const char* to_string(TestMethod m) noexcept {
    return m == TestMethod::exact ? "exact" : "normal_approx";
}

TestResult wilcoxon_signed_rank(std::span<const double> diffs) {
    std::vector<double> d;
    for (double x : diffs) {
        require(std::isfinite(x), ErrorCode::invalid_argument, "non-finite difference");
        if (std::abs(x) > kTieTol) d.push_back(x);
    }
    TestResult r;
    r.n = d.size();
    if (d.empty()) return r;

    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });

    // Doubled mid-ranks stay integral.
    std::vector<int> rank2(d.size());
    double tie_term = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i + 1;
        while (j < order.size() && std::abs(d[order[j]]) - std::abs(d[order[i]]) <= kTieTol) ++j;
        const auto t = static_cast<double>(j - i);
        for (std::size_t q = i; q < j; ++q) rank2[order[q]] = static_cast<int>(i + 1 + j);
        tie_term += t * t * t - t;
        i = j;
    }

    int w2 = 0, total2 = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        total2 += rank2[i];
        if (d[i] > 0) w2 += rank2[i];
    }
    r.statistic = w2 / 2.0;
    const double n = static_cast<double>(r.n);

    if (r.n <= kExactLimit) {
        r.method = TestMethod::exact;
        // Count sign assignments by doubled positive-rank sum.
        std::vector<double> ways(static_cast<std::size_t>(total2) + 1, 0.0);
        ways[0] = 1.0;
        int reach = 0;
        for (int rk : rank2) {
            for (int s = reach; s >= 0; --s)
                if (ways[static_cast<std::size_t>(s)] != 0.0) ways[static_cast<std::size_t>(s + rk)] += ways[static_cast<std::size_t>(s)];
            reach += rk;
        }
        // Compare |2W - total| in doubled units to stay exact.
        const int obs = std::abs(2 * w2 - total2);
        double hit = 0.0;
        for (int s = 0; s <= total2; ++s)
            if (std::abs(2 * s - total2) >= obs) hit += ways[static_cast<std::size_t>(s)];
        r.p_value = std::min(1.0, hit / std::ldexp(1.0, static_cast<int>(r.n)));
    } else {
        r.method = TestMethod::normal_approx;
        const double mu = n * (n + 1) / 4.0;
        const double var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0;
        const double dev = std::max(0.0, std::abs(r.statistic - mu) - 0.5);
        r.p_value = var > 0 ? std::min(1.0, std::erfc(dev / std::sqrt(var) / std::sqrt(2.0))) : 1.0;
    }
    r.corrected_p = r.p_value;
    r.significant = r.p_value < 0.05;
    return r;
}

const char* to_string(Correction c) noexcept {
    switch (c) {
    case Correction::bonferroni: return "bonferroni";
    case Correction::holm: return "holm";
    case Correction::none: return "none";
    }
    return "?";
}

Correction correction_from_string(const std::string& s) {
    if (s == "bonferroni") return Correction::bonferroni;
    if (s == "holm") return Correction::holm;
    if (s == "none") return Correction::none;
    fail(ErrorCode::config, "unknown correction '" + s + "'");
}

namespace {

void check_p(std::span<const double> p) {
    for (double v : p)
        require(v >= 0.0 && v <= 1.0, ErrorCode::invalid_argument, "p-value outside [0,1]");
}

} // namespace

std::vector<double> bonferroni(std::span<const double> p_values) {
    check_p(p_values);
    const auto m = static_cast<double>(p_values.size());
    std::vector<double> out;
    for (double p : p_values) out.push_back(std::min(1.0, p * m));
    return out;
}

std::vector<double> holm(std::span<const double> p_values) {
    check_p(p_values);
    const std::size_t m = p_values.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p_values[a] < p_values[b]; });
    std::vector<double> out(m);
    double running = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        running = std::max(running, std::min(1.0, p_values[order[i]] * static_cast<double>(m - i)));
        out[order[i]] = running;
    }
    return out;
}

std::vector<double> correct_p_values(std::span<const double> p_values, Correction c) {
    switch (c) {
    case Correction::bonferroni: return bonferroni(p_values);
    case Correction::holm: return holm(p_values);
    case Correction::none: check_p(p_values); return {p_values.begin(), p_values.end()};
    }
    return {};
}

namespace {

using CellKey = std::tuple<MetricClass, int, std::string>; // class, fold, group

TrimmedStats stats_or_empty(const std::vector<double>& v, double trim) {
    if (v.empty()) {
        TrimmedStats s;
        s.trim_fraction = trim;
        return s;
    }
    return trimmed_stats(v, trim);
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string p_text(double p) {
    if (p < 0.001) return "p<0.001";
    return "p=" + fixed(p, 3);
}

} // namespace

Summary summarize(std::span<const MetricsRecord> records, const SummaryOptions& options) {
    require(!records.empty(), ErrorCode::invalid_argument, "summarize needs at least one record");
    std::map<std::string, std::string> groups(options.subject_groups.begin(), options.subject_groups.end());
    auto group_of = [&](const MetricsRecord& r) -> std::string {
        if (!options.by_group) return {};
        const auto it = groups.find(r.subject);
        require(it != groups.end(), ErrorCode::missing_subject, "no group for subject " + r.subject);
        return it->second;
    };

    // cell -> method -> records
    std::map<CellKey, std::map<std::string, std::vector<const MetricsRecord*>>> cells;
    for (const auto& r : records) {
        const CellKey key{r.cls, options.by_fold ? r.fold : -1, group_of(r)};
        cells[key][r.method].push_back(&r);
    }

    Summary out;
    std::vector<std::pair<CellKey, std::string>> cell_order;
    for (const auto& [key, by_method] : cells)
        for (const auto& [method, recs] : by_method) cell_order.emplace_back(key, method);
    // Methods first so a method's cells are contiguous in the output.
    std::stable_sort(cell_order.begin(), cell_order.end(),
                     [](const auto& a, const auto& b) { return std::tie(a.second, a.first) < std::tie(b.second, b.first); });

    for (const auto& [key, method] : cell_order) {
        const auto& recs = cells[key][method];
        std::vector<double> dsc, hd, vs;
        for (const auto* r : recs) {
            dsc.push_back(r->dsc);
            vs.push_back(r->volsmty);
            if (r->hd_valid) hd.push_back(r->hdrfdst);
        }
        SummaryCell c;
        c.method = method;
        std::tie(c.cls, c.fold, c.group) = key;
        c.dsc = trimmed_stats(dsc, options.trim_fraction);
        c.hdrfdst = stats_or_empty(hd, options.trim_fraction);
        c.volsmty = trimmed_stats(vs, options.trim_fraction);
        out.cells.push_back(std::move(c));
    }

    using PairKey = std::tuple<std::string, int, int>; // subject, slice, fold
    for (const auto& [key, by_method] : cells) {
        for (auto a = by_method.begin(); a != by_method.end(); ++a) {
            for (auto b = std::next(a); b != by_method.end(); ++b) {
                std::map<PairKey, double> da, db;
                for (const auto* r : a->second) da[{r->subject, r->slice, r->fold}] = r->dsc;
                for (const auto* r : b->second) db[{r->subject, r->slice, r->fold}] = r->dsc;
                const auto& [cls, fold, group] = key;
                std::string where = std::string(to_string(cls)) + (fold >= 0 ? " fold " + std::to_string(fold) : "") +
                                    (group.empty() ? "" : " group " + group);
                bool matched = da.size() == a->second.size() && db.size() == b->second.size() &&
                               da.size() == db.size();
                if (matched)
                    for (const auto& [k, v] : da)
                        if (!db.contains(k)) matched = false;
                if (!matched) {
                    out.notices.push_back("skipped " + a->first + " vs " + b->first + " (" + where +
                                          "): slices are not matched one to one");
                    continue;
                }
                std::vector<double> diffs;
                for (const auto& [k, v] : da) diffs.push_back(v - db.at(k));
                Comparison cmp;
                cmp.cls = cls;
                cmp.fold = fold;
                cmp.group = group;
                cmp.method_a = a->first;
                cmp.method_b = b->first;
                cmp.mean_diff = std::accumulate(diffs.begin(), diffs.end(), 0.0) / static_cast<double>(diffs.size());
                cmp.test = wilcoxon_signed_rank(diffs);
                out.comparisons.push_back(std::move(cmp));
            }
        }
    }

    std::vector<double> ps;
    for (const auto& c : out.comparisons) ps.push_back(c.test.p_value);
    const auto corrected = correct_p_values(ps, options.correction);
    for (std::size_t i = 0; i < out.comparisons.size(); ++i) {
        auto& t = out.comparisons[i].test;
        t.corrected_p = std::max(corrected[i], t.p_value);
        t.significant = t.corrected_p < options.alpha;
    }
    return out;
}

std::string summary_csv(const Summary& s) {
    std::string out = "method,class,fold,group,metric,n,trimmed_mean,trimmed_std,ci95_lo,ci95_hi,outlier_pct\n";
    for (const auto& c : s.cells) {
        const std::string prefix = c.method + ',' + to_string(c.cls) + ',' +
                                   (c.fold >= 0 ? std::to_string(c.fold) : "all") + ',' +
                                   (c.group.empty() ? "all" : c.group) + ',';
        const std::pair<const char*, const TrimmedStats*> metrics[] = {
            {"dsc", &c.dsc}, {"hdrfdst", &c.hdrfdst}, {"volsmty", &c.volsmty}};
        for (const auto& [name, t] : metrics) {
            out += prefix + name + ',' + std::to_string(t->n) + ',';
            if (t->n == 0) {
                out += "NA,NA,NA,NA,NA\n";
                continue;
            }
            out += format_fixed6(t->trimmed_mean) + ',' + format_fixed6(t->trimmed_std) + ',' +
                   format_fixed6(t->ci95.first) + ',' + format_fixed6(t->ci95.second) + ',' +
                   format_fixed6(t->outlier_pct) + '\n';
        }
    }
    return out;
}

std::string comparisons_csv(const Summary& s) {
    std::string out = "class,fold,group,method_a,method_b,n,mean_diff,statistic,p_value,test,corrected_p,significant\n";
    for (const auto& c : s.comparisons) {
        out += std::string(to_string(c.cls)) + ',' + (c.fold >= 0 ? std::to_string(c.fold) : "all") + ',' +
               (c.group.empty() ? "all" : c.group) + ',' + c.method_a + ',' + c.method_b + ',' +
               std::to_string(c.test.n) + ',' + format_fixed6(c.mean_diff) + ',' + format_fixed6(c.test.statistic) +
               ',' + format_fixed6(c.test.p_value) + ',' + to_string(c.test.method) + ',' +
               format_fixed6(c.test.corrected_p) + ',' + (c.test.significant ? "yes" : "no") + '\n';
    }
    return out;
}

std::string summary_report(const Summary& s) {
    std::string out;
    for (const auto& c : s.cells) {
        out += c.method + ' ' + to_string(c.cls);
        if (c.fold >= 0) out += " fold " + std::to_string(c.fold);
        if (!c.group.empty()) out += ' ' + c.group;
        out += ": DSC " + fixed(c.dsc.trimmed_mean, 2) + "±" + fixed(c.dsc.trimmed_std, 2);
        if (c.hdrfdst.n > 0)
            out += ", HD " + fixed(c.hdrfdst.trimmed_mean, 2) + "±" + fixed(c.hdrfdst.trimmed_std, 2);
        out += ", VS " + fixed(c.volsmty.trimmed_mean, 2) + "±" + fixed(c.volsmty.trimmed_std, 2);
        out += " (n=" + std::to_string(c.dsc.n) + ", outliers " + fixed(100.0 * c.dsc.outlier_pct, 1) + "%)\n";
    }
    for (const auto& c : s.comparisons) {
        out += std::string(to_string(c.cls));
        if (c.fold >= 0) out += " fold " + std::to_string(c.fold);
        if (!c.group.empty()) out += ' ' + c.group;
        out += ": " + c.method_a + " vs " + c.method_b + " DSC difference " + fixed(c.mean_diff, 3) + ", " +
               p_text(c.test.corrected_p) + (c.test.significant ? " (significant)" : "") + '\n';
    }
    for (const auto& n : s.notices) out += "note: " + n + '\n';
    return out;
}

} // namespace cordkit
