#include "cordkit/cvsplit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>

#include "cordkit/error.hpp"
#include "cordkit/rng.hpp"
#include "cordkit/tables.hpp"

namespace cordkit {

namespace fs = std::filesystem;

const char* to_string(Role r) noexcept {
    switch (r) {
    case Role::train: return "train";
    case Role::validation: return "validation";
    case Role::test: return "test";
    }
    return "?";
}

Role role_from_string(const std::string& s) {
    if (s == "train") return Role::train;
    if (s == "validation") return Role::validation;
    if (s == "test") return Role::test;
    fail(ErrorCode::config, "unknown role '" + s + "'");
}

Role FoldPlan::role_of(int fold, const std::string& subject) const {
    require(fold >= 0 && fold < static_cast<int>(folds.size()), ErrorCode::invalid_argument,
            "fold " + std::to_string(fold) + " out of range");
    for (const auto& a : folds[static_cast<std::size_t>(fold)])
        if (a.subject == subject) return a.role;
    fail(ErrorCode::missing_subject, subject + " is not in fold " + std::to_string(fold));
}

std::vector<std::string> FoldPlan::subjects_with(int fold, Role role) const {
    std::vector<std::string> out;
    for (const auto& a : folds.at(static_cast<std::size_t>(fold)))
        if (a.role == role) out.push_back(a.subject);
    return out;
}

namespace {

using SliceCounts = std::map<std::string, double>;

SliceCounts slice_counts(const DatasetManifest& m) {
    SliceCounts out;
    for (const auto& s : m.subjects) out[s.subject_id] = s.n_slices;
    return out;
}

std::vector<std::string> seeded_order(const DatasetManifest& m, std::uint64_t seed) {
    std::vector<std::string> ids;
    for (const auto& s : m.subjects) ids.push_back(s.subject_id);
    std::sort(ids.begin(), ids.end());
    Rng rng(seed);
    rng.shuffle(ids.begin(), ids.end());
    return ids;
}

// Number of consecutive subjects from `start` (circular) whose slice total is
// closest to `target`, between 1 and max_count.
std::size_t closest_count(const std::vector<std::string>& order, std::size_t start, std::size_t max_count,
                          const SliceCounts& slices, double target) {
    double cum = 0.0, best_err = 0.0;
    std::size_t best = 1;
    for (std::size_t c = 1; c <= max_count; ++c) {
        cum += slices.at(order[(start + c - 1) % order.size()]);
        const double err = std::abs(cum - target);
        if (c == 1 || err < best_err) {
            best_err = err;
            best = c;
        }
    }
    return best;
}

std::vector<Assignment> sorted(std::map<std::string, Role> roles) {
    std::vector<Assignment> out;
    for (auto& [s, r] : roles) out.push_back({s, r});
    return out;
}

void rotate_folds(const std::vector<std::string>& order, int nfolds, const SliceCounts& slices, double total,
                  const std::array<double, 3>& target, double tolerance, const std::vector<std::string>& everyone,
                  std::vector<std::vector<Assignment>>& out) {
    const std::size_t m = order.size();
    require(m >= 3, ErrorCode::infeasible, "need at least 3 subjects to rotate folds");
    const std::size_t w = (m + static_cast<std::size_t>(nfolds) - 1) / static_cast<std::size_t>(nfolds);
    for (int f = 0; f < nfolds; ++f) {
        const std::size_t start = (static_cast<std::size_t>(f) * w) % m;
        const std::size_t n_test =
            std::min(std::max(w, closest_count(order, start, m - 2, slices, target[2] * total)), m - 2);
        const std::size_t vstart = (start + n_test) % m;
        double test_slices = 0.0;
        for (std::size_t i = 0; i < n_test; ++i) test_slices += slices.at(order[(start + i) % m]);
        // Validation closest to its share, preferring sizes that keep every
        // share within tolerance.
        std::size_t n_val = 0;
        double best = 0.0, val_slices = 0.0;
        bool best_ok = false;
        for (std::size_t c = 1; c <= m - n_test - 1; ++c) {
            val_slices += slices.at(order[(vstart + c - 1) % m]);
            const double train_slices = total - test_slices - val_slices;
            const bool ok = std::abs(val_slices - target[1] * total) <= tolerance * total &&
                            std::abs(train_slices - target[0] * total) <= tolerance * total &&
                            std::abs(test_slices - target[2] * total) <= tolerance * total;
            const double err = std::abs(val_slices - target[1] * total);
            if (n_val == 0 || (ok && !best_ok) || (ok == best_ok && err < best)) {
                best = err;
                best_ok = ok;
                n_val = c;
            }
        }
        std::map<std::string, Role> roles;
        for (const auto& s : everyone) roles[s] = Role::train;
        for (std::size_t i = 0; i < n_test; ++i) roles[order[(start + i) % m]] = Role::test;
        for (std::size_t i = 0; i < n_val; ++i) roles[order[(vstart + i) % m]] = Role::validation;
        out.push_back(sorted(std::move(roles)));
    }
}

} // namespace

std::vector<Assignment> stratify_fold0(const DatasetManifest& manifest, std::uint64_t seed,
                                       std::vector<std::string>* warnings) {
    const auto slices = slice_counts(manifest);
    const auto order = seeded_order(manifest, seed);
    std::map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < order.size(); ++i) position[order[i]] = i;

    std::map<Group, std::vector<std::string>> groups;
    for (const auto& s : manifest.subjects) groups[s.group].push_back(s.subject_id);

    const std::array<double, 3> target{0.70, 0.15, 0.15};
    std::map<std::string, Role> roles;
    for (auto& [g, members] : groups) {
        if (members.size() < 3) {
            if (warnings)
                warnings->push_back(std::string("group ") + to_string(g) + " has " + std::to_string(members.size()) +
                                    " subject(s); placed wholly in train");
            for (const auto& s : members) roles[s] = Role::train;
            continue;
        }
        std::sort(members.begin(), members.end(),
                  [&](const auto& a, const auto& b) { return position[a] < position[b]; });
        std::stable_sort(members.begin(), members.end(),
                         [&](const auto& a, const auto& b) { return slices.at(a) > slices.at(b); });
        double group_total = 0.0;
        for (const auto& s : members) group_total += slices.at(s);
        std::array<double, 3> filled{0, 0, 0};
        for (const auto& s : members) {
            // Tie order: validation, test, train.
            constexpr std::array<int, 3> pref{1, 2, 0};
            int best = pref[0];
            double best_def = target[1] * group_total - filled[1];
            for (int r : {2, 0}) {
                const double def = target[static_cast<std::size_t>(r)] * group_total - filled[static_cast<std::size_t>(r)];
                if (def > best_def + 1e-12) {
                    best_def = def;
                    best = r;
                }
            }
            filled[static_cast<std::size_t>(best)] += slices.at(s);
            roles[s] = static_cast<Role>(best);
        }
    }
    return sorted(std::move(roles));
}

FoldPlan plan_folds(const DatasetManifest& manifest, const SplitOptions& options) {
    validate_manifest(manifest);
    require(options.k >= 3, ErrorCode::invalid_argument, "k must be at least 3");
    require(!manifest.subjects.empty(), ErrorCode::invalid_argument, "manifest has no subjects");
    require(static_cast<std::size_t>(options.k) <= manifest.subjects.size(), ErrorCode::infeasible,
            "k = " + std::to_string(options.k) + " exceeds the " + std::to_string(manifest.subjects.size()) +
                " subjects");

    FoldPlan plan;
    plan.k = options.k;
    plan.seed = options.seed;
    plan.stratified_fold0 = options.stratify_fold0;
    const auto slices = slice_counts(manifest);
    const auto order = seeded_order(manifest, options.seed);
    std::vector<std::string> everyone(order.begin(), order.end());
    std::sort(everyone.begin(), everyone.end());
    const double total = static_cast<double>(manifest.total_slices());

    if (!options.stratify_fold0) {
        rotate_folds(order, options.k, slices, total, plan.target_ratio, options.tolerance, everyone, plan.folds);
        return plan;
    }
    plan.folds.push_back(stratify_fold0(manifest, options.seed, &plan.warnings));
    std::set<std::string> tested;
    for (const auto& a : plan.folds[0])
        if (a.role == Role::test) tested.insert(a.subject);
    std::vector<std::string> rest;
    for (const auto& s : order)
        if (!tested.contains(s)) rest.push_back(s);
    rotate_folds(rest, options.k - 1, slices, total, plan.target_ratio, options.tolerance, everyone, plan.folds);
    return plan;
}

std::array<double, 3> realized_ratio(const std::vector<Assignment>& fold, const DatasetManifest& manifest) {
    std::array<double, 3> sums{0, 0, 0};
    double total = 0;
    for (const auto& a : fold) {
        const auto* s = manifest.find(a.subject);
        if (!s) continue;
        sums[static_cast<std::size_t>(a.role)] += s->n_slices;
        total += s->n_slices;
    }
    if (total > 0)
        for (auto& v : sums) v /= total;
    return sums;
}

std::vector<Violation> validate_plan(const FoldPlan& plan, const DatasetManifest& manifest, const PlanCheck& check) {
    std::vector<Violation> out;
    std::set<std::string> all;
    for (const auto& s : manifest.subjects) all.insert(s.subject_id);
    std::set<std::string> tested;
    const double slack = 1e-9;
    const char* names[] = {"train", "validation", "test"};

    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
        const int fi = static_cast<int>(f);
        const auto& fold = plan.folds[f];
        std::map<std::string, std::set<Role>> roles;
        for (const auto& a : fold) {
            roles[a.subject].insert(a.role);
            if (a.role == Role::test) tested.insert(a.subject);
        }
        for (const auto& s : all)
            if (!roles.contains(s)) out.push_back({"partition", fi, s + " has no role"});
        for (const auto& [s, r] : roles) {
            if (!all.contains(s)) out.push_back({"partition", fi, s + " is not in the manifest"});
            const auto n = static_cast<std::size_t>(std::count_if(fold.begin(), fold.end(),
                                                                  [&](const Assignment& a) { return a.subject == s; }));
            if (r.size() == 1 && n > 1) out.push_back({"partition", fi, s + " listed " + std::to_string(n) + " times"});
            if (r.size() > 1) {
                // Every slice of this subject would sit in more than one set.
                const auto* rec = manifest.find(s);
                const int n_slices = rec ? rec->n_slices : 0;
                std::string sets;
                for (auto role : r) sets += std::string(sets.empty() ? "" : "+") + to_string(role);
                out.push_back({"leakage", fi,
                               s + ": " + std::to_string(n_slices) + " slice(s) appear in " + sets});
            }
        }
        if (all.size() >= check.min_subjects_for_ratio) {
            const auto ratio = realized_ratio(fold, manifest);
            for (std::size_t r = 0; r < 3; ++r)
                if (std::abs(ratio[r] - plan.target_ratio[r]) > check.tolerance + slack)
                    out.push_back({"ratio", fi,
                                   std::string(names[r]) + " share " + format_fixed6(ratio[r]) + " vs target " +
                                       format_fixed6(plan.target_ratio[r])});
        }
    }
    for (const auto& s : all)
        if (!tested.contains(s)) out.push_back({"coverage", -1, s + " is never in a test set"});

    if (plan.stratified_fold0 && !plan.folds.empty()) {
        std::map<Group, std::vector<Assignment>> by_group;
        for (const auto& a : plan.folds[0])
            if (const auto* s = manifest.find(a.subject)) by_group[s->group].push_back(a);
        for (const auto& [g, members] : by_group) {
            if (members.size() < check.min_group_subjects_for_ratio) continue;
            const auto ratio = realized_ratio(members, manifest);
            for (std::size_t r = 0; r < 3; ++r)
                if (std::abs(ratio[r] - plan.target_ratio[r]) > check.tolerance + slack)
                    out.push_back({"group_ratio", 0,
                                   std::string(to_string(g)) + " " + names[r] + " share " + format_fixed6(ratio[r])});
        }
    }
    return out;
}

std::string folds_tsv(const FoldPlan& plan) {
    std::string out = "fold\tparticipant_id\trole\n";
    for (std::size_t f = 0; f < plan.folds.size(); ++f)
        for (const auto& a : plan.folds[f]) out += std::to_string(f) + '\t' + a.subject + '\t' + to_string(a.role) + '\n';
    return out;
}

void write_folds_tsv(const FoldPlan& plan, const fs::path& path) { write_text_file(path, folds_tsv(plan)); }

FoldPlan read_folds_tsv(const fs::path& path) {
    const auto t = read_table(path, '\t');
    const auto c_fold = t.column("fold"), c_id = t.column("participant_id"), c_role = t.column("role");
    FoldPlan plan;
    for (const auto& row : t.rows) {
        int f = -1;
        const auto& s = row[c_fold];
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), f);
        require(ec == std::errc() && p == s.data() + s.size() && f >= 0, ErrorCode::config, "bad fold index " + s);
        if (plan.folds.size() <= static_cast<std::size_t>(f)) plan.folds.resize(static_cast<std::size_t>(f) + 1);
        plan.folds[static_cast<std::size_t>(f)].push_back({row[c_id], role_from_string(row[c_role])});
    }
    plan.k = static_cast<int>(plan.folds.size());
    return plan;
}

} // namespace cordkit
