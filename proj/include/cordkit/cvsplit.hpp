#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cordkit/bids.hpp"

namespace cordkit {

enum class Role { train, validation, test };
const char* to_string(Role r) noexcept;
Role role_from_string(const std::string& s);

struct Assignment {
    std::string subject;
    Role role = Role::train;

    bool operator==(const Assignment&) const = default;
};

struct FoldPlan {
    int k = 9;
    std::uint64_t seed = 0;
    std::array<double, 3> target_ratio{0.70, 0.15, 0.15}; ///< train, validation, test
    bool stratified_fold0 = false;
    /// One list per fold, sorted by subject id.
    std::vector<std::vector<Assignment>> folds;
    std::vector<std::string> warnings;

    Role role_of(int fold, const std::string& subject) const; ///< throws missing_subject
    std::vector<std::string> subjects_with(int fold, Role role) const;
};

struct SplitOptions {
    int k = 9;
    std::uint64_t seed = 0;
    bool stratify_fold0 = false;
    double tolerance = 0.05; ///< preferred bound on each share's deviation
};

/// Subjects are shuffled with the seed and visited as a circular list. Fold f
/// takes its test window at offset f * ceil(N/k): at least ceil(N/k) subjects
/// and as many as bring the test slice share closest to 15%; the following
/// subjects closest to 15% form validation (sizes keeping all three shares
/// within tolerance win over closer ones that do not); the rest train. With
/// stratify_fold0, fold 0 comes from stratify_fold0() and folds 1..k-1 rotate
/// over the subjects not tested in fold 0.
FoldPlan plan_folds(const DatasetManifest& manifest, const SplitOptions& options = {});

/// Group-wise greedy assignment: subjects by decreasing slice count go to the
/// role with the largest slice deficit against 70/15/15 (ties: validation,
/// test, train). Groups under 3 subjects go wholly to train with a warning.
std::vector<Assignment> stratify_fold0(const DatasetManifest& manifest, std::uint64_t seed,
                                       std::vector<std::string>* warnings = nullptr);

struct PlanCheck {
    double tolerance = 0.05;
    /// Ratio checks need enough subjects for the slice shares to be reachable.
    std::size_t min_subjects_for_ratio = 20;
    std::size_t min_group_subjects_for_ratio = 10;
};

struct Violation {
    std::string kind; ///< partition, leakage, ratio, coverage, group_ratio
    int fold = -1;
    std::string message;
};

std::vector<Violation> validate_plan(const FoldPlan& plan, const DatasetManifest& manifest,
                                     const PlanCheck& check = {});

/// Slice share of each role in one fold.
std::array<double, 3> realized_ratio(const std::vector<Assignment>& fold, const DatasetManifest& manifest);

/// fold, participant_id, role; one row per subject per fold.
std::string folds_tsv(const FoldPlan& plan);
void write_folds_tsv(const FoldPlan& plan, const std::filesystem::path& path);
FoldPlan read_folds_tsv(const std::filesystem::path& path);

} // namespace cordkit
