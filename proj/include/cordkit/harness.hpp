#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cordkit/augment.hpp"
#include "cordkit/bids.hpp"
#include "cordkit/groupreg.hpp"
#include "cordkit/image.hpp"
#include "cordkit/preprocess.hpp"
#include "cordkit/segmetrics.hpp"
#include "cordkit/segstats.hpp"

namespace cordkit {

// Phantoms

struct ResolutionRow {
    Acquisition acq = Acquisition::HR;
    double res = 0.175;      ///< mm, in-plane
    double thickness = 2.2;  ///< mm
    std::string center;
    double weight = 1.0;     ///< relative subject share
};

/// Anatomy lengths are in pixels of the 0.175 mm canonical grid; the
/// renderer converts them to millimetres so every raw resolution images the
/// same physical cord.
struct PhantomSpec {
    std::string dataset_id = "DS1";
    std::array<int, 3> groups{34, 25, 13}; ///< HC, ALS, MS
    std::array<int, 2> slices{8, 20};      ///< per subject, inclusive
    Range cord_rx{24.0, 30.0};
    Range cord_ry{16.0, 21.0};
    Range lobe_offset{0.38, 0.46}; ///< lobe centre distance, fraction of cord_rx
    Range lobe_rx{0.26, 0.32};     ///< fraction of cord_rx
    Range lobe_ry{0.50, 0.62};     ///< fraction of cord_ry
    Range csf_width{3.0, 5.0};
    Range rotation_deg{-15.0, 15.0};
    Range center_jitter{-6.0, 6.0}; ///< cord offset from the FOV centre
    Range background{0.08, 0.12};
    Range csf{0.30, 0.38};
    Range wm{0.56, 0.64};
    Range gm{0.76, 0.84};
    double noise_std = 0.02;
    double fov_mm = 32.0;
    int echoes = 2;
    std::vector<ResolutionRow> resolutions;

    /// Table-1-like presets: "ds1" (monocentric, four resolution rows) and
    /// "ds2" (five HC over three centres, shifted contrast and noise).
    static PhantomSpec preset(const std::string& name);
};

/// Throws config errors; infeasible geometry (a lobe reaching the cord
/// boundary, intensities closer than 3 noise std) included.
void validate(const PhantomSpec& spec);

struct PhantomSlice {
    ImageSlice image;  ///< noisy, before echo splitting
    LabelMask labels;  ///< ground truth on the same grid
};

/// One slice rendered on a res x res grid covering fov_mm. Deterministic in
/// (spec, seed, subject, slice).
PhantomSlice render_phantom_slice(const PhantomSpec& spec, double res, std::uint64_t seed, const std::string& subject,
                                  int slice);

/// Writes the raw layout read by run_preprocessing under `out`. Returns the
/// manifest of the raw data.
DatasetManifest generate_phantoms(const PhantomSpec& spec, std::uint64_t seed, const std::filesystem::path& out);

// Segmenters

enum class SegMode { multi_class, sc_only, gm_only };
const char* to_string(SegMode m) noexcept;
SegMode seg_mode_from_string(const std::string& s);

/// Intensity threshold maximizing between-class variance, with the
/// separability ratio (between-class over total variance) in `eta`.
double otsu_threshold(std::span<const double> values, double* eta = nullptr);

/// Threshold-and-component stand-in segmenter. SC is the largest
/// 4-connected component above the Otsu threshold inside the central half of
/// the grid; GM is the SC pixels above the 70th SC percentile, opened with a
/// radius-1 cross. Images whose central region is not bimodal enough
/// (eta < 0.75) give an empty mask.
LabelMask baseline_segment(const ImageSlice& img, SegMode mode);

/// GM overrides WM wherever both claim a pixel.
LabelMask merge_single_class(const LabelMask& sc, const LabelMask& gm);

struct ExternalCall {
    std::string command;            ///< with {input}, {output}; optional {gt}, {mode}, {train}, {subject}, {slice}
    double timeout_s = 60.0;
};

/// Replaces every {key} by its value; unknown keys are left alone.
std::string substitute(std::string text, const std::vector<std::pair<std::string, std::string>>& values);

/// Runs `sh -c <command>` with the placeholders substituted and reads a
/// one-slice label NIfTI from `output`. Throws external_exit,
/// external_timeout or external_output.
LabelMask run_external_segmenter(const ExternalCall& call, const std::filesystem::path& input,
                                 const std::filesystem::path& output, int width, int height,
                                 const std::vector<std::pair<std::string, std::string>>& extra = {});

// Experiments

struct SegmenterSpec {
    std::string kind = "baseline"; ///< baseline | external
    ExternalCall external;
    /// Subtracted from every DSC of the arm (clamped at 0); used to inject a
    /// known degradation.
    double dsc_offset = 0.0;
};

struct Exp1Arm {
    std::string name;
    std::string design = "mcs"; ///< mcs: one multi-class call; scs: sc_only + gm_only merged
    SegmenterSpec segmenter;
};

struct Exp2Arm {
    std::string name;
    Policy policy = Policy::without; ///< reference arms use Policy::without and skip augmentation
    bool reference = false;
    SegmenterSpec segmenter;
};

struct ExperimentConfig {
    std::filesystem::path ds1;
    std::filesystem::path ds2;
    std::filesystem::path output_dir;
    std::filesystem::path fold_plan; ///< empty: planned from ds1
    std::filesystem::path template_dir; ///< empty: realistic falls back to smart
    bool all_folds = true;
    int k = 9;
    bool stratify_fold0 = true;
    std::uint64_t master_seed = 0;
    int threads = 1;
    int epochs = 1;
    double hd_percentile = 100.0;
    SummaryOptions stats;
    AugmentConfig augment;
    std::vector<Exp1Arm> exp1_arms;
    std::vector<Exp2Arm> exp2_arms;
};

/// Throws config errors on empty arm lists, duplicate arm names or external
/// commands without {input} and {output}.
void validate(const ExperimentConfig& c);

struct SliceFailure {
    std::string arm;
    std::string dataset;
    std::string subject;
    int slice = 0;
    std::string error;
};

struct ExperimentReport {
    std::vector<MetricsRecord> records;
    std::vector<SliceFailure> failures;
    std::vector<std::string> outputs; ///< files written, relative to the output dir
};

/// Writes under <output_dir>/exp1: metrics.csv, summary_folds.csv,
/// summary_groups.csv, summary_overall.csv, comparisons.csv, fig4.csv,
/// report.txt, failures.tsv.
ExperimentReport run_exp1(const ExperimentConfig& c);

/// Writes under <output_dir>/exp2: per-arm augmented training trees,
/// boxplot.csv (one row per arm, class, dataset and slice), summary_<ds>.csv,
/// comparisons_<ds>.csv, boxplot_<ds>_<class>.svg, report.txt, failures.tsv.
ExperimentReport run_exp2(const ExperimentConfig& c);

struct BoxStats {
    double q1 = 0, median = 0, q3 = 0, whisker_lo = 0, whisker_hi = 0;
    std::vector<double> outliers;
};
/// Quartiles by linear interpolation; whiskers at the furthest points within
/// 1.5 IQR.
BoxStats box_stats(std::vector<double> values);
std::string boxplot_svg(const std::string& title, const std::vector<std::pair<std::string, std::vector<double>>>& groups);

// Declarative configuration (JSON, schema_version 1)

/// Sections: phantom, prep, split, registration, augment, experiment; top
/// level seed and threads. Missing keys take defaults, unknown keys are
/// config errors.
struct PipelineConfig {
    std::uint64_t seed = 0;
    int threads = 1;
    PhantomSpec phantom = PhantomSpec::preset("ds1");
    PreprocParams prep;
    std::string prep_dataset_id;
    int split_k = 9;
    bool split_stratify = true;
    double split_tolerance = 0.05;
    RegistrationParams registration;
    int template_outer_iters = 3;
    AugmentConfig augment;
    int augment_epochs = 1;
    ExperimentConfig experiment;
};

inline constexpr int kSchemaVersion = 1;

PipelineConfig parse_config(const std::string& json_text);
/// Defaults as JSON, a starting point for user configs.
std::string default_config_json();

} // namespace cordkit
