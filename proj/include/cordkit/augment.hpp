#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cordkit/image.hpp"

namespace cordkit {

enum class Policy { without, classical, smart, realistic, hybrid };
const char* to_string(Policy p) noexcept;
Policy policy_from_string(const std::string& s);

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct AugmentConfig {
    Policy policy = Policy::hybrid;
    Range rotation_deg{-10.0, 10.0};
    Range scale{0.9, 1.1};
    Range translation_px{-4.0, 4.0};
    Range resize_scale{0.8, 1.2};
    int elastic_grid = 7;
    Range elastic_max_disp{1.0, 3.0};
    Range ghost_period{2.0, 6.0}; ///< integer periods, inclusive
    Range ghost_intensity{0.2, 0.6};
    Range motion_shift_px{1.0, 4.0};
    Range motion_cutoff{0.3, 0.7};
    int phase_axis = 1; ///< 0: lines vary along x, 1: along y
    std::array<double, 3> weights{1.0, 1.0, 1.0}; ///< classical, smart, realistic
    std::uint64_t master_seed = 0;
    int samples_per_slice = 1; ///< per epoch
};

/// Throws config errors on empty/non-finite ranges, bad weights or bounds.
void validate(const AugmentConfig& c);

struct Provenance {
    SliceId source;
    std::string kind; ///< identity, affine, resize, elastic, ghosting, motion, realistic
    std::vector<std::pair<std::string, double>> params;
    std::uint64_t seed = 0;
    std::string target; ///< realistic only: subject whose anatomy is used
    std::string note;   ///< e.g. fallback notice

    double param(const std::string& name) const; ///< throws invalid_argument if absent
    std::string params_text() const;             ///< name=value;name=value
};

struct AugmentedSample {
    ImageSlice image;
    LabelMask labels;
    Provenance provenance;
};

// Deterministic kernels. Identity parameters return exact copies.

/// Pull-back q = R(-theta)(p - c - t) / s + c about c = ((w-1)/2, (h-1)/2).
/// Multiples of 90 degrees use exact cosines.
AugmentedSample affine_transform(const ImageSlice& img, const LabelMask& mask, double theta_deg, double scale,
                                 double tx, double ty);
AugmentedSample resize_aug(const ImageSlice& img, const LabelMask& mask, double scale);
/// Dense field bilinearly interpolated from a grid_n x grid_n lattice spanning the grid.
DeformationField elastic_field(int width, int height, int grid_n, double max_disp, std::uint64_t seed);
AugmentedSample elastic_deform(const ImageSlice& img, const LabelMask& mask, int grid_n, double max_disp,
                               std::uint64_t seed);
/// k-space lines k (0-based, DC at 0) with k % period == 0 and k != 0 along
/// `axis` are scaled by (1 - intensity); output is the inverse magnitude.
AugmentedSample ghosting(const ImageSlice& img, const LabelMask& mask, int period, double intensity, int axis = 1);
/// Lines are visited in linear centred order (-L/2 .. L/2-1); the first
/// floor(cutoff * L) come from the spectrum of the image shifted by shift_px
/// along `axis` (Fourier phase ramp), the rest from the original.
AugmentedSample motion_artifact(const ImageSlice& img, const LabelMask& mask, double shift_px, double cutoff,
                                int axis = 1);

// Randomized wrappers: parameters drawn from the config ranges with `seed`.
AugmentedSample random_affine(const ImageSlice& img, const LabelMask& mask, const AugmentConfig& c,
                              std::uint64_t seed);
AugmentedSample random_resize(const ImageSlice& img, const LabelMask& mask, const AugmentConfig& c,
                              std::uint64_t seed);
AugmentedSample random_elastic(const ImageSlice& img, const LabelMask& mask, const AugmentConfig& c,
                               std::uint64_t seed);
AugmentedSample random_ghosting(const ImageSlice& img, const LabelMask& mask, const AugmentConfig& c,
                                std::uint64_t seed);
AugmentedSample random_motion(const ImageSlice& img, const LabelMask& mask, const AugmentConfig& c,
                              std::uint64_t seed);

/// Source of Realistic samples (implemented over a registered template space).
class RealisticProvider {
public:
    virtual ~RealisticProvider() = default;
    /// Subjects whose anatomy a slice of `subject` can be morphed onto.
    virtual std::vector<std::string> targets_for(const std::string& subject) const = 0;
    virtual AugmentedSample morph(const ImageSlice& img, const LabelMask& mask, const std::string& target) const = 0;
};

/// combine_seed(master_seed, hash_string(slice_id), epoch) mixed once more
/// with the sample index.
std::uint64_t sample_seed(std::uint64_t master_seed, const SliceId& slice, int epoch, int index = 0);

/// Applies the config's policy. For hybrid, a category is drawn by the
/// weights and a transform uniformly within it (classical: affine, resize;
/// smart: elastic, ghosting, motion; realistic: provider). Realistic without
/// any available target falls back to smart and notes it in the provenance.
AugmentedSample augment_sample(const ImageSlice& img, const LabelMask& mask, const AugmentConfig& c,
                               const RealisticProvider* provider, int epoch, int index = 0);
AugmentedSample hybrid_sample(const ImageSlice& img, const LabelMask& mask, const AugmentConfig& c,
                              const RealisticProvider* provider, int epoch, int index = 0);

/// Re-applies a recorded transform to its source.
AugmentedSample replay(const ImageSlice& img, const LabelMask& mask, const Provenance& p,
                       const RealisticProvider* provider = nullptr);

struct AugmentRun {
    std::size_t samples = 0;
    std::vector<std::string> notices;
};

/// Augments every slice of a BIDS tree for `epochs` epochs. Writes, under
/// out_dir, per subject and per (epoch, index) an image stack
/// <sub>/anat/<sub>_desc-e<E>s<I>_T2star.nii.gz with its label stack
/// <sub>/anat/<sub>_desc-e<E>s<I>_seg-manual.nii.gz, plus provenance.tsv and
/// dataset_description.json. Bytes do not depend on `threads`.
AugmentRun run_augmentation(const std::filesystem::path& bids_root, const std::filesystem::path& out_dir,
                            const AugmentConfig& c, const RealisticProvider* provider, int epochs = 1,
                            int threads = 1);

std::string provenance_tsv(const std::vector<std::pair<std::string, Provenance>>& rows);

} // namespace cordkit
