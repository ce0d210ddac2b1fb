#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cordkit/bids.hpp"
#include "cordkit/image.hpp"

namespace cordkit {

enum class CombineMode { root_sum_of_squares, sum_of_squares };
const char* to_string(CombineMode m) noexcept;
CombineMode combine_mode_from_string(const std::string& s);

struct PreprocParams {
    double target_res = 0.175; ///< mm
    int crop = 128;            ///< px, even
    CombineMode combine_mode = CombineMode::root_sum_of_squares;
    int threads = 1;
};

void validate(const PreprocParams& p);

/// Per-pixel sqrt(sum e^2) or sum e^2 over echoes on identical grids.
ImageSlice medic_combine(std::span<const ImageSlice> echoes, CombineMode mode = CombineMode::root_sum_of_squares);

/// Resamples to target_res (pixel-centre aligned; bilinear image, nearest
/// mask), then crops crop x crop around the rounded SC barycenter so that it
/// lands on pixel (crop/2, crop/2). Zero outside the field of view.
/// Throws empty_mask when the mask has no SC pixel.
std::pair<ImageSlice, LabelMask> reslice_and_crop(const ImageSlice& img, const LabelMask& mask,
                                                  const PreprocParams& params = {});

struct Exclusion {
    std::string subject;
    int slice = 0; ///< index in the raw stack
    std::string reason;

    bool operator==(const Exclusion&) const = default;
};

struct PreprocReport {
    std::size_t processed = 0;
    std::vector<Exclusion> exclusions;
    DatasetManifest manifest; ///< the written BIDS dataset
};

/// Raw layout, one directory per subject:
///   <raw>/participants.tsv
///   <raw>/<sub>/<sub>_echo-<k>.nii.gz   (k = 1..E, stacks of equal length)
///   <raw>/<sub>/<sub>_mask.nii.gz       (optional)
namespace raw {
std::filesystem::path echo_path(const std::filesystem::path& root, const std::string& subject, int echo);
std::filesystem::path mask_path(const std::filesystem::path& root, const std::string& subject);
} // namespace raw

/// Combines echoes, reslices and crops every slice, writes the BIDS tree to
/// `out` plus <out>/exclusions.tsv (subject, slice, reason). Slices with a
/// missing or empty SC mask are excluded; subjects left with no slices are
/// dropped from participants.tsv.
PreprocReport run_preprocessing(const std::filesystem::path& raw_root, const std::filesystem::path& out,
                                const PreprocParams& params = {}, const std::string& dataset_id = "");

std::string exclusions_tsv(const std::vector<Exclusion>& exclusions);

} // namespace cordkit
