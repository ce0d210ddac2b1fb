#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cordkit/augment.hpp"
#include "cordkit/image.hpp"

namespace cordkit {

struct RegistrationParams {
    int levels = 3;
    int iters_per_level = 60;
    double step = 1.0;            ///< px; a demons update never exceeds step/2
    double fluid_sigma = 1.0;     ///< px, smoothing of each update
    double diffusion_sigma = 1.5; ///< px, smoothing of the accumulated field
    double convergence_tol = 1e-4;
};

void validate(const RegistrationParams& p);

/// Bilinear pull-back warp with coordinates clamped to the grid.
ImageSlice warp_clamped(const ImageSlice& img, const DeformationField& f);
double ssd(const ImageSlice& a, const ImageSlice& b);
/// Min-max scaling to [0,1]; a constant image maps to zeros.
ImageSlice normalize_unit(const ImageSlice& img);

/// Demons registration over a Gaussian pyramid. Returns phi on the fixed grid
/// such that warp_clamped(moving, phi) approximates fixed. The result never
/// has a higher SSD than the zero field. Inputs must lie in [0,1].
DeformationField register_pair(const ImageSlice& moving, const ImageSlice& fixed, const RegistrationParams& params = {});

struct TraceRow {
    int iteration = 0;
    double mean_field_norm = 0.0; ///< pixel mean of |mean over subjects of phi_s|
    double mean_ssd = 0.0;        ///< mean SSD of warped subjects to the template
};

struct TemplateSpace {
    ImageSlice template_image{1, 1, Spacing{}};
    std::vector<std::string> subjects;          ///< sorted
    std::vector<DeformationField> forward;      ///< subject -> template (template grid into subject)
    std::vector<DeformationField> inverse;      ///< template -> subject
    std::vector<TraceRow> trace;
    double inverse_residual = 0.0; ///< max over subjects of |compose(fwd, inv)|_inf

    std::size_t index_of(const std::string& subject) const; ///< throws missing_subject
};

/// Group-wise template: start from the mean of normalized inputs; each outer
/// iteration registers every subject to the template, averages the warped
/// subjects and re-centres the shape by warping with the inverse mean field.
/// A final pass stores forward and inverse fields to the final template.
/// `subjects[i]` names `slices[i]`.
TemplateSpace build_template(const std::vector<ImageSlice>& slices, const std::vector<std::string>& subjects,
                             const RegistrationParams& params = {}, int outer_iters = 3, int threads = 1);

/// Subject i's image and labels resampled onto subject j's anatomy with
/// compose(phi_i, phi_j^-1).
AugmentedSample realistic_augment(const ImageSlice& img, const LabelMask& mask, const std::string& source_subject,
                                  const std::string& target_subject, const TemplateSpace& space);

/// One sample per source slice and per other registered subject, in sorted
/// subject order.
std::vector<AugmentedSample> generate_realistic_set(const std::map<std::string, std::vector<std::pair<ImageSlice, LabelMask>>>& dataset,
                                                    const TemplateSpace& space);

class TemplateProvider : public RealisticProvider {
public:
    explicit TemplateProvider(const TemplateSpace& space) : space_(space) {}
    std::vector<std::string> targets_for(const std::string& subject) const override;
    AugmentedSample morph(const ImageSlice& img, const LabelMask& mask, const std::string& target) const override;

private:
    const TemplateSpace& space_;
};

/// template.nii.gz, fields/<sub>_fwd.nii.gz, fields/<sub>_inv.nii.gz, trace.csv
void save_template_space(const TemplateSpace& space, const std::filesystem::path& dir);
TemplateSpace load_template_space(const std::filesystem::path& dir);

/// Builds a template from the middle slice of each subject of a BIDS tree.
TemplateSpace build_template_from_bids(const std::filesystem::path& bids_root, const RegistrationParams& params = {},
                                       int outer_iters = 3, int threads = 1);

} // namespace cordkit
