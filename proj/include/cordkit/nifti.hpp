#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cordkit/image.hpp"

namespace cordkit {

enum class NiftiDatatype : std::int16_t {
    uint8 = 2,
    int16 = 4,
    float32 = 16,
};

/// In-memory NIfTI-1 volume. Voxel (x, y, z, c) lives at
/// ((c * nz + z) * ny + y) * nx + x. Components use dim[5] (vector intent).
struct NiftiVolume {
    int nx = 1;
    int ny = 1;
    int nz = 1;
    int ncomp = 1;
    double sx = 1.0; ///< pixdim[1], mm
    double sy = 1.0; ///< pixdim[2], mm
    double sz = 1.0; ///< pixdim[3], mm
    NiftiDatatype datatype = NiftiDatatype::float32;
    std::vector<double> data;

    std::size_t voxels() const {
        return static_cast<std::size_t>(nx) * ny * nz * ncomp;
    }
};

/// Reads .nii or .nii.gz (gzip detected from content), or an ni1 .hdr/.img
/// pair. Applies scl_slope/scl_inter when slope is non-zero.
NiftiVolume read_nifti(const std::filesystem::path& path);

/// Writes a single-file NIfTI-1 ("n+1"); gzip-compressed when the path ends in
/// ".gz". Values are converted to the volume's datatype (rounded for integers).
void write_nifti(const std::filesystem::path& path, const NiftiVolume& vol);

/// Slices stacked along the third axis. `subject` seeds each slice's SliceId.
std::vector<ImageSlice> read_image_stack(const std::filesystem::path& path, const std::string& subject = {});
std::vector<LabelMask> read_label_stack(const std::filesystem::path& path, const std::string& subject = {});

void write_image_stack(const std::filesystem::path& path, std::span<const ImageSlice> slices,
                       double slice_thickness = 1.0, NiftiDatatype type = NiftiDatatype::float32);
void write_label_stack(const std::filesystem::path& path, std::span<const LabelMask> masks,
                       double slice_thickness = 1.0);

/// Two-component float32 volume (dx, dy) in pixel units.
void write_field(const std::filesystem::path& path, const DeformationField& field);
DeformationField read_field(const std::filesystem::path& path);

} // namespace cordkit
