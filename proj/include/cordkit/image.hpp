#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cordkit {

/// Physical pixel size in mm along x (columns) and y (rows).
struct Spacing {
    double x = 1.0;
    double y = 1.0;
    bool operator==(const Spacing&) const = default;
};

/// Identifies a slice by subject and its position in the subject's stack.
struct SliceId {
    std::string subject;
    int index = 0;

    std::string str() const;
    bool operator==(const SliceId&) const = default;
    auto operator<=>(const SliceId&) const = default;
};

/// Class codes carried by a LabelMask.
enum LabelCode : std::uint8_t {
    kBackground = 0,
    kWhiteMatter = 1,
    kGrayMatter = 2,
};

inline constexpr std::uint8_t kSpinalCordCodes[] = {kWhiteMatter, kGrayMatter};
inline constexpr std::uint8_t kGrayMatterCodes[] = {kGrayMatter};

/// 2D scalar intensities, row-major, index = y * width + x.
/// Invariants: positive extents, positive spacing, finite non-negative data.
class ImageSlice {
public:
    ImageSlice(int width, int height, Spacing spacing, std::vector<double> data, SliceId id = {});
    ImageSlice(int width, int height, Spacing spacing, double fill = 0.0, SliceId id = {});

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    Spacing spacing() const noexcept { return spacing_; }
    const SliceId& id() const noexcept { return id_; }
    std::span<const double> data() const noexcept { return data_; }

    double at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

    ImageSlice with_data(std::vector<double> data) const {
        return ImageSlice(width_, height_, spacing_, std::move(data), id_);
    }
    ImageSlice with_id(SliceId id) const {
        ImageSlice copy = *this;
        copy.id_ = std::move(id);
        return copy;
    }

    bool same_grid(int w, int h) const noexcept { return w == width_ && h == height_; }

private:
    int width_;
    int height_;
    Spacing spacing_;
    std::vector<double> data_;
    SliceId id_;
};

/// Per-pixel class codes in {0 = background, 1 = WM, 2 = GM}. SC = WM ∪ GM.
class LabelMask {
public:
    LabelMask(int width, int height, Spacing spacing, std::vector<std::uint8_t> codes, SliceId id = {});
    LabelMask(int width, int height, Spacing spacing, SliceId id = {});

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return codes_.size(); }
    Spacing spacing() const noexcept { return spacing_; }
    const SliceId& id() const noexcept { return id_; }
    std::span<const std::uint8_t> codes() const noexcept { return codes_; }

    std::uint8_t at(int x, int y) const { return codes_[static_cast<std::size_t>(y) * width_ + x]; }

    LabelMask with_codes(std::vector<std::uint8_t> codes) const {
        return LabelMask(width_, height_, spacing_, std::move(codes), id_);
    }
    LabelMask with_id(SliceId id) const {
        LabelMask copy = *this;
        copy.id_ = std::move(id);
        return copy;
    }

    std::size_t count(std::span<const std::uint8_t> classes) const;

private:
    int width_;
    int height_;
    Spacing spacing_;
    std::vector<std::uint8_t> codes_;
    SliceId id_;
};

/// Dense displacement field in pixel units. Pull-back convention:
/// warp(img, f)(p) = img(p + f(p)).
class DeformationField {
public:
    DeformationField(int width, int height);
    DeformationField(int width, int height, std::vector<double> dx, std::vector<double> dy);

    static DeformationField constant(int width, int height, double dx, double dy);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return dx_.size(); }
    std::span<const double> dx() const noexcept { return dx_; }
    std::span<const double> dy() const noexcept { return dy_; }

    /// Bilinear sample of both components; positions outside the grid take
    /// the nearest edge value.
    std::pair<double, double> sample(double x, double y) const;

    /// max over pixels of the displacement's Euclidean length.
    double max_norm() const;
    double mean_norm() const;

private:
    int width_;
    int height_;
    std::vector<double> dx_;
    std::vector<double> dy_;
};

/// Plain real grid for signed intermediate quantities (differences,
/// gradients, displacement components).
struct ScalarGrid {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct ComplexGrid {
    int width = 0;
    int height = 0;
    std::vector<std::complex<double>> values;

    std::complex<double>& operator()(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
    const std::complex<double>& operator()(int x, int y) const {
        return values[static_cast<std::size_t>(y) * width + x];
    }
};

// Sampling

/// Bilinear interpolation; neighbours outside the grid read as zero.
double bilinear_sample(const ImageSlice& img, double x, double y);

/// Nearest grid point with ties rounded up (floor(x + 0.5)); outside → background.
std::uint8_t nearest_sample(const LabelMask& mask, double x, double y);

// Smoothing

/// Normalized Gaussian taps for offsets -r..r, r = ceil(4 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian with edge replication. sigma == 0 returns the input.
ImageSlice gaussian_smooth(const ImageSlice& img, double sigma);
ScalarGrid gaussian_smooth(const ScalarGrid& grid, double sigma);
DeformationField gaussian_smooth(const DeformationField& field, double sigma);

// Fourier transforms (unnormalized forward, 1/(w h) inverse, DC at index 0).

ComplexGrid dft2(const ImageSlice& img);
ComplexGrid dft2(const ComplexGrid& grid);
ComplexGrid idft2(const ComplexGrid& spectrum);
/// Inverse transform followed by pixel-wise magnitude.
ImageSlice idft2_magnitude(const ComplexGrid& spectrum, Spacing spacing, SliceId id = {});

/// 1D transform used by dft2, exposed for tests. inverse applies 1/n.
void dft1(std::span<std::complex<double>> line, bool inverse);

// Field algebra

/// (f ∘ g)(p) = g(p) + f(p + g(p)). Under pull-back warping,
/// warp(img, compose(f, g)) == warp(warp(img, f), g) up to interpolation.
DeformationField compose_fields(const DeformationField& f, const DeformationField& g);

struct InversionReport {
    int iterations = 0;
    double last_update = 0.0;
    double residual = 0.0; ///< max norm of compose(f, inverse)
};

/// Fixed-point inversion g <- -f(p + g(p)) starting from -f.
DeformationField invert_field(const DeformationField& f, int iterations = 50, double tol = 0.01,
                              InversionReport* report = nullptr);

ImageSlice warp_image(const ImageSlice& img, const DeformationField& f);
LabelMask warp_labels(const LabelMask& mask, const DeformationField& f);

/// Mean (x, y) pixel coordinate of the pixels whose code is in `classes`.
std::pair<double, double> barycenter(const LabelMask& mask, std::span<const std::uint8_t> classes);

} // namespace cordkit
