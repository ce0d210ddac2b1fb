#include "cordkit/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cordkit/error.hpp"

namespace cordkit {

namespace {

void check_extent(int width, int height) {
    require(width > 0 && height > 0, ErrorCode::invalid_argument, "grid extents must be positive");
}

void check_spacing(Spacing s) {
    require(s.x > 0.0 && s.y > 0.0 && std::isfinite(s.x) && std::isfinite(s.y), ErrorCode::invalid_argument,
            "pixel spacing must be positive and finite");
}

void check_finite(double x, double y) {
    require(std::isfinite(x) && std::isfinite(y), ErrorCode::invalid_argument, "non-finite sample coordinate");
}

void check_same_grid(int w0, int h0, int w1, int h1, const char* what) {
    if (w0 != w1 || h0 != h1) {
        fail(ErrorCode::dimension, std::string(what) + ": grid mismatch (" + std::to_string(w0) + "x" +
                                       std::to_string(h0) + " vs " + std::to_string(w1) + "x" + std::to_string(h1) +
                                       ")");
    }
}

// Convolve one axis with edge replication.
void convolve_axis(const std::vector<double>& in, std::vector<double>& out, int width, int height,
                   const std::vector<double>& kernel, bool along_x) {
    const int r = static_cast<int>(kernel.size() / 2);
    out.assign(in.size(), 0.0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double acc = 0.0;
            for (int k = -r; k <= r; ++k) {
                const int xx = along_x ? std::clamp(x + k, 0, width - 1) : x;
                const int yy = along_x ? y : std::clamp(y + k, 0, height - 1);
                acc += kernel[static_cast<std::size_t>(k + r)] * in[static_cast<std::size_t>(yy) * width + xx];
            }
            out[static_cast<std::size_t>(y) * width + x] = acc;
        }
    }
}

std::vector<double> smooth_values(const std::vector<double>& values, int width, int height, double sigma) {
    const auto kernel = gaussian_kernel(sigma);
    std::vector<double> tmp;
    std::vector<double> out;
    convolve_axis(values, tmp, width, height, kernel, true);
    convolve_axis(tmp, out, width, height, kernel, false);
    return out;
}

} // namespace

std::string SliceId::str() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_slice-%03d", index);
    return subject + buf;
}

ImageSlice::ImageSlice(int width, int height, Spacing spacing, std::vector<double> data, SliceId id)
    : width_(width), height_(height), spacing_(spacing), data_(std::move(data)), id_(std::move(id)) {
    check_extent(width, height);
    check_spacing(spacing);
    require(data_.size() == static_cast<std::size_t>(width) * height, ErrorCode::dimension,
            "image data length does not match its extents");
    for (double v : data_) {
        require(std::isfinite(v) && v >= 0.0, ErrorCode::invalid_argument,
                "image intensities must be finite and non-negative");
    }
}

ImageSlice::ImageSlice(int width, int height, Spacing spacing, double fill, SliceId id)
    : ImageSlice(width, height, spacing,
                 std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), fill),
                 std::move(id)) {}

LabelMask::LabelMask(int width, int height, Spacing spacing, std::vector<std::uint8_t> codes, SliceId id)
    : width_(width), height_(height), spacing_(spacing), codes_(std::move(codes)), id_(std::move(id)) {
    check_extent(width, height);
    check_spacing(spacing);
    require(codes_.size() == static_cast<std::size_t>(width) * height, ErrorCode::dimension,
            "mask data length does not match its extents");
    for (auto c : codes_) {
        require(c <= kGrayMatter, ErrorCode::label_alphabet, "label code outside {0,1,2}: " + std::to_string(c));
    }
}

LabelMask::LabelMask(int width, int height, Spacing spacing, SliceId id)
    : LabelMask(width, height, spacing,
                std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), 0),
                std::move(id)) {}

std::size_t LabelMask::count(std::span<const std::uint8_t> classes) const {
    std::size_t n = 0;
    for (auto c : codes_) n += std::find(classes.begin(), classes.end(), c) != classes.end();
    return n;
}

DeformationField::DeformationField(int width, int height)
    : DeformationField(width, height,
                       std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), 0.0),
                       std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), 0.0)) {}

DeformationField::DeformationField(int width, int height, std::vector<double> dx, std::vector<double> dy)
    : width_(width), height_(height), dx_(std::move(dx)), dy_(std::move(dy)) {
    check_extent(width, height);
    const auto n = static_cast<std::size_t>(width) * height;
    require(dx_.size() == n && dy_.size() == n, ErrorCode::dimension, "field data length does not match extents");
    for (std::size_t i = 0; i < n; ++i) {
        require(std::isfinite(dx_[i]) && std::isfinite(dy_[i]), ErrorCode::invalid_argument,
                "field displacements must be finite");
    }
}

DeformationField DeformationField::constant(int width, int height, double dx, double dy) {
    const auto n = static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0);
    return DeformationField(width, height, std::vector<double>(n, dx), std::vector<double>(n, dy));
}

std::pair<double, double> DeformationField::sample(double x, double y) const {
    x = std::clamp(x, 0.0, static_cast<double>(width_ - 1));
    y = std::clamp(y, 0.0, static_cast<double>(height_ - 1));
    const int x0 = std::min(static_cast<int>(x), width_ - 1);
    const int y0 = std::min(static_cast<int>(y), height_ - 1);
    const int x1 = std::min(x0 + 1, width_ - 1);
    const int y1 = std::min(y0 + 1, height_ - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const auto i00 = static_cast<std::size_t>(y0) * width_ + x0;
    const auto i10 = static_cast<std::size_t>(y0) * width_ + x1;
    const auto i01 = static_cast<std::size_t>(y1) * width_ + x0;
    const auto i11 = static_cast<std::size_t>(y1) * width_ + x1;
    const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy), w01 = (1 - fx) * fy, w11 = fx * fy;
    return {w00 * dx_[i00] + w10 * dx_[i10] + w01 * dx_[i01] + w11 * dx_[i11],
            w00 * dy_[i00] + w10 * dy_[i10] + w01 * dy_[i01] + w11 * dy_[i11]};
}

double DeformationField::max_norm() const {
    double m = 0.0;
    for (std::size_t i = 0; i < dx_.size(); ++i) m = std::max(m, std::hypot(dx_[i], dy_[i]));
    return m;
}

double DeformationField::mean_norm() const {
    double s = 0.0;
    for (std::size_t i = 0; i < dx_.size(); ++i) s += std::hypot(dx_[i], dy_[i]);
    return s / static_cast<double>(dx_.size());
}

double bilinear_sample(const ImageSlice& img, double x, double y) {
    check_finite(x, y);
    const int w = img.width();
    const int h = img.height();
    if (x <= -1.0 || y <= -1.0 || x >= w || y >= h) return 0.0;
    const double xf = std::floor(x);
    const double yf = std::floor(y);
    const int x0 = static_cast<int>(xf);
    const int y0 = static_cast<int>(yf);
    const double fx = x - xf;
    const double fy = y - yf;
    auto px = [&](int xx, int yy) -> double {
        if (xx < 0 || yy < 0 || xx >= w || yy >= h) return 0.0;
        return img.at(xx, yy);
    };
    if (fx == 0.0 && fy == 0.0) return px(x0, y0);
    return (1 - fx) * (1 - fy) * px(x0, y0) + fx * (1 - fy) * px(x0 + 1, y0) + (1 - fx) * fy * px(x0, y0 + 1) +
           fx * fy * px(x0 + 1, y0 + 1);
}

std::uint8_t nearest_sample(const LabelMask& mask, double x, double y) {
    check_finite(x, y);
    const double xr = std::floor(x + 0.5);
    const double yr = std::floor(y + 0.5);
    if (xr < 0 || yr < 0 || xr >= mask.width() || yr >= mask.height()) return kBackground;
    return mask.at(static_cast<int>(xr), static_cast<int>(yr));
}

std::vector<double> gaussian_kernel(double sigma) {
    require(sigma >= 0.0 && std::isfinite(sigma), ErrorCode::invalid_argument, "sigma must be >= 0");
    if (sigma == 0.0) return {1.0};
    const int r = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + r)] = v;
        sum += v;
    }
    for (auto& v : k) v /= sum;
    return k;
}

ImageSlice gaussian_smooth(const ImageSlice& img, double sigma) {
    require(sigma >= 0.0 && std::isfinite(sigma), ErrorCode::invalid_argument, "sigma must be >= 0");
    if (sigma == 0.0) return img;
    std::vector<double> v(img.data().begin(), img.data().end());
    auto out = smooth_values(v, img.width(), img.height(), sigma);
    for (auto& x : out) x = std::max(x, 0.0); // rounding can produce -0 ulps
    return img.with_data(std::move(out));
}

ScalarGrid gaussian_smooth(const ScalarGrid& grid, double sigma) {
    require(sigma >= 0.0 && std::isfinite(sigma), ErrorCode::invalid_argument, "sigma must be >= 0");
    if (sigma == 0.0) return grid;
    return ScalarGrid{grid.width, grid.height, smooth_values(grid.values, grid.width, grid.height, sigma)};
}

DeformationField gaussian_smooth(const DeformationField& field, double sigma) {
    require(sigma >= 0.0 && std::isfinite(sigma), ErrorCode::invalid_argument, "sigma must be >= 0");
    if (sigma == 0.0) return field;
    std::vector<double> dx(field.dx().begin(), field.dx().end());
    std::vector<double> dy(field.dy().begin(), field.dy().end());
    return DeformationField(field.width(), field.height(), smooth_values(dx, field.width(), field.height(), sigma),
                            smooth_values(dy, field.width(), field.height(), sigma));
}

DeformationField compose_fields(const DeformationField& f, const DeformationField& g) {
    check_same_grid(f.width(), f.height(), g.width(), g.height(), "compose_fields");
    const int w = g.width();
    const int h = g.height();
    std::vector<double> dx(g.size());
    std::vector<double> dy(g.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto i = static_cast<std::size_t>(y) * w + x;
            const double gx = g.dx()[i];
            const double gy = g.dy()[i];
            const auto [fx, fy] = f.sample(x + gx, y + gy);
            dx[i] = gx + fx;
            dy[i] = gy + fy;
        }
    }
    return DeformationField(w, h, std::move(dx), std::move(dy));
}

DeformationField invert_field(const DeformationField& f, int iterations, double tol, InversionReport* report) {
    require(iterations >= 1, ErrorCode::invalid_argument, "invert_field needs at least one iteration");
    const int w = f.width();
    const int h = f.height();
    std::vector<double> gx(f.size());
    std::vector<double> gy(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        gx[i] = -f.dx()[i];
        gy[i] = -f.dy()[i];
    }
    int done = 0;
    double last = 0.0;
    std::vector<double> nx(f.size());
    std::vector<double> ny(f.size());
    for (int it = 0; it < iterations; ++it) {
        double max_update = 0.0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const auto i = static_cast<std::size_t>(y) * w + x;
                const auto [fx, fy] = f.sample(x + gx[i], y + gy[i]);
                nx[i] = -fx;
                ny[i] = -fy;
                max_update = std::max(max_update, std::hypot(nx[i] - gx[i], ny[i] - gy[i]));
            }
        }
        gx.swap(nx);
        gy.swap(ny);
        done = it + 1;
        last = max_update;
        if (max_update < tol) break;
    }
    DeformationField inv(w, h, std::move(gx), std::move(gy));
    if (report) {
        report->iterations = done;
        report->last_update = last;
        report->residual = compose_fields(f, inv).max_norm();
    }
    return inv;
}

ImageSlice warp_image(const ImageSlice& img, const DeformationField& f) {
    check_same_grid(img.width(), img.height(), f.width(), f.height(), "warp_image");
    const int w = img.width();
    const int h = img.height();
    std::vector<double> out(img.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto i = static_cast<std::size_t>(y) * w + x;
            out[i] = bilinear_sample(img, x + f.dx()[i], y + f.dy()[i]);
        }
    }
    return img.with_data(std::move(out));
}

LabelMask warp_labels(const LabelMask& mask, const DeformationField& f) {
    check_same_grid(mask.width(), mask.height(), f.width(), f.height(), "warp_labels");
    const int w = mask.width();
    const int h = mask.height();
    std::vector<std::uint8_t> out(mask.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto i = static_cast<std::size_t>(y) * w + x;
            out[i] = nearest_sample(mask, x + f.dx()[i], y + f.dy()[i]);
        }
    }
    return mask.with_codes(std::move(out));
}

std::pair<double, double> barycenter(const LabelMask& mask, std::span<const std::uint8_t> classes) {
    double sx = 0.0;
    double sy = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            if (std::find(classes.begin(), classes.end(), mask.at(x, y)) != classes.end()) {
                sx += x;
                sy += y;
                ++n;
            }
        }
    }
    require(n > 0, ErrorCode::empty_mask, "barycenter of an empty selection");
    return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

} // namespace cordkit
