#include <cmath>
#include <numbers>

#include "cordkit/error.hpp"
#include "cordkit/image.hpp"

namespace cordkit {

namespace {

using cplx = std::complex<double>;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// exp(sign * 2 pi i k / n) for k in [0, n)
std::vector<cplx> twiddles(std::size_t n, double sign) {
    std::vector<cplx> t(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double a = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        t[k] = {std::cos(a), std::sin(a)};
    }
    return t;
}

void radix2(std::span<cplx> a, double sign) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    const auto tw = twiddles(n, sign);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t stride = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                const cplx u = a[i + k];
                const cplx v = a[i + k + len / 2] * tw[k * stride];
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
}

void direct(std::span<cplx> a, double sign) {
    const std::size_t n = a.size();
    const auto tw = twiddles(n, sign);
    std::vector<cplx> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        cplx acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += a[j] * tw[(j * k) % n];
        out[k] = acc;
    }
    std::copy(out.begin(), out.end(), a.begin());
}

void transform_rows_cols(ComplexGrid& g, bool inverse) {
    std::vector<cplx> line(static_cast<std::size_t>(g.width));
    for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) line[static_cast<std::size_t>(x)] = g(x, y);
        dft1(line, inverse);
        for (int x = 0; x < g.width; ++x) g(x, y) = line[static_cast<std::size_t>(x)];
    }
    line.resize(static_cast<std::size_t>(g.height));
    for (int x = 0; x < g.width; ++x) {
        for (int y = 0; y < g.height; ++y) line[static_cast<std::size_t>(y)] = g(x, y);
        dft1(line, inverse);
        for (int y = 0; y < g.height; ++y) g(x, y) = line[static_cast<std::size_t>(y)];
    }
}

} // namespace

void dft1(std::span<cplx> line, bool inverse) {
    if (line.size() <= 1) return;
    const double sign = inverse ? 1.0 : -1.0;
    if (is_pow2(line.size()))
        radix2(line, sign);
    else
        direct(line, sign);
    if (inverse) {
        const double scale = 1.0 / static_cast<double>(line.size());
        for (auto& v : line) v *= scale;
    }
}

ComplexGrid dft2(const ComplexGrid& grid) {
    require(grid.width >= 1 && grid.height >= 1, ErrorCode::invalid_argument, "dft2 needs a non-empty grid");
    ComplexGrid out = grid;
    transform_rows_cols(out, false);
    return out;
}

ComplexGrid dft2(const ImageSlice& img) {
    ComplexGrid g{img.width(), img.height(), {}};
    g.values.assign(img.data().begin(), img.data().end());
    transform_rows_cols(g, false);
    return g;
}

ComplexGrid idft2(const ComplexGrid& spectrum) {
    require(spectrum.width >= 1 && spectrum.height >= 1, ErrorCode::invalid_argument, "idft2 needs a non-empty grid");
    ComplexGrid out = spectrum;
    transform_rows_cols(out, true);
    return out;
}

ImageSlice idft2_magnitude(const ComplexGrid& spectrum, Spacing spacing, SliceId id) {
    const auto g = idft2(spectrum);
    std::vector<double> mag(g.values.size());
    for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(g.values[i]);
    return ImageSlice(g.width, g.height, spacing, std::move(mag), std::move(id));
}

} // namespace cordkit
