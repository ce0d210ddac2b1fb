#include "cordkit/nifti.hpp"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cordkit/error.hpp"

namespace cordkit {

namespace {

namespace fs = std::filesystem;

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kDataOffset = 352;
constexpr std::int16_t kIntentVector = 1007;

template <class T>
T byteswap(T v) {
    auto* b = reinterpret_cast<std::uint8_t*>(&v);
    for (std::size_t i = 0; i < sizeof v / 2; ++i) std::swap(b[i], b[sizeof v - 1 - i]);
    return v;
}

// pixdim is stored as float32; recover the short decimal the writer meant
// (0.175f reads back as 0.175, not 0.17499999701976776).
double tidy_spacing(float f) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, f);
    double d = f;
    std::from_chars(buf, end, d);
    return d;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::uint8_t> slurp(const fs::path& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) fail(ErrorCode::io, "cannot open " + path.string());
    std::vector<std::uint8_t> out;
    std::uint8_t buf[1 << 16];
    for (;;) {
        const int n = gzread(f, buf, sizeof buf);
        if (n < 0) {
            gzclose(f);
            fail(ErrorCode::truncated, "corrupt or truncated compressed stream in " + path.string());
        }
        if (n == 0) break;
        out.insert(out.end(), buf, buf + n);
    }
    gzclose(f);
    return out;
}

void dump(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    if (ends_with(path.string(), ".gz")) {
        gzFile f = gzopen(path.c_str(), "wb6");
        if (!f) fail(ErrorCode::io, "cannot write " + path.string());
        const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
        const int rc = gzclose(f);
        if (n != static_cast<int>(bytes.size()) || rc != Z_OK) fail(ErrorCode::io, "write failed: " + path.string());
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::io, "write failed: " + path.string());
}

class HeaderReader {
public:
    HeaderReader(const std::uint8_t* p, bool swap) : p_(p), swap_(swap) {}

    template <class T>
    T get(std::size_t offset) const {
        T v;
        std::memcpy(&v, p_ + offset, sizeof v);
        if (swap_) {
            auto* b = reinterpret_cast<std::uint8_t*>(&v);
            for (std::size_t i = 0; i < sizeof v / 2; ++i) std::swap(b[i], b[sizeof v - 1 - i]);
        }
        return v;
    }

private:
    const std::uint8_t* p_;
    bool swap_;
};

template <class T>
void put(std::vector<std::uint8_t>& buf, std::size_t offset, T v) {
    std::memcpy(buf.data() + offset, &v, sizeof v);
}

std::size_t bytes_per_voxel(NiftiDatatype t) {
    switch (t) {
    case NiftiDatatype::uint8: return 1;
    case NiftiDatatype::int16: return 2;
    case NiftiDatatype::float32: return 4;
    }
    return 0;
}

} // namespace

NiftiVolume read_nifti(const fs::path& path) {
    const auto bytes = slurp(path);
    if (bytes.size() < kHeaderSize) fail(ErrorCode::truncated, "file shorter than a NIfTI-1 header: " + path.string());

    std::int32_t sizeof_hdr;
    std::memcpy(&sizeof_hdr, bytes.data(), 4);
    bool swap = false;
    if (sizeof_hdr != 348) {
        if (byteswap(sizeof_hdr) == 348)
            swap = true;
        else
            fail(ErrorCode::bad_magic, "not a NIfTI-1 header (sizeof_hdr) in " + path.string());
    }
    const HeaderReader h(bytes.data(), swap);

    const char* magic = reinterpret_cast<const char*>(bytes.data() + 344);
    const bool single = std::memcmp(magic, "n+1\0", 4) == 0;
    const bool pair = std::memcmp(magic, "ni1\0", 4) == 0;
    if (!single && !pair) fail(ErrorCode::bad_magic, "bad NIfTI-1 magic in " + path.string());

    NiftiVolume vol;
    const auto ndim = h.get<std::int16_t>(40);
    require(ndim >= 1 && ndim <= 7, ErrorCode::bad_magic, "invalid dim[0] in " + path.string());
    std::int16_t dim[8];
    for (int i = 0; i < 8; ++i) dim[i] = h.get<std::int16_t>(40 + 2 * static_cast<std::size_t>(i));
    auto extent = [&](int i) { return (i <= ndim && dim[i] > 0) ? int{dim[i]} : 1; };
    vol.nx = extent(1);
    vol.ny = extent(2);
    vol.nz = extent(3);
    require(extent(4) == 1 && extent(6) == 1 && extent(7) == 1, ErrorCode::unsupported_datatype,
            "time series or higher-dimensional volumes are not supported: " + path.string());
    vol.ncomp = extent(5);

    const auto code = h.get<std::int16_t>(70);
    switch (code) {
    case 2: vol.datatype = NiftiDatatype::uint8; break;
    case 4: vol.datatype = NiftiDatatype::int16; break;
    case 16: vol.datatype = NiftiDatatype::float32; break;
    default: fail(ErrorCode::unsupported_datatype, "unsupported NIfTI datatype " + std::to_string(code));
    }
    vol.sx = tidy_spacing(std::abs(h.get<float>(80)));
    vol.sy = tidy_spacing(std::abs(h.get<float>(84)));
    vol.sz = tidy_spacing(std::abs(h.get<float>(88)));
    if (!(vol.sx > 0)) vol.sx = 1.0;
    if (!(vol.sy > 0)) vol.sy = 1.0;
    if (!(vol.sz > 0)) vol.sz = 1.0;
    const double slope = h.get<float>(112);
    const double inter = h.get<float>(116);

    std::vector<std::uint8_t> img_bytes;
    const std::uint8_t* data = nullptr;
    std::size_t available = 0;
    const std::size_t need = vol.voxels() * bytes_per_voxel(vol.datatype);
    if (single) {
        const auto offset = static_cast<std::size_t>(h.get<float>(108));
        require(offset >= kHeaderSize, ErrorCode::bad_magic, "invalid vox_offset in " + path.string());
        if (bytes.size() < offset) fail(ErrorCode::truncated, "truncated NIfTI file " + path.string());
        data = bytes.data() + offset;
        available = bytes.size() - offset;
    } else {
        auto img = path.string();
        if (ends_with(img, ".hdr.gz"))
            img.replace(img.size() - 7, 7, ".img.gz");
        else if (ends_with(img, ".hdr"))
            img.replace(img.size() - 4, 4, ".img");
        else
            fail(ErrorCode::bad_magic, "ni1 header without a .hdr name: " + path.string());
        img_bytes = slurp(img);
        data = img_bytes.data();
        available = img_bytes.size();
    }
    if (available < need) fail(ErrorCode::truncated, "truncated voxel data in " + path.string());

    vol.data.resize(vol.voxels());
    for (std::size_t i = 0; i < vol.data.size(); ++i) {
        double v = 0.0;
        switch (vol.datatype) {
        case NiftiDatatype::uint8: v = data[i]; break;
        case NiftiDatatype::int16: {
            std::int16_t s;
            std::memcpy(&s, data + 2 * i, 2);
            if (swap) s = byteswap(s);
            v = s;
            break;
        }
        case NiftiDatatype::float32: {
            std::uint32_t u;
            std::memcpy(&u, data + 4 * i, 4);
            if (swap) u = byteswap(u);
            v = std::bit_cast<float>(u);
            break;
        }
        }
        if (slope != 0.0 && std::isfinite(slope) && !(slope == 1.0 && inter == 0.0)) v = v * slope + inter;
        vol.data[i] = v;
    }
    return vol;
}

void write_nifti(const fs::path& path, const NiftiVolume& vol) {
    require(vol.nx > 0 && vol.ny > 0 && vol.nz > 0 && vol.ncomp > 0, ErrorCode::invalid_argument,
            "NIfTI extents must be positive");
    require(vol.data.size() == vol.voxels(), ErrorCode::dimension, "NIfTI data length does not match extents");
    require(vol.nx <= 32767 && vol.ny <= 32767 && vol.nz <= 32767, ErrorCode::invalid_argument,
            "NIfTI-1 extents are limited to 32767");

    const std::size_t bpv = bytes_per_voxel(vol.datatype);
    std::vector<std::uint8_t> buf(kDataOffset + vol.voxels() * bpv, 0);
    put<std::int32_t>(buf, 0, 348);
    buf[38] = 'r';
    const bool vector = vol.ncomp > 1;
    const std::int16_t dims[8] = {static_cast<std::int16_t>(vector ? 5 : 3),
                                  static_cast<std::int16_t>(vol.nx),
                                  static_cast<std::int16_t>(vol.ny),
                                  static_cast<std::int16_t>(vol.nz),
                                  1,
                                  static_cast<std::int16_t>(vol.ncomp),
                                  1,
                                  1};
    for (int i = 0; i < 8; ++i) put<std::int16_t>(buf, 40 + 2 * static_cast<std::size_t>(i), dims[i]);
    if (vector) put<std::int16_t>(buf, 68, kIntentVector);
    put<std::int16_t>(buf, 70, static_cast<std::int16_t>(vol.datatype));
    put<std::int16_t>(buf, 72, static_cast<std::int16_t>(8 * bpv));
    const float pixdim[8] = {1.0f, static_cast<float>(vol.sx), static_cast<float>(vol.sy), static_cast<float>(vol.sz),
                             1.0f, 1.0f, 1.0f, 1.0f};
    for (int i = 0; i < 8; ++i) put<float>(buf, 76 + 4 * static_cast<std::size_t>(i), pixdim[i]);
    put<float>(buf, 108, static_cast<float>(kDataOffset));
    put<float>(buf, 112, 1.0f);
    buf[123] = 2; // xyzt_units: mm
    put<std::int16_t>(buf, 254, 1); // sform_code: scanner
    put<float>(buf, 280, static_cast<float>(vol.sx));
    put<float>(buf, 300, static_cast<float>(vol.sy));
    put<float>(buf, 320, static_cast<float>(vol.sz));
    std::memcpy(buf.data() + 344, "n+1\0", 4);

    std::uint8_t* out = buf.data() + kDataOffset;
    for (std::size_t i = 0; i < vol.data.size(); ++i) {
        const double v = vol.data[i];
        require(std::isfinite(v), ErrorCode::invalid_argument, "non-finite voxel value");
        switch (vol.datatype) {
        case NiftiDatatype::uint8: {
            require(v >= 0 && v <= 255, ErrorCode::invalid_argument, "value out of range for uint8");
            out[i] = static_cast<std::uint8_t>(std::lround(v));
            break;
        }
        case NiftiDatatype::int16: {
            require(v >= -32768 && v <= 32767, ErrorCode::invalid_argument, "value out of range for int16");
            const auto s = static_cast<std::int16_t>(std::lround(v));
            std::memcpy(out + 2 * i, &s, 2);
            break;
        }
        case NiftiDatatype::float32: {
            const auto f = static_cast<float>(v);
            std::memcpy(out + 4 * i, &f, 4);
            break;
        }
        }
    }
    static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");
    dump(path, buf);
}

std::vector<ImageSlice> read_image_stack(const fs::path& path, const std::string& subject) {
    const auto vol = read_nifti(path);
    require(vol.ncomp == 1, ErrorCode::unsupported_datatype, "expected a scalar volume: " + path.string());
    std::vector<ImageSlice> out;
    const std::size_t plane = static_cast<std::size_t>(vol.nx) * vol.ny;
    for (int z = 0; z < vol.nz; ++z) {
        std::vector<double> v(vol.data.begin() + static_cast<std::ptrdiff_t>(z * plane),
                              vol.data.begin() + static_cast<std::ptrdiff_t>((z + 1) * plane));
        for (auto& x : v) {
            require(std::isfinite(x), ErrorCode::invalid_argument, "non-finite intensity in " + path.string());
            if (x < 0) x = 0; // magnitude images; negative values are clipped
        }
        out.emplace_back(vol.nx, vol.ny, Spacing{vol.sx, vol.sy}, std::move(v), SliceId{subject, z});
    }
    return out;
}

std::vector<LabelMask> read_label_stack(const fs::path& path, const std::string& subject) {
    const auto vol = read_nifti(path);
    require(vol.ncomp == 1, ErrorCode::unsupported_datatype, "expected a scalar volume: " + path.string());
    std::vector<LabelMask> out;
    const std::size_t plane = static_cast<std::size_t>(vol.nx) * vol.ny;
    for (int z = 0; z < vol.nz; ++z) {
        std::vector<std::uint8_t> codes(plane);
        for (std::size_t i = 0; i < plane; ++i) {
            const double v = vol.data[z * plane + i];
            if (!(v == 0.0 || v == 1.0 || v == 2.0))
                fail(ErrorCode::label_alphabet, "label value " + std::to_string(v) + " outside {0,1,2} in " +
                                                    path.string());
            codes[i] = static_cast<std::uint8_t>(v);
        }
        out.emplace_back(vol.nx, vol.ny, Spacing{vol.sx, vol.sy}, std::move(codes), SliceId{subject, z});
    }
    return out;
}

void write_image_stack(const fs::path& path, std::span<const ImageSlice> slices, double slice_thickness,
                       NiftiDatatype type) {
    require(!slices.empty(), ErrorCode::invalid_argument, "cannot write an empty image stack");
    const auto& first = slices.front();
    NiftiVolume vol;
    vol.nx = first.width();
    vol.ny = first.height();
    vol.nz = static_cast<int>(slices.size());
    vol.sx = first.spacing().x;
    vol.sy = first.spacing().y;
    vol.sz = slice_thickness;
    vol.datatype = type;
    vol.data.reserve(vol.voxels());
    for (const auto& s : slices) {
        require(s.width() == vol.nx && s.height() == vol.ny && s.spacing() == first.spacing(), ErrorCode::consistency,
                "image stack slices must share one grid");
        vol.data.insert(vol.data.end(), s.data().begin(), s.data().end());
    }
    write_nifti(path, vol);
}

void write_label_stack(const fs::path& path, std::span<const LabelMask> masks, double slice_thickness) {
    require(!masks.empty(), ErrorCode::invalid_argument, "cannot write an empty mask stack");
    const auto& first = masks.front();
    NiftiVolume vol;
    vol.nx = first.width();
    vol.ny = first.height();
    vol.nz = static_cast<int>(masks.size());
    vol.sx = first.spacing().x;
    vol.sy = first.spacing().y;
    vol.sz = slice_thickness;
    vol.datatype = NiftiDatatype::uint8;
    vol.data.reserve(vol.voxels());
    for (const auto& m : masks) {
        require(m.width() == vol.nx && m.height() == vol.ny && m.spacing() == first.spacing(), ErrorCode::consistency,
                "mask stack slices must share one grid");
        vol.data.insert(vol.data.end(), m.codes().begin(), m.codes().end());
    }
    write_nifti(path, vol);
}

void write_field(const fs::path& path, const DeformationField& field) {
    NiftiVolume vol;
    vol.nx = field.width();
    vol.ny = field.height();
    vol.ncomp = 2;
    vol.datatype = NiftiDatatype::float32;
    vol.data.reserve(vol.voxels());
    vol.data.insert(vol.data.end(), field.dx().begin(), field.dx().end());
    vol.data.insert(vol.data.end(), field.dy().begin(), field.dy().end());
    write_nifti(path, vol);
}

DeformationField read_field(const fs::path& path) {
    const auto vol = read_nifti(path);
    require(vol.ncomp == 2 && vol.nz == 1, ErrorCode::unsupported_datatype,
            "expected a 2-component 2D field: " + path.string());
    const std::size_t plane = static_cast<std::size_t>(vol.nx) * vol.ny;
    std::vector<double> dx(vol.data.begin(), vol.data.begin() + static_cast<std::ptrdiff_t>(plane));
    std::vector<double> dy(vol.data.begin() + static_cast<std::ptrdiff_t>(plane), vol.data.end());
    return DeformationField(vol.nx, vol.ny, std::move(dx), std::move(dy));
}

} // namespace cordkit
