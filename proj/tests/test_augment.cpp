#include <cmath>
#include <complex>
#include <map>
#include <set>

#include "doctest.h"

#include "cordkit/augment.hpp"
#include "cordkit/bids.hpp"
#include "cordkit/error.hpp"
#include "cordkit/rng.hpp"
#include "cordkit/tables.hpp"
#include "temp_dir.hpp"

using namespace cordkit;

namespace {

ImageSlice blob_image(int n, std::uint64_t seed, SliceId id = {"sub-01", 0}) {
    Rng rng(seed);
    std::vector<double> v(static_cast<std::size_t>(n) * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double r2 = (x - n * 0.45) * (x - n * 0.45) + (y - n * 0.55) * (y - n * 0.55);
            v[std::size_t(y) * n + x] = 0.2 + 0.7 * std::exp(-r2 / (n * n * 0.02)) + 0.05 * rng.uniform();
        }
    return ImageSlice(n, n, Spacing{0.175, 0.175}, std::move(v), std::move(id));
}

LabelMask disk(int n, double cx, double cy, double r, SliceId id = {"sub-01", 0}) {
    std::vector<std::uint8_t> c(static_cast<std::size_t>(n) * n, 0);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            if (d2 <= r * r) c[std::size_t(y) * n + x] = d2 <= r * r / 4 ? 2 : 1;
        }
    return LabelMask(n, n, Spacing{0.175, 0.175}, std::move(c), std::move(id));
}

bool same_image(const ImageSlice& a, const ImageSlice& b) {
    return std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end());
}

bool same_labels(const LabelMask& a, const LabelMask& b) {
    return std::equal(a.codes().begin(), a.codes().end(), b.codes().begin(), b.codes().end());
}

double max_diff(const ImageSlice& a, const ImageSlice& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

double energy(const ImageSlice& a) {
    double e = 0;
    for (double v : a.data()) e += v * v;
    return e;
}

void check_closure(const LabelMask& m) {
    for (auto c : m.codes()) CHECK(c <= 2);
}

// Radius from area of the SC set.
double disk_radius(const LabelMask& m) { return std::sqrt(double(m.count(kSpinalCordCodes)) / std::numbers::pi); }

struct ShiftProvider : RealisticProvider {
    std::vector<std::string> targets_for(const std::string& subject) const override {
        if (subject == "sub-lonely") return {};
        return {"sub-08", "sub-09"};
    }
    AugmentedSample morph(const ImageSlice& img, const LabelMask& mask, const std::string& target) const override {
        return affine_transform(img, mask, 0, 1, target == "sub-08" ? 1 : -1, 0);
    }
};

} // namespace

TEST_CASE("affine identity and exact quarter turns") {
    const auto img = blob_image(64, 1);
    const auto mask = disk(64, 30, 34, 9);
    const auto id = affine_transform(img, mask, 0, 1, 0, 0);
    CHECK(same_image(id.image, img));
    CHECK(same_labels(id.labels, mask));

    const auto rot = affine_transform(img, mask, 90, 1, 0, 0);
    // q = R(-90)(p - c) + c: output (x, y) reads input (y, w-1-x).
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            CHECK(rot.image.at(x, y) == img.at(y, 63 - x));
            CHECK(rot.labels.at(x, y) == mask.at(y, 63 - x));
        }
    const auto full = affine_transform(img, mask, 360, 1, 0, 0);
    CHECK(same_image(full.image, img));
    const auto odd = blob_image(33, 2);
    const auto half = affine_transform(odd, disk(33, 16, 16, 5), 180, 1, 0, 0);
    for (int y = 0; y < 33; ++y)
        for (int x = 0; x < 33; ++x) CHECK(half.image.at(x, y) == odd.at(32 - x, 32 - y));
}

TEST_CASE("affine scaling and translation") {
    const int n = 128;
    const auto img = blob_image(n, 3);
    const auto mask = disk(n, 63.5, 63.5, 12);
    const auto big = affine_transform(img, mask, 0, 2, 0, 0);
    CHECK(std::abs(disk_radius(big.labels) - 24) <= 1.0);
    check_closure(big.labels);

    const auto moved = affine_transform(img, mask, 0, 1, 5, -3);
    for (int y = 10; y < 100; ++y)
        for (int x = 10; x < 100; ++x) CHECK(moved.labels.at(x + 5, y - 3) == mask.at(x, y));
}

TEST_CASE("resize") {
    const int n = 128;
    const auto img = blob_image(n, 4);
    const auto mask = disk(n, 63.5, 63.5, 20);
    const auto same = resize_aug(img, mask, 1.0);
    CHECK(same_image(same.image, img));
    CHECK(same_labels(same.labels, mask));

    const auto small = resize_aug(img, mask, 0.5);
    CHECK(std::abs(disk_radius(small.labels) - 10) <= 1.0);
    // content occupies the middle half; the border is zero
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            if (x < 30 || x > 97 || y < 30 || y > 97) CHECK(small.image.at(x, y) == 0.0);
    CHECK(small.provenance.kind == "resize");
    for (double s : {0.3, 0.77, 1.3, 2.5}) check_closure(resize_aug(img, mask, s).labels);
}

TEST_CASE("elastic") {
    const auto img = blob_image(64, 5);
    const auto mask = disk(64, 30, 30, 10);
    const auto id = elastic_deform(img, mask, 7, 0.0, 9);
    CHECK(same_image(id.image, img));
    CHECK(same_labels(id.labels, mask));

    const auto a = elastic_deform(img, mask, 7, 3.0, 9);
    const auto b = elastic_deform(img, mask, 7, 3.0, 9);
    CHECK(same_image(a.image, b.image));
    CHECK(same_labels(a.labels, b.labels));
    CHECK_FALSE(same_image(a.image, img));
    check_closure(a.labels);

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto f = elastic_field(64, 64, 7, 3.0, seed);
        CHECK(f.max_norm() <= 3.0 * std::sqrt(2.0) + 1e-12);
    }
    // lattice nodes sit exactly on grid corners
    const auto f = elastic_field(61, 61, 7, 3.0, 4);
    Rng rng(4);
    const double d0x = rng.uniform(-3, 3), d0y = rng.uniform(-3, 3);
    CHECK(f.dx()[0] == doctest::Approx(d0x));
    CHECK(f.dy()[0] == doctest::Approx(d0y));
}

TEST_CASE("ghosting") {
    const int n = 64;
    const auto img = blob_image(n, 6);
    const auto mask = disk(n, 30, 30, 8);
    const auto none = ghosting(img, mask, 3, 0.0);
    CHECK(max_diff(none.image, img) <= 1e-9);
    CHECK(same_labels(none.labels, mask));

    // impulse at (10, 20): removing even k-lines (but DC) leaves half the
    // energy at the source and a replica n/2 lines away along y
    std::vector<double> v(std::size_t(n) * n, 0.0);
    v[20 * n + 10] = 1.0;
    const ImageSlice imp(n, n, Spacing{1, 1}, v);
    const auto g = ghosting(imp, LabelMask(n, n, Spacing{1, 1}), 2, 1.0, 1);
    CHECK(g.image.at(10, 52) == doctest::Approx(0.5 - 1.0 / n).epsilon(1e-9));
    CHECK(g.image.at(10, 20) == doctest::Approx(0.5 + 1.0 / n).epsilon(1e-9));
    CHECK(g.image.at(11, 20) == doctest::Approx(0.0).epsilon(1e-9));

    // attenuation is monotone in energy
    const double e0 = energy(ghosting(img, mask, 3, 0.0).image);
    const double e1 = energy(ghosting(img, mask, 3, 1.0).image);
    double prev = e0;
    for (double i : {0.2, 0.4, 0.6, 0.8}) {
        const double e = energy(ghosting(img, mask, 3, i).image);
        CHECK(e <= prev + 1e-9);
        CHECK(e >= e1 - 1e-9);
        CHECK(e <= e0 + 1e-9);
        prev = e;
    }
    for (double i : {0.3, 1.0}) CHECK(same_labels(ghosting(img, mask, 4, i).labels, mask));
}

TEST_CASE("motion artifact") {
    const int n = 64;
    const auto img = blob_image(n, 7);
    const auto mask = disk(n, 30, 30, 8);
    CHECK(max_diff(motion_artifact(img, mask, 0.0, 0.5).image, img) <= 1e-9);

    // full cutoff is a pure circular shift along y
    const auto shifted = motion_artifact(img, mask, 4.0, 1.0, 1);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) CHECK(shifted.image.at(x, y) == doctest::Approx(img.at(x, (y - 4 + n) % n)).epsilon(1e-9));

    const auto mixed = motion_artifact(img, mask, 4.0, 0.5, 1);
    CHECK(max_diff(mixed.image, img) > 1e-3);
    CHECK(max_diff(mixed.image, shifted.image) > 1e-3);
    CHECK(std::abs(energy(mixed.image) - energy(img)) / energy(img) < 0.1);
    CHECK(same_labels(mixed.labels, mask));
}

TEST_CASE("identity parameters across the random wrappers") {
    AugmentConfig c;
    c.rotation_deg = {0, 0};
    c.scale = {1, 1};
    c.translation_px = {0, 0};
    c.resize_scale = {1, 1};
    c.elastic_max_disp = {0, 0};
    c.ghost_intensity = {0, 0};
    c.motion_shift_px = {0, 0};
    const auto img = blob_image(32, 8);
    const auto mask = disk(32, 15, 15, 5);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        for (const auto& s : {random_affine(img, mask, c, seed), random_resize(img, mask, c, seed),
                              random_elastic(img, mask, c, seed), random_ghosting(img, mask, c, seed),
                              random_motion(img, mask, c, seed)}) {
            CHECK(same_image(s.image, img));
            CHECK(same_labels(s.labels, mask));
        }
    }
}

TEST_CASE("config validation") {
    AugmentConfig c;
    CHECK_NOTHROW(validate(c));
    auto bad = c;
    bad.weights = {0, 0, 0};
    CHECK_THROWS_AS(validate(bad), Error);
    bad = c;
    bad.ghost_intensity = {0.2, 1.5};
    CHECK_THROWS_AS(validate(bad), Error);
    bad = c;
    bad.motion_cutoff = {0.0, 0.5};
    CHECK_THROWS_AS(validate(bad), Error);
    bad = c;
    bad.scale = {1.2, 0.8};
    CHECK_THROWS_AS(validate(bad), Error);
    bad = c;
    bad.rotation_deg = {0, std::nan("")};
    CHECK_THROWS_AS(validate(bad), Error);
}

TEST_CASE("hybrid sampling") {
    const auto img = blob_image(32, 9, {"sub-03", 2});
    const auto mask = disk(32, 15, 15, 6, {"sub-03", 2});
    AugmentConfig c;
    c.master_seed = 77;

    SUBCASE("classical-only weights") {
        c.weights = {1, 0, 0};
        for (int e = 0; e < 40; ++e) {
            const auto s = hybrid_sample(img, mask, c, nullptr, e);
            CHECK((s.provenance.kind == "affine" || s.provenance.kind == "resize"));
        }
    }
    SUBCASE("determinism and replay") {
        for (int e = 0; e < 12; ++e) {
            const auto a = hybrid_sample(img, mask, c, nullptr, e);
            const auto b = hybrid_sample(img, mask, c, nullptr, e);
            CHECK(same_image(a.image, b.image));
            CHECK(same_labels(a.labels, b.labels));
            CHECK(a.provenance.params_text() == b.provenance.params_text());
            const auto r = replay(img, mask, a.provenance);
            CHECK(same_image(r.image, a.image));
            CHECK(same_labels(r.labels, a.labels));
            check_closure(a.labels);
            CHECK(a.image.width() == 32);
        }
        CHECK(sample_seed(77, img.id(), 1) != sample_seed(77, img.id(), 2));
        CHECK(sample_seed(77, img.id(), 1) != sample_seed(78, img.id(), 1));
        CHECK(sample_seed(77, img.id(), 1) != sample_seed(77, SliceId{"sub-03", 3}, 1));
    }
    SUBCASE("category frequencies follow equal weights") {
        const ShiftProvider provider;
        std::map<std::string, int> counts;
        const int draws = 3000;
        const auto small = blob_image(8, 1, {"sub-03", 0});
        const auto small_mask = disk(8, 4, 4, 2, {"sub-03", 0});
        for (int i = 0; i < draws; ++i) {
            const auto s = hybrid_sample(small.with_id({"sub-03", i}), small_mask.with_id({"sub-03", i}), c,
                                         &provider, 0);
            const auto& k = s.provenance.kind;
            ++counts[k == "affine" || k == "resize" ? "classical" : k == "realistic" ? "realistic" : "smart"];
        }
        const double sigma = std::sqrt(draws * (1.0 / 3) * (2.0 / 3));
        for (const auto& [cat, n] : counts) {
            CAPTURE(cat);
            CHECK(std::abs(n - draws / 3.0) <= 3 * sigma);
        }
        CHECK(counts.size() == 3);
    }
    SUBCASE("realistic without a provider falls back to smart") {
        c.weights = {0, 0, 1};
        const auto s = hybrid_sample(img, mask, c, nullptr, 0);
        CHECK((s.provenance.kind == "elastic" || s.provenance.kind == "ghosting" || s.provenance.kind == "motion"));
        CHECK_FALSE(s.provenance.note.empty());
        const ShiftProvider provider;
        const auto r = hybrid_sample(img, mask, c, &provider, 0);
        CHECK(r.provenance.kind == "realistic");
        CHECK(r.provenance.note.empty());
        const auto again = replay(img, mask, r.provenance, &provider);
        CHECK(same_image(again.image, r.image));
        const auto lonely = hybrid_sample(img.with_id({"sub-lonely", 0}), mask, c, &provider, 0);
        CHECK_FALSE(lonely.provenance.note.empty());
    }
    SUBCASE("policy dispatch") {
        c.policy = Policy::without;
        const auto s = augment_sample(img, mask, c, nullptr, 0);
        CHECK(s.provenance.kind == "identity");
        CHECK(same_image(s.image, img));
        c.policy = Policy::smart;
        for (int e = 0; e < 10; ++e) {
            const auto k = augment_sample(img, mask, c, nullptr, e).provenance.kind;
            CHECK((k == "elastic" || k == "ghosting" || k == "motion"));
        }
        CHECK_THROWS_AS(hybrid_sample(img, mask, c, nullptr, 0), Error);
    }
}

TEST_CASE("augmentation run writes a derivative tree independent of threads") {
    TempDir tmp("aug");
    DatasetManifest m;
    m.dataset_id = "tiny";
    std::map<std::string, SubjectStacks> data;
    for (int s = 1; s <= 2; ++s) {
        const std::string id = "sub-0" + std::to_string(s);
        m.subjects.push_back({id, Group::HC, Acquisition::HR, 0.175, 2.2, 32, 32, 3, "c"});
        for (int k = 0; k < 3; ++k) {
            data[id].images.push_back(blob_image(32, 10 * s + k));
            data[id].masks.push_back(disk(32, 14 + k, 16, 6));
        }
    }
    write_bids_tree(m, data, tmp / "bids");
    AugmentConfig c;
    c.master_seed = 5;
    c.samples_per_slice = 2;
    const auto r1 = run_augmentation(tmp / "bids", tmp / "a1", c, nullptr, 2, 1);
    const auto r4 = run_augmentation(tmp / "bids", tmp / "a4", c, nullptr, 2, 4);
    CHECK(r1.samples == 2 * 3 * 2 * 2);
    CHECK(r4.samples == r1.samples);
    const auto p1 = read_text_file(tmp / "a1" / "provenance.tsv");
    CHECK(p1 == read_text_file(tmp / "a4" / "provenance.tsv"));
    CHECK(read_table(tmp / "a1" / "provenance.tsv", '\t').rows.size() == 24);
    const auto stack = "sub-02/anat/sub-02_desc-e1s1_T2star.nii.gz";
    CHECK(read_text_file(tmp / "a1" / stack) == read_text_file(tmp / "a4" / stack));
    CHECK(std::filesystem::exists(tmp / "a1" / "sub-01/anat/sub-01_desc-e0s0_seg-manual.nii.gz"));
}
