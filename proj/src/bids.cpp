#include "cordkit/bids.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "json.hpp"

#include "cordkit/error.hpp"
#include "cordkit/nifti.hpp"
#include "cordkit/tables.hpp"

namespace cordkit {

namespace fs = std::filesystem;

const char* to_string(Group g) noexcept {
    switch (g) {
    case Group::HC: return "HC";
    case Group::ALS: return "ALS";
    case Group::MS: return "MS";
    }
    return "?";
}

const char* to_string(Acquisition a) noexcept {
    switch (a) {
    case Acquisition::HR: return "HR";
    case Acquisition::MR: return "MR";
    case Acquisition::LR: return "LR";
    }
    return "?";
}

Group group_from_string(const std::string& s) {
    if (s == "HC") return Group::HC;
    if (s == "ALS") return Group::ALS;
    if (s == "MS") return Group::MS;
    fail(ErrorCode::config, "unknown group '" + s + "'");
}

Acquisition acquisition_from_string(const std::string& s) {
    if (s == "HR") return Acquisition::HR;
    if (s == "MR") return Acquisition::MR;
    if (s == "LR") return Acquisition::LR;
    fail(ErrorCode::config, "unknown acquisition '" + s + "'");
}

const SubjectRecord* DatasetManifest::find(const std::string& subject_id) const {
    for (const auto& s : subjects)
        if (s.subject_id == subject_id) return &s;
    return nullptr;
}

std::size_t DatasetManifest::total_slices() const {
    std::size_t n = 0;
    for (const auto& s : subjects) n += static_cast<std::size_t>(s.n_slices);
    return n;
}

void validate_manifest(const DatasetManifest& manifest) {
    std::set<std::string> seen;
    for (const auto& s : manifest.subjects) {
        require(!s.subject_id.empty(), ErrorCode::consistency, "empty subject id");
        require(seen.insert(s.subject_id).second, ErrorCode::consistency, "duplicate subject id " + s.subject_id);
        require(s.n_slices >= 1, ErrorCode::consistency, s.subject_id + ": n_slices must be >= 1");
        require(s.in_plane_res > 0 && s.slice_thickness > 0, ErrorCode::consistency,
                s.subject_id + ": resolution must be positive");
        require(s.matrix_x > 0 && s.matrix_y > 0, ErrorCode::consistency, s.subject_id + ": matrix must be positive");
    }
}

namespace bids {

fs::path anat_path(const fs::path& root, const std::string& subject) {
    return root / subject / "anat" / (subject + "_T2star.nii.gz");
}

fs::path label_path(const fs::path& root, const std::string& subject) {
    return root / "derivatives" / "labels" / subject / "anat" / (subject + "_T2star_seg-manual.nii.gz");
}

fs::path participants_path(const fs::path& root) { return root / "participants.tsv"; }

} // namespace bids

namespace {

std::string shortest(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

double to_double(const std::string& s) {
    double v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc() && ptr == s.data() + s.size(), ErrorCode::config, "bad number in participants.tsv: " + s);
    return v;
}

int to_int(const std::string& s) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc() && ptr == s.data() + s.size(), ErrorCode::config, "bad integer in participants.tsv: " + s);
    return v;
}

} // namespace

void write_participants_tsv(const fs::path& path, const std::vector<SubjectRecord>& subjects) {
    std::string out = "participant_id\tgroup\tacq\tcenter\tin_plane_res\tslice_thickness\tmatrix_x\tmatrix_y\n";
    for (const auto& s : subjects) {
        out += s.subject_id + '\t' + to_string(s.group) + '\t' + to_string(s.acq) + '\t' + s.center_id + '\t' +
               shortest(s.in_plane_res) + '\t' + shortest(s.slice_thickness) + '\t' + std::to_string(s.matrix_x) +
               '\t' + std::to_string(s.matrix_y) + '\n';
    }
    write_text_file(path, out);
}

std::vector<SubjectRecord> read_participants_tsv(const fs::path& path) {
    const auto t = read_table(path, '\t');
    const auto c_id = t.column("participant_id"), c_group = t.column("group"), c_acq = t.column("acq"),
               c_center = t.column("center");
    auto optional_col = [&](const char* name) -> std::ptrdiff_t {
        const auto it = std::find(t.header.begin(), t.header.end(), name);
        return it == t.header.end() ? -1 : it - t.header.begin();
    };
    const auto c_res = optional_col("in_plane_res"), c_th = optional_col("slice_thickness"),
               c_mx = optional_col("matrix_x"), c_my = optional_col("matrix_y");
    std::vector<SubjectRecord> out;
    for (const auto& row : t.rows) {
        SubjectRecord s;
        s.subject_id = row[c_id];
        s.group = group_from_string(row[c_group]);
        s.acq = acquisition_from_string(row[c_acq]);
        s.center_id = row[c_center];
        if (c_res >= 0) s.in_plane_res = to_double(row[static_cast<std::size_t>(c_res)]);
        if (c_th >= 0) s.slice_thickness = to_double(row[static_cast<std::size_t>(c_th)]);
        if (c_mx >= 0) s.matrix_x = to_int(row[static_cast<std::size_t>(c_mx)]);
        if (c_my >= 0) s.matrix_y = to_int(row[static_cast<std::size_t>(c_my)]);
        out.push_back(std::move(s));
    }
    return out;
}

void write_bids_tree(const DatasetManifest& manifest, const std::map<std::string, SubjectStacks>& data,
                     const fs::path& root, double slice_thickness_override) {
    validate_manifest(manifest);
    for (const auto& s : manifest.subjects) {
        const auto it = data.find(s.subject_id);
        require(it != data.end(), ErrorCode::consistency, "no image data for " + s.subject_id);
        const auto& stacks = it->second;
        require(stacks.images.size() == stacks.masks.size(), ErrorCode::consistency,
                s.subject_id + ": " + std::to_string(stacks.images.size()) + " images but " +
                    std::to_string(stacks.masks.size()) + " masks");
        require(static_cast<int>(stacks.images.size()) == s.n_slices, ErrorCode::consistency,
                s.subject_id + ": n_slices does not match the stacks");
        for (std::size_t i = 0; i < stacks.images.size(); ++i) {
            const auto& img = stacks.images[i];
            const auto& m = stacks.masks[i];
            require(img.width() == m.width() && img.height() == m.height() && img.spacing() == m.spacing(),
                    ErrorCode::consistency, s.subject_id + ": image and mask grids differ at slice " + std::to_string(i));
        }
    }

    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) fail(ErrorCode::io, "cannot create " + root.string() + ": " + ec.message());

    nlohmann::json desc = {{"Name", manifest.dataset_id}, {"BIDSVersion", "1.8.0"}, {"DatasetType", "raw"}};
    write_text_file(root / "dataset_description.json", desc.dump(2) + "\n");
    nlohmann::json deriv = {{"Name", manifest.dataset_id + " manual labels"},
                            {"BIDSVersion", "1.8.0"},
                            {"DatasetType", "derivative"},
                            {"GeneratedBy", nlohmann::json::array({{{"Name", "cordkit"}}})}};
    write_text_file(root / "derivatives" / "labels" / "dataset_description.json", deriv.dump(2) + "\n");
    write_participants_tsv(bids::participants_path(root), manifest.subjects);

    for (const auto& s : manifest.subjects) {
        const auto& stacks = data.at(s.subject_id);
        const double th = slice_thickness_override > 0 ? slice_thickness_override : s.slice_thickness;
        write_image_stack(bids::anat_path(root, s.subject_id), stacks.images, th);
        write_label_stack(bids::label_path(root, s.subject_id), stacks.masks, th);
        nlohmann::json sidecar = {{"Manufacturer", s.center_id.empty() ? "unknown" : s.center_id},
                                  {"FieldStrength", 7}};
        auto side = bids::anat_path(root, s.subject_id);
        side.replace_extension(); // .nii
        side.replace_extension(".json");
        write_text_file(side, sidecar.dump(2) + "\n");
    }
}

DatasetManifest scan_bids_tree(const fs::path& root) {
    DatasetManifest m;
    m.root = root;
    const auto desc_path = root / "dataset_description.json";
    if (fs::exists(desc_path)) {
        const auto desc = nlohmann::json::parse(read_text_file(desc_path), nullptr, false);
        if (desc.is_object() && desc.contains("Name") && desc["Name"].is_string()) m.dataset_id = desc["Name"];
    }
    m.subjects = read_participants_tsv(bids::participants_path(root));
    for (auto& s : m.subjects) {
        require(fs::is_directory(root / s.subject_id), ErrorCode::consistency,
                "subject directory missing: " + (root / s.subject_id).string());
        const auto vol = read_nifti(bids::anat_path(root, s.subject_id));
        s.n_slices = vol.nz;
    }
    validate_manifest(m);
    return m;
}

SubjectStacks load_bids_subject(const fs::path& root, const std::string& subject) {
    SubjectStacks out;
    out.images = read_image_stack(bids::anat_path(root, subject), subject);
    out.masks = read_label_stack(bids::label_path(root, subject), subject);
    require(out.images.size() == out.masks.size(), ErrorCode::consistency,
            subject + ": image and mask stacks differ in length");
    return out;
}

} // namespace cordkit
