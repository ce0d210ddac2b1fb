#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cordkit/image.hpp"

namespace cordkit {

enum class Group { HC, ALS, MS };
enum class Acquisition { HR, MR, LR };

const char* to_string(Group g) noexcept;
const char* to_string(Acquisition a) noexcept;
Group group_from_string(const std::string& s);
Acquisition acquisition_from_string(const std::string& s);

struct SubjectRecord {
    std::string subject_id; ///< "sub-07"
    Group group = Group::HC;
    Acquisition acq = Acquisition::HR;
    double in_plane_res = 0.175; ///< mm
    double slice_thickness = 2.2; ///< mm
    int matrix_x = 128;
    int matrix_y = 128;
    int n_slices = 1;
    std::string center_id;

    bool operator==(const SubjectRecord&) const = default;
};

struct DatasetManifest {
    std::string dataset_id;
    std::vector<SubjectRecord> subjects;
    std::filesystem::path root;

    const SubjectRecord* find(const std::string& subject_id) const;
    std::size_t total_slices() const;
};

/// Throws on duplicate ids, n_slices < 1 or non-positive resolution.
void validate_manifest(const DatasetManifest& manifest);

struct SubjectStacks {
    std::vector<ImageSlice> images;
    std::vector<LabelMask> masks;
};

namespace bids {

std::filesystem::path anat_path(const std::filesystem::path& root, const std::string& subject);
std::filesystem::path label_path(const std::filesystem::path& root, const std::string& subject);
std::filesystem::path participants_path(const std::filesystem::path& root);

} // namespace bids

/// participants.tsv: participant_id, group, acq, center, then the acquisition
/// metadata columns in_plane_res, slice_thickness, matrix_x, matrix_y.
void write_participants_tsv(const std::filesystem::path& path, const std::vector<SubjectRecord>& subjects);
std::vector<SubjectRecord> read_participants_tsv(const std::filesystem::path& path);

/// Emits participants.tsv, dataset_description.json, one anat stack and one
/// multi-class derivative mask stack per subject. Every manifest subject must
/// have image and mask stacks of equal length on identical grids.
void write_bids_tree(const DatasetManifest& manifest, const std::map<std::string, SubjectStacks>& data,
                     const std::filesystem::path& root, double slice_thickness_override = 0.0);

/// Re-reads a tree written by write_bids_tree. n_slices comes from the image
/// stacks on disk; every listed subject directory must exist.
DatasetManifest scan_bids_tree(const std::filesystem::path& root);

SubjectStacks load_bids_subject(const std::filesystem::path& root, const std::string& subject);

} // namespace cordkit
