#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "reid/image.hpp"
#include "reid/rng.hpp"

namespace reid {

enum class Split { train, val, probe, gallery };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

// One person detection image. person_id is absent for unlabelled target data.
struct ImageRecord {
    std::string image_id;
    std::string path;  // relative to the manifest directory; empty for in-memory records
    std::optional<int> person_id;
    int camera_id = 0;
    Split split = Split::train;
    Image pixels;
};

struct Dataset {
    std::string name;
    std::vector<ImageRecord> records;
    int num_identities = 0;       // distinct person_ids among labelled records
    std::set<int> cameras;

    bool labelled() const { return num_identities > 0; }
    bool unlabelled() const { return !records.empty() && num_identities == 0; }

    // Dense class index in [0, num_identities) for a person_id; the mapping is
    // the sorted order of distinct ids.
    int class_index(int person_id) const;
    const std::map<int, int>& class_map() const { return class_of_person_; }

    // Record indices per person_id, in record order.
    const std::map<int, std::vector<int>>& by_identity() const { return by_identity_; }

    friend Dataset make_dataset(std::string name, std::vector<ImageRecord> records);

private:
    std::map<int, int> class_of_person_;
    std::map<int, std::vector<int>> by_identity_;
};

// Validates records (consistent pixel shapes, all-or-none labelling, unique
// image_ids) and computes the derived fields.
Dataset make_dataset(std::string name, std::vector<ImageRecord> records);

// Deterministic synthetic dataset: one base pattern per identity, a fixed
// per-camera colour/geometry transform per view, small per-image jitter, and
// additive Gaussian pixel noise of magnitude cross_view_noise.
struct SyntheticSpec {
    int num_identities = 10;
    int images_per_identity_per_camera = 2;
    int num_cameras = 2;
    int height = 16;
    int width = 16;
    int channels = 3;
    double cross_view_noise = 0.0;
    std::uint64_t seed = 0;

    // Magnitudes of the fixed per-camera view transform. Defaults keep
    // identities linearly separable at zero noise.
    double camera_gain_range = 0.05;   // per-channel gain in [1-r, 1+r]
    double camera_bias_range = 0.02;   // per-channel bias in [-r, r]
    int camera_max_shift = 1;          // circular shift bound, capped to side/16
    double image_jitter = 0.02;        // per-image brightness jitter
};

Dataset generate_synthetic(const SyntheticSpec& spec);

// Manifest CSV with header `image_id,path,person_id,camera_id,split`.
// person_id may be empty on every row (unlabelled dataset). Image paths are
// resolved relative to the manifest location.
Dataset load_manifest(const std::filesystem::path& path);
void write_manifest(const Dataset& ds, const std::filesystem::path& path);

// Writes images under <dir>/images/ plus <dir>/manifest.csv. Refuses to
// overwrite an existing manifest unless force is set.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir, bool force = false);

enum class EvalProtocol { single_shot, single_query, multi_query };

std::string to_string(EvalProtocol p);
EvalProtocol protocol_from_string(const std::string& s);

struct ProbeGallery {
    std::vector<ImageRecord> probe;
    std::vector<ImageRecord> gallery;
};

// Cross-camera probe/gallery assignment:
//   single_shot   one gallery image per identity; probes are that identity's
//                 images from the other cameras
//   single_query  one probe per identity per camera; the rest is gallery
//   multi_query   all images of an identity in its (chosen) probe camera form
//                 one query group; other cameras form the gallery
// Same-camera same-identity gallery entries are excluded later, at scoring.
ProbeGallery make_probe_gallery(const Dataset& ds, EvalProtocol protocol, std::uint64_t seed);

// Honors explicit probe/gallery split labels when the dataset carries them.
ProbeGallery split_probe_gallery(const Dataset& ds);

// Concatenates datasets with person_ids remapped to consecutive disjoint
// ranges (merged num_identities is the sum). Throws on image_id collisions.
Dataset merge_datasets(const std::vector<Dataset>& parts, const std::string& name);

// Records with the given split label; when none carry it and fallback_all is
// set, the whole dataset is returned unchanged.
Dataset subset_by_split(const Dataset& ds, Split split, bool fallback_all = true);

// Rebuilds the dataset with person_id = labels.at(image_id) for every record
// (pseudo-labelling). Throws if a record is not covered.
Dataset relabel_dataset(const Dataset& ds, const std::map<std::string, int>& labels, const std::string& name);

}  // namespace reid
