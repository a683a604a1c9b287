#include "reid/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "reid/errors.hpp"

namespace reid {

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::probe: return "probe";
        case Split::gallery: return "gallery";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "probe") return Split::probe;
    if (s == "gallery") return Split::gallery;
    throw ManifestError("unknown split value '" + s + "'");
}

std::string to_string(EvalProtocol p) {
    switch (p) {
        case EvalProtocol::single_shot: return "single_shot";
        case EvalProtocol::single_query: return "SQ";
        case EvalProtocol::multi_query: return "MQ";
    }
    return "single_shot";
}

EvalProtocol protocol_from_string(const std::string& s) {
    if (s == "single_shot") return EvalProtocol::single_shot;
    if (s == "SQ" || s == "single_query") return EvalProtocol::single_query;
    if (s == "MQ" || s == "multi_query") return EvalProtocol::multi_query;
    throw InvalidArgument("unknown evaluation protocol '" + s + "'");
}

int Dataset::class_index(int person_id) const {
    auto it = class_of_person_.find(person_id);
    if (it == class_of_person_.end())
        throw InvalidArgument("person_id " + std::to_string(person_id) + " not in dataset '" + name + "'");
    return it->second;
}

Dataset make_dataset(std::string name, std::vector<ImageRecord> records) {
    Dataset ds;
    ds.name = std::move(name);

    std::unordered_set<std::string> seen_ids;
    std::size_t labelled_count = 0;
    for (const auto& r : records) {
        if (!seen_ids.insert(r.image_id).second)
            throw DuplicateImageIdError("duplicate image_id '" + r.image_id + "' in dataset '" + ds.name + "'");
        if (!records.empty() && !r.pixels.px.empty() && !r.pixels.same_shape(records.front().pixels))
            throw ShapeError("image '" + r.image_id + "' does not match the dataset image shape");
        for (float v : r.pixels.px)
            if (v < 0.f || v > 1.f || !std::isfinite(v))
                throw InvalidArgument("image '" + r.image_id + "' has pixel values outside [0,1]");
        if (r.person_id.has_value()) ++labelled_count;
        ds.cameras.insert(r.camera_id);
    }
    if (labelled_count != 0 && labelled_count != records.size())
        throw ManifestError("dataset '" + ds.name +
                            "' mixes labelled and unlabelled records; person_id must be present on all rows or none");

    ds.records = std::move(records);
    for (int i = 0; i < static_cast<int>(ds.records.size()); ++i) {
        const auto& r = ds.records[static_cast<std::size_t>(i)];
        if (r.person_id) ds.by_identity_[*r.person_id].push_back(i);
    }
    int next_class = 0;
    for (const auto& [pid, _] : ds.by_identity_) ds.class_of_person_[pid] = next_class++;
    ds.num_identities = next_class;
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generation

namespace {

struct CameraTransform {
    std::vector<double> gain;  // per channel
    std::vector<double> bias;
    int dy = 0;
    int dx = 0;
};

Image base_pattern(int h, int w, int c, Rng& rng) {
    // Piecewise-constant 4x4 block pattern with per-block random colours.
    Image img(h, w, c);
    const int grid = 4;
    std::vector<float> colors(static_cast<std::size_t>(grid) * grid * c);
    for (auto& v : colors) v = static_cast<float>(rng.uniform(0.1, 0.9));
    for (int y = 0; y < h; ++y) {
        const int by = std::min(y * grid / h, grid - 1);
        for (int x = 0; x < w; ++x) {
            const int bx = std::min(x * grid / w, grid - 1);
            for (int ch = 0; ch < c; ++ch)
                img.at(y, x, ch) = colors[(static_cast<std::size_t>(by) * grid + bx) * c + ch];
        }
    }
    return img;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_identities < 1 || spec.images_per_identity_per_camera < 1 || spec.num_cameras < 1)
        throw InvalidArgument("synthetic spec counts must all be >= 1");
    if (spec.height < 4 || spec.width < 4 || (spec.channels != 1 && spec.channels != 3))
        throw InvalidArgument("synthetic spec needs height/width >= 4 and 1 or 3 channels");
    if (spec.cross_view_noise < 0)
        throw InvalidArgument("cross_view_noise must be >= 0");

    Rng root(spec.seed);
    Rng pattern_rng = root.fork(1);
    Rng camera_rng = root.fork(2);
    Rng image_rng = root.fork(3);

    std::vector<Image> patterns;
    patterns.reserve(static_cast<std::size_t>(spec.num_identities));
    for (int i = 0; i < spec.num_identities; ++i)
        patterns.push_back(base_pattern(spec.height, spec.width, spec.channels, pattern_rng));

    std::vector<CameraTransform> cams(static_cast<std::size_t>(spec.num_cameras));
    for (auto& cam : cams) {
        cam.gain.resize(static_cast<std::size_t>(spec.channels));
        cam.bias.resize(static_cast<std::size_t>(spec.channels));
        for (int ch = 0; ch < spec.channels; ++ch) {
            cam.gain[static_cast<std::size_t>(ch)] =
                camera_rng.uniform(1.0 - spec.camera_gain_range, 1.0 + spec.camera_gain_range);
            cam.bias[static_cast<std::size_t>(ch)] =
                camera_rng.uniform(-spec.camera_bias_range, spec.camera_bias_range);
        }
        // The shift is capped to a quarter block of the 4x4 pattern grid so a
        // fixed view transform never swamps identity structure at zero noise.
        const int safe_shift = std::min({spec.camera_max_shift, spec.height / 16, spec.width / 16});
        if (safe_shift > 0) {
            cam.dy = static_cast<int>(camera_rng.uniform_int(2 * safe_shift + 1)) - safe_shift;
            cam.dx = static_cast<int>(camera_rng.uniform_int(2 * safe_shift + 1)) - safe_shift;
        }
    }

    std::ostringstream name;
    name << "synth-s" << spec.seed << "-n" << spec.num_identities << "x" << spec.num_cameras << "x"
         << spec.images_per_identity_per_camera;

    std::vector<ImageRecord> records;
    records.reserve(static_cast<std::size_t>(spec.num_identities) * spec.num_cameras *
                    spec.images_per_identity_per_camera);
    for (int pid = 0; pid < spec.num_identities; ++pid) {
        for (int cam = 0; cam < spec.num_cameras; ++cam) {
            const auto& tf = cams[static_cast<std::size_t>(cam)];
            Image viewed = spec.camera_max_shift > 0 ? shift_wrap(patterns[static_cast<std::size_t>(pid)], tf.dy, tf.dx)
                                                     : patterns[static_cast<std::size_t>(pid)];
            for (int k = 0; k < spec.images_per_identity_per_camera; ++k) {
                const double jitter = image_rng.uniform(-spec.image_jitter, spec.image_jitter);
                Image img(spec.height, spec.width, spec.channels);
                for (int y = 0; y < spec.height; ++y) {
                    for (int x = 0; x < spec.width; ++x) {
                        for (int ch = 0; ch < spec.channels; ++ch) {
                            double v = tf.gain[static_cast<std::size_t>(ch)] * viewed.at(y, x, ch) +
                                       tf.bias[static_cast<std::size_t>(ch)] + jitter;
                            if (spec.cross_view_noise > 0) v += spec.cross_view_noise * image_rng.normal();
                            img.at(y, x, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                        }
                    }
                }
                ImageRecord rec;
                std::ostringstream id;
                id << name.str() << ":id" << pid << ":c" << cam << ":i" << k;
                rec.image_id = id.str();
                rec.person_id = pid;
                rec.camera_id = cam;
                rec.split = Split::train;
                rec.pixels = std::move(img);
                records.push_back(std::move(rec));
            }
        }
    }
    return make_dataset(name.str(), std::move(records));
}

// ---------------------------------------------------------------------------
// Manifest CSV

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

int parse_int_field(const std::string& s, const std::string& what, std::size_t row) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ManifestError("row " + std::to_string(row) + ": bad " + what + " value '" + s + "'");
    }
}

constexpr const char* kManifestHeader = "image_id,path,person_id,camera_id,split";

}  // namespace

Dataset load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    const auto base = path.parent_path();

    std::string line;
    if (!std::getline(in, line)) throw ManifestError("manifest " + path.string() + " is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kManifestHeader)
        throw ManifestError("manifest header must be '" + std::string(kManifestHeader) + "', got '" + line + "'");

    std::vector<ImageRecord> records;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        const auto fields = split_csv_row(line);
        if (fields.size() != 5)
            throw ManifestError("row " + std::to_string(row) + ": expected 5 fields, got " +
                                std::to_string(fields.size()));
        ImageRecord rec;
        rec.image_id = fields[0];
        rec.path = fields[1];
        if (rec.image_id.empty()) throw ManifestError("row " + std::to_string(row) + ": empty image_id");
        if (!fields[2].empty()) rec.person_id = parse_int_field(fields[2], "person_id", row);
        rec.camera_id = parse_int_field(fields[3], "camera_id", row);
        try {
            rec.split = split_from_string(fields[4]);
        } catch (const ManifestError& e) {
            throw ManifestError("row " + std::to_string(row) + ": " + e.what());
        }
        const auto img_path = base / rec.path;
        if (!std::filesystem::exists(img_path))
            throw MissingImageError("row " + std::to_string(row) + ": image file '" + rec.path +
                                    "' for image_id '" + rec.image_id + "' not found");
        try {
            rec.pixels = read_image(img_path);
        } catch (const IoError& e) {
            throw MissingImageError("row " + std::to_string(row) + ": " + e.what());
        }
        records.push_back(std::move(rec));
    }
    return make_dataset(path.stem().string(), std::move(records));
}

void write_manifest(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open manifest for writing: " + path.string());
    out << kManifestHeader << "\n";
    for (const auto& r : ds.records) {
        for (const auto* field : {&r.image_id, &r.path})
            if (field->find(',') != std::string::npos || field->find('\n') != std::string::npos)
                throw InvalidArgument("manifest field '" + *field + "' contains a delimiter");
        out << r.image_id << "," << r.path << ",";
        if (r.person_id) out << *r.person_id;
        out << "," << r.camera_id << "," << to_string(r.split) << "\n";
    }
    if (!out) throw IoError("failed writing manifest " + path.string());
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir, bool force) {
    const auto manifest_path = dir / "manifest.csv";
    if (std::filesystem::exists(manifest_path) && !force)
        throw IoError("refusing to overwrite existing " + manifest_path.string() + " (use force)");
    std::filesystem::create_directories(dir / "images");

    Dataset copy = ds;
    std::size_t idx = 0;
    for (auto& r : copy.records) {
        std::string safe;
        for (char ch : r.image_id) safe.push_back(std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_');
        r.path = "images/" + std::to_string(idx++) + "_" + safe + (r.pixels.c == 1 ? ".pgm" : ".ppm");
        write_image(r.pixels, dir / r.path);
    }
    write_manifest(copy, manifest_path);
}

// ---------------------------------------------------------------------------
// Probe / gallery protocols

namespace {

// person_id -> camera_id -> record indices, in record order.
std::map<int, std::map<int, std::vector<int>>> index_by_identity_camera(const Dataset& ds) {
    if (!ds.labelled()) throw ProtocolError("probe/gallery construction requires a labelled dataset");
    std::map<int, std::map<int, std::vector<int>>> out;
    for (int i = 0; i < static_cast<int>(ds.records.size()); ++i) {
        const auto& r = ds.records[static_cast<std::size_t>(i)];
        out[*r.person_id][r.camera_id].push_back(i);
    }
    for (const auto& [pid, cams] : out)
        if (cams.size() < 2)
            throw ProtocolError("identity " + std::to_string(pid) +
                                " has images in only one camera; cross-camera protocol impossible");
    return out;
}

}  // namespace

ProbeGallery make_probe_gallery(const Dataset& ds, EvalProtocol protocol, std::uint64_t seed) {
    const auto by_id_cam = index_by_identity_camera(ds);
    Rng rng = Rng(seed).fork(seed_offset::eval);

    ProbeGallery out;
    std::unordered_set<int> probe_rows;
    std::unordered_set<int> gallery_rows;

    if (protocol == EvalProtocol::single_shot) {
        for (const auto& [pid, cams] : by_id_cam) {
            std::vector<int> cam_ids;
            for (const auto& [cam, _] : cams) cam_ids.push_back(cam);
            const int gcam = cam_ids[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(cam_ids.size())))];
            const auto& gimgs = cams.at(gcam);
            gallery_rows.insert(gimgs[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(gimgs.size())))]);
            for (const auto& [cam, rows] : cams)
                if (cam != gcam)
                    for (int r : rows) probe_rows.insert(r);
        }
    } else if (protocol == EvalProtocol::single_query) {
        for (const auto& [pid, cams] : by_id_cam)
            for (const auto& [cam, rows] : cams)
                probe_rows.insert(rows[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(rows.size())))]);
        for (int i = 0; i < static_cast<int>(ds.records.size()); ++i)
            if (!probe_rows.count(i)) gallery_rows.insert(i);
    } else {  // multi_query: whole probe camera of each identity forms one query group
        for (const auto& [pid, cams] : by_id_cam) {
            std::vector<int> cam_ids;
            for (const auto& [cam, _] : cams) cam_ids.push_back(cam);
            const int pcam = cam_ids[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(cam_ids.size())))];
            for (int r : cams.at(pcam)) probe_rows.insert(r);
        }
        for (int i = 0; i < static_cast<int>(ds.records.size()); ++i)
            if (!probe_rows.count(i)) gallery_rows.insert(i);
    }

    for (int i = 0; i < static_cast<int>(ds.records.size()); ++i) {
        if (probe_rows.count(i)) out.probe.push_back(ds.records[static_cast<std::size_t>(i)]);
        else if (gallery_rows.count(i)) out.gallery.push_back(ds.records[static_cast<std::size_t>(i)]);
    }

    // Every probe identity must still have a cross-camera gallery image.
    for (const auto& p : out.probe) {
        bool ok = false;
        for (const auto& g : out.gallery)
            if (g.person_id == p.person_id && g.camera_id != p.camera_id) { ok = true; break; }
        if (!ok)
            throw ProtocolError("identity " + std::to_string(*p.person_id) +
                                " has no cross-camera gallery image under this protocol");
    }
    return out;
}

ProbeGallery split_probe_gallery(const Dataset& ds) {
    ProbeGallery out;
    for (const auto& r : ds.records) {
        if (r.split == Split::probe) out.probe.push_back(r);
        else if (r.split == Split::gallery) out.gallery.push_back(r);
    }
    if (out.probe.empty() || out.gallery.empty())
        throw ProtocolError("dataset '" + ds.name + "' has no explicit probe/gallery split records");
    return out;
}

Dataset subset_by_split(const Dataset& ds, Split split, bool fallback_all) {
    std::vector<ImageRecord> records;
    for (const auto& r : ds.records)
        if (r.split == split) records.push_back(r);
    if (records.empty() && fallback_all) return ds;
    return make_dataset(ds.name + ":" + to_string(split), std::move(records));
}

Dataset relabel_dataset(const Dataset& ds, const std::map<std::string, int>& labels, const std::string& name) {
    std::vector<ImageRecord> records;
    records.reserve(ds.records.size());
    for (const auto& r : ds.records) {
        auto it = labels.find(r.image_id);
        if (it == labels.end())
            throw InvalidArgument("labelling does not cover image '" + r.image_id + "'");
        ImageRecord copy = r;
        copy.person_id = it->second;
        records.push_back(std::move(copy));
    }
    return make_dataset(name, std::move(records));
}

Dataset merge_datasets(const std::vector<Dataset>& parts, const std::string& name) {
    std::vector<ImageRecord> records;
    int id_offset = 0;
    for (const auto& part : parts) {
        if (!part.labelled())
            throw InvalidArgument("cannot merge unlabelled dataset '" + part.name + "'");
        for (const auto& r : part.records) {
            ImageRecord copy = r;
            copy.person_id = id_offset + part.class_index(*r.person_id);
            records.push_back(std::move(copy));
        }
        id_offset += part.num_identities;
    }
    return make_dataset(name, std::move(records));
}

}  // namespace reid
