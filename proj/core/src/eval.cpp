#include "reid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "reid/errors.hpp"

namespace reid {

void FeatureMatrix::validate() const {
    if (features.rows() != static_cast<Eigen::Index>(image_ids.size()))
        throw ShapeError("feature matrix row count != image id count");
    if (!features.allFinite()) throw NumericError("feature matrix contains NaN/Inf");
}

FeatureMatrix extract_features(const FeatureExtractor& extractor, const std::vector<ImageRecord>& images) {
    FeatureMatrix fm;
    fm.extractor_id = extractor.id();
    fm.image_ids.reserve(images.size());
    for (const auto& r : images) fm.image_ids.push_back(r.image_id);
    if (images.empty()) {
        fm.features.resize(0, 0);
        return fm;
    }
    // One image at a time: a row then depends only on its own image, never on
    // batch composition, so duplicates are bit-identical and cached gallery
    // features stay valid regardless of how they were grouped.
    const Eigen::MatrixXd all = images_to_matrix(images, extractor.input_shape());
    for (Eigen::Index i = 0; i < all.rows(); ++i) {
        const Eigen::MatrixXd row = extractor.extract(all.row(i));
        if (i == 0) fm.features.resize(all.rows(), row.cols());
        if (row.rows() != 1 || row.cols() != fm.features.cols())
            throw ShapeError("feature extractor returned an unexpected shape");
        fm.features.row(i) = row;
    }
    fm.validate();
    return fm;
}

FeatureMatrix extract_features(const SiameseModel& model, const std::vector<ImageRecord>& images) {
    return extract_features(ModelFeatureExtractor(model), images);
}

std::vector<int> rank_gallery(const Eigen::VectorXd& probe_feature, const FeatureMatrix& gallery) {
    if (gallery.features.rows() > 0 && gallery.features.cols() != probe_feature.size())
        throw ShapeError("probe feature dimension does not match gallery");
    std::vector<int> order(static_cast<std::size_t>(gallery.features.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> dist(order.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        dist[i] = (gallery.features.row(static_cast<Eigen::Index>(i)).transpose() - probe_feature).squaredNorm();
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (dist[static_cast<std::size_t>(a)] != dist[static_cast<std::size_t>(b)])
            return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)];
        return a < b;  // declared tie-break
    });
    return order;
}

Eigen::VectorXd compute_cmc(const std::vector<std::vector<int>>& rankings, const std::vector<int>& probe_ids,
                            const std::vector<int>& gallery_ids, int gallery_size) {
    if (rankings.size() != probe_ids.size()) throw ShapeError("compute_cmc: rankings/probe_ids size mismatch");
    if (rankings.empty()) throw InvalidArgument("compute_cmc: empty probe set");
    Eigen::VectorXd cmc = Eigen::VectorXd::Zero(gallery_size);
    for (std::size_t p = 0; p < rankings.size(); ++p) {
        int hit_rank = -1;
        for (std::size_t r = 0; r < rankings[p].size(); ++r) {
            const int g = rankings[p][r];
            if (g < 0 || g >= static_cast<int>(gallery_ids.size()))
                throw ShapeError("compute_cmc: ranking index out of range");
            if (gallery_ids[static_cast<std::size_t>(g)] == probe_ids[p]) {
                hit_rank = static_cast<int>(r);
                break;
            }
        }
        if (hit_rank >= 0)
            for (int k = hit_rank; k < gallery_size; ++k) cmc[k] += 1.0;
    }
    cmc /= static_cast<double>(rankings.size());
    return cmc;
}

double compute_map(const std::vector<std::vector<int>>& rankings, const std::vector<int>& probe_ids,
                   const std::vector<int>& gallery_ids) {
    if (rankings.size() != probe_ids.size()) throw ShapeError("compute_map: rankings/probe_ids size mismatch");
    if (rankings.empty()) throw InvalidArgument("compute_map: empty probe set");
    double sum_ap = 0.0;
    for (std::size_t p = 0; p < rankings.size(); ++p) {
        int relevant = 0;
        for (int g : rankings[p])
            if (gallery_ids[static_cast<std::size_t>(g)] == probe_ids[p]) ++relevant;
        if (relevant == 0)
            throw ProtocolError("compute_map: probe identity " + std::to_string(probe_ids[p]) +
                                " absent from gallery");
        int hits = 0;
        double ap = 0.0;
        for (std::size_t r = 0; r < rankings[p].size(); ++r) {
            const int g = rankings[p][r];
            if (gallery_ids[static_cast<std::size_t>(g)] == probe_ids[p]) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(r + 1);
            }
        }
        sum_ap += ap / relevant;
    }
    return sum_ap / static_cast<double>(rankings.size());
}

void EvalReport::validate() const {
    for (Eigen::Index i = 0; i < cmc.size(); ++i) {
        if (cmc[i] < -1e-12 || cmc[i] > 1 + 1e-12) throw NumericError("CMC value out of [0,1]");
        if (i > 0 && cmc[i] + 1e-12 < cmc[i - 1]) throw NumericError("CMC must be non-decreasing");
    }
    if (map < -1e-12 || map > 1 + 1e-12) throw NumericError("mAP out of [0,1]");
}

namespace {

struct ProbeUnit {
    Eigen::VectorXd feature;
    int person_id = 0;
    int camera_id = 0;
};

}  // namespace

EvalReport evaluate(const FeatureMatrix& probe_features, const std::vector<ImageRecord>& probes,
                    const FeatureMatrix& gallery_features, const std::vector<ImageRecord>& gallery,
                    EvalProtocol protocol) {
    probe_features.validate();
    gallery_features.validate();
    if (probe_features.features.rows() != static_cast<Eigen::Index>(probes.size()))
        throw ShapeError("probe feature rows != probe record count");
    if (gallery_features.features.rows() != static_cast<Eigen::Index>(gallery.size()))
        throw ShapeError("gallery feature rows != gallery record count");
    if (probes.empty() || gallery.empty()) throw InvalidArgument("evaluation needs non-empty probe and gallery");
    for (const auto& r : probes)
        if (!r.person_id) throw ProtocolError("probe '" + r.image_id + "' has no identity label");

    // MQ pools each (identity, camera) query group into one averaged feature.
    std::vector<ProbeUnit> units;
    if (protocol == EvalProtocol::multi_query) {
        std::map<std::pair<int, int>, std::vector<Eigen::Index>> groups;
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(probes.size()); ++i)
            groups[{*probes[static_cast<std::size_t>(i)].person_id,
                    probes[static_cast<std::size_t>(i)].camera_id}].push_back(i);
        for (const auto& [key, rows] : groups) {
            ProbeUnit u;
            u.person_id = key.first;
            u.camera_id = key.second;
            u.feature = Eigen::VectorXd::Zero(probe_features.features.cols());
            for (Eigen::Index r : rows) u.feature += probe_features.features.row(r).transpose();
            u.feature /= static_cast<double>(rows.size());
            units.push_back(std::move(u));
        }
    } else {
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(probes.size()); ++i)
            units.push_back(ProbeUnit{probe_features.features.row(i).transpose(),
                                      *probes[static_cast<std::size_t>(i)].person_id,
                                      probes[static_cast<std::size_t>(i)].camera_id});
    }

    std::vector<std::vector<int>> rankings;
    std::vector<int> scored_probe_ids;
    std::vector<int> gallery_ids(gallery.size());
    for (std::size_t g = 0; g < gallery.size(); ++g)
        gallery_ids[g] = gallery[g].person_id ? *gallery[g].person_id : -1;

    int excluded = 0;
    for (const auto& u : units) {
        std::vector<int> full = rank_gallery(u.feature, gallery_features);
        std::vector<int> filtered;
        filtered.reserve(full.size());
        bool has_match = false;
        for (int g : full) {
            const auto& grec = gallery[static_cast<std::size_t>(g)];
            // Same-camera same-identity entries are junk under the
            // cross-camera protocol.
            if (gallery_ids[static_cast<std::size_t>(g)] == u.person_id && grec.camera_id == u.camera_id)
                continue;
            filtered.push_back(g);
            if (gallery_ids[static_cast<std::size_t>(g)] == u.person_id) has_match = true;
        }
        if (!has_match) {
            ++excluded;  // counted, not scored
            continue;
        }
        rankings.push_back(std::move(filtered));
        scored_probe_ids.push_back(u.person_id);
    }
    if (rankings.empty()) throw ProtocolError("no probe has a valid cross-camera gallery match");

    EvalReport report;
    report.protocol = protocol;
    report.num_probes = static_cast<int>(rankings.size());
    report.num_excluded = excluded;
    report.cmc = compute_cmc(rankings, scored_probe_ids, gallery_ids, static_cast<int>(gallery.size()));
    report.map = compute_map(rankings, scored_probe_ids, gallery_ids);
    for (int k : {1, 5, 10, 20}) {
        const int idx = std::min<int>(k, static_cast<int>(report.cmc.size())) - 1;
        report.rank_table[k] = idx >= 0 ? report.cmc[idx] : 0.0;
    }
    report.validate();
    return report;
}

EvalReport evaluate(const FeatureExtractor& extractor, const ProbeGallery& pg, EvalProtocol protocol) {
    const FeatureMatrix pf = extract_features(extractor, pg.probe);
    const FeatureMatrix gf = extract_features(extractor, pg.gallery);
    return evaluate(pf, pg.probe, gf, pg.gallery, protocol);
}

double rank_k(const EvalReport& report, int k) {
    const int idx = std::min<int>(k, static_cast<int>(report.cmc.size())) - 1;
    return idx >= 0 ? report.cmc[idx] : 0.0;
}

void write_features(const FeatureMatrix& fm, const std::filesystem::path& bin_path,
                    const std::filesystem::path& ids_csv_path) {
    fm.validate();
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw IoError("cannot open " + bin_path.string());
    const std::uint32_t rows = static_cast<std::uint32_t>(fm.features.rows());
    const std::uint32_t cols = static_cast<std::uint32_t>(fm.features.cols());
    bin.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    bin.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    for (Eigen::Index i = 0; i < fm.features.rows(); ++i)
        for (Eigen::Index j = 0; j < fm.features.cols(); ++j) {
            const float v = static_cast<float>(fm.features(i, j));
            bin.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
    std::ofstream csv(ids_csv_path);
    if (!csv) throw IoError("cannot open " + ids_csv_path.string());
    csv << "row,image_id\n";
    for (std::size_t i = 0; i < fm.image_ids.size(); ++i) csv << i << "," << fm.image_ids[i] << "\n";
}

FeatureMatrix read_features(const std::filesystem::path& bin_path, const std::filesystem::path& ids_csv_path) {
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw IoError("cannot open " + bin_path.string());
    std::uint32_t rows = 0, cols = 0;
    bin.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    bin.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (!bin) throw IoError("truncated feature file " + bin_path.string());
    FeatureMatrix fm;
    fm.features.resize(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
        for (std::uint32_t j = 0; j < cols; ++j) {
            float v = 0;
            bin.read(reinterpret_cast<char*>(&v), sizeof(v));
            fm.features(i, j) = v;
        }
    if (!bin) throw IoError("truncated feature file " + bin_path.string());

    std::ifstream csv(ids_csv_path);
    if (!csv) throw IoError("cannot open " + ids_csv_path.string());
    std::string line;
    std::getline(csv, line);  // header
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw IoError("bad feature id row: " + line);
        fm.image_ids.push_back(line.substr(comma + 1));
    }
    fm.validate();
    return fm;
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["protocol"] = to_string(report.protocol);
    j["num_probes"] = report.num_probes;
    j["num_excluded"] = report.num_excluded;
    j["map"] = report.map;
    nlohmann::ordered_json table;
    for (const auto& [k, v] : report.rank_table) table["rank" + std::to_string(k)] = v;
    j["rank_table"] = table;
    std::vector<double> cmc(report.cmc.data(), report.cmc.data() + report.cmc.size());
    j["cmc"] = cmc;
    return j.dump(2);
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open report file " + path.string());
    out << report_to_json(report) << "\n";
}

void write_cmc_svg(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open plot file " + path.string());
    const int width = 480, height = 320, margin = 40;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
        << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
        << height - margin << "\" stroke=\"black\"/>\n";
    const int n = static_cast<int>(report.cmc.size());
    out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (int i = 0; i < n; ++i) {
        const double x = margin + (width - 2.0 * margin) * (n == 1 ? 1.0 : static_cast<double>(i) / (n - 1));
        const double y = height - margin - (height - 2.0 * margin) * report.cmc[i];
        out << x << "," << y << " ";
    }
    out << "\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"" << height - 8 << "\" font-size=\"12\" text-anchor=\"middle\">rank</text>\n";
    out << "<text x=\"12\" y=\"" << height / 2 << "\" font-size=\"12\" transform=\"rotate(-90 12 "
        << height / 2 << ")\" text-anchor=\"middle\">matching rate</text>\n";
    out << "</svg>\n";
}

}  // namespace reid
