#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "reid/dataset.hpp"
#include "reid/model.hpp"

namespace reid {

// Row-aligned feature bank: features.row(i) belongs to image_ids[i].
struct FeatureMatrix {
    Eigen::MatrixXd features;
    std::vector<std::string> image_ids;
    std::string extractor_id;

    void validate() const;
};

// Anything that maps an image batch to feature rows. Lets evaluation run on
// the base network output, an autoencoder bottleneck, or dictionary codes
// through one interface.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual Eigen::MatrixXd extract(const Eigen::MatrixXd& images) const = 0;
    virtual ImageShape input_shape() const = 0;
    virtual std::string id() const = 0;
};

class ModelFeatureExtractor : public FeatureExtractor {
public:
    explicit ModelFeatureExtractor(const SiameseModel& model) : model_(model) {}
    Eigen::MatrixXd extract(const Eigen::MatrixXd& images) const override {
        return model_.forward_features(images);
    }
    ImageShape input_shape() const override { return model_.backbone().input_shape(); }
    std::string id() const override { return model_.backbone().identifier(); }

private:
    const SiameseModel& model_;
};

// Deterministic SIR feature extraction: dropout off, row order preserved.
FeatureMatrix extract_features(const FeatureExtractor& extractor, const std::vector<ImageRecord>& images);
FeatureMatrix extract_features(const SiameseModel& model, const std::vector<ImageRecord>& images);

// Gallery indices by ascending Euclidean distance; ties broken by index.
std::vector<int> rank_gallery(const Eigen::VectorXd& probe_feature, const FeatureMatrix& gallery);

// cmc[k-1] = fraction of probes whose first correct match has rank <= k.
// rankings[p] lists gallery indices in ranked order (already filtered of any
// excluded entries); gallery_size fixes the CMC length.
Eigen::VectorXd compute_cmc(const std::vector<std::vector<int>>& rankings, const std::vector<int>& probe_ids,
                            const std::vector<int>& gallery_ids, int gallery_size);

// Mean over probes of average precision over all correct gallery instances.
double compute_map(const std::vector<std::vector<int>>& rankings, const std::vector<int>& probe_ids,
                   const std::vector<int>& gallery_ids);

struct EvalReport {
    Eigen::VectorXd cmc;             // index k-1 = rank k
    std::map<int, double> rank_table;  // ranks {1, 5, 10, 20}
    double map = 0.0;
    EvalProtocol protocol = EvalProtocol::single_shot;
    int num_probes = 0;     // probes (or MQ query groups) actually scored
    int num_excluded = 0;   // probes with no valid cross-camera gallery match

    void validate() const;
};

// Full protocol evaluation. Gallery entries sharing the probe's camera AND
// identity are excluded from that probe's ranking (standard cross-camera
// junk handling). Under MQ, each (identity, camera) query group is mean-pooled
// into one probe feature.
EvalReport evaluate(const FeatureMatrix& probe_features, const std::vector<ImageRecord>& probes,
                    const FeatureMatrix& gallery_features, const std::vector<ImageRecord>& gallery,
                    EvalProtocol protocol);

EvalReport evaluate(const FeatureExtractor& extractor, const ProbeGallery& pg, EvalProtocol protocol);

double rank_k(const EvalReport& report, int k);

// Row-major float32 binary + sidecar CSV of image_ids in row order.
void write_features(const FeatureMatrix& fm, const std::filesystem::path& bin_path,
                    const std::filesystem::path& ids_csv_path);
FeatureMatrix read_features(const std::filesystem::path& bin_path, const std::filesystem::path& ids_csv_path);

std::string report_to_json(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& path);

// Minimal SVG rendering of the CMC curve (a static artifact, not a UI).
void write_cmc_svg(const EvalReport& report, const std::filesystem::path& path);

}  // namespace reid
