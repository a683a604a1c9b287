#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "reid/dataset.hpp"
#include "reid/eval.hpp"
#include "reid/model.hpp"
#include "reid/train.hpp"

namespace reid {

// Cross-view pseudo labels: every anchor-view image founds its own class and
// every matched-view image takes the class of its nearest anchor image.
struct SoftLabeling {
    std::map<std::string, int> labels;     // image_id -> pseudo class
    std::vector<std::string> anchor_ids;   // class c belongs to anchor_ids[c]
    int anchor_view = 0;
    int matched_view = -1;                 // -1: all non-anchor views
    int num_classes = 0;

    void validate() const;
};

// view_a_rows/view_b_rows index rows of `features`. Nearest neighbours by
// Euclidean distance; ties go to the smaller anchor index.
SoftLabeling soft_labels_from_features(const FeatureMatrix& features, const std::vector<int>& view_a_rows,
                                       const std::vector<int>& view_b_rows, int anchor_view = 0,
                                       int matched_view = -1);

// Binary affinity: W(i, j) = 1 iff j is among i's k nearest neighbours in the
// opposite view; symmetrised by max. Zero on the diagonal and between
// same-view rows.
Eigen::MatrixXd build_cross_view_graph(const FeatureMatrix& features, const std::vector<int>& view_a_rows,
                                       const std::vector<int>& view_b_rows, int k);

// Sum_ij W_ij ||z_i - z_j||^2 over columns z of `codes`; equals
// 2 * tr(Z L Z^T) for the Laplacian L = diag(W 1) - W of a symmetric W.
double graph_penalty(const Eigen::MatrixXd& codes, const Eigen::MatrixXd& w);

Eigen::MatrixXd graph_laplacian(const Eigen::MatrixXd& w);

struct SolverDiag {
    int iteration = 0;
    double objective = 0.0;
    double recon = 0.0;
    double graph = 0.0;
};

struct DictObjective {
    double total = 0.0;
    double recon = 0.0;
    double graph = 0.0;
};

DictObjective dict_objective(const Eigen::MatrixXd& dict, const Eigen::MatrixXd& codes,
                             const Eigen::MatrixXd& y_columns, const Eigen::MatrixXd& w, double lambda);

// Subspace model: dictionary atoms (columns, each inside the unit ball) and
// graph-smoothed codes.
struct DictModel {
    Eigen::MatrixXd dict;    // D_feat x K_atoms
    Eigen::MatrixXd codes;   // K_atoms x M
    Eigen::MatrixXd w;       // M x M affinity used at fit time
    double lambda = 0.0;
    std::vector<SolverDiag> diagnostics;
    // Objective after initialisation and after every half-step (Z, D, Z, ...),
    // so monotonicity can be audited from outside.
    std::vector<double> half_step_objectives;
};

// Alternating minimisation of ||Y - DZ||_F^2 + lambda * graph_penalty(Z, W)
// subject to ||d_i||^2 <= 1. The Z half-step solves the regularised normal
// equations exactly (via the Laplacian eigenbasis); the D half-step is exact
// per-atom least squares with unit-ball projection. The objective is asserted
// non-increasing at every half-step. Samples are COLUMNS of y_columns.
DictModel solve_graph_dictionary(const Eigen::MatrixXd& y_columns, const Eigen::MatrixXd& w, double lambda,
                                 int k_atoms, int max_iters, std::uint64_t seed);

// Convenience wrapper for row-major feature banks.
DictModel solve_graph_dictionary(const FeatureMatrix& features, const Eigen::MatrixXd& w, double lambda,
                                 int k_atoms, int max_iters, std::uint64_t seed);

// Ridge encoding of unseen columns: z = (D^T D + eps I)^-1 D^T y.
Eigen::MatrixXd encode_columns(const DictModel& model, const Eigen::MatrixXd& y_columns);

void write_solver_diagnostics(const std::vector<SolverDiag>& diags, const std::filesystem::path& path);

// Evaluation in code space (the "subspace" single model).
class CodeFeatureExtractor : public FeatureExtractor {
public:
    CodeFeatureExtractor(const SiameseModel& model, const DictModel& dict) : model_(model), dict_(dict) {}
    Eigen::MatrixXd extract(const Eigen::MatrixXd& images) const override;
    ImageShape input_shape() const override { return model_.backbone().input_shape(); }
    std::string id() const override { return model_.backbone().identifier() + "+codes"; }

private:
    const SiameseModel& model_;
    const DictModel& dict_;
};

struct AdaptConfig {
    int rounds = 3;  // the co-training loop normally converges within 2-3
    double lambda = 0.1;
    int k_atoms = 0;        // 0 -> min(feature_dim, sample count) / 2
    int knn_k = 3;
    int anchor_camera = -1;  // -1 -> smallest camera id in the target
    int solver_iters = 50;
    std::uint64_t seed = 0;
    TrainConfig train;

    void validate() const;
};

// Fine-tunes the deep model on pseudo-identities.
long self_train_round(SiameseModel& model, const Dataset& target, const SoftLabeling& labeling,
                      const TrainConfig& cfg, long start_iteration = 0, const LossSink& sink = {});

struct CoTrainRound {
    int round = 0;
    int num_pseudo_classes = 0;
    double label_agreement = 0.0;  // fraction of matched-view labels unchanged vs previous round
    std::vector<SolverDiag> solver;
};

struct CoTrainReport {
    std::vector<CoTrainRound> rounds;
};

// Alternates the graph-regularised dictionary model and soft-label
// self-training: per round, extract features, build the cross-view graph,
// solve the dictionary, relabel from code-space distances, fine-tune.
CoTrainReport co_train(SiameseModel& model, const Dataset& target, const AdaptConfig& cfg,
                       const LossSink& sink = {});

// Feature-space self-training only (no dictionary), same round structure.
CoTrainReport self_train(SiameseModel& model, const Dataset& target, const AdaptConfig& cfg,
                         const LossSink& sink = {});

// ---------------------------------------------------------------------------
// Autoencoder baseline

// Linear bottleneck autoencoder over base-network features:
// J(x) = 1/2 ||phi(x) - f_d(f_e(phi(x)))||^2.
class LinearAutoencoder {
public:
    LinearAutoencoder(int feature_dim, int mid_dim, std::uint64_t seed);

    Eigen::MatrixXd encode(const Eigen::MatrixXd& feature_rows) const { return encoder_.forward(feature_rows); }
    Eigen::MatrixXd reconstruct(const Eigen::MatrixXd& feature_rows) const {
        return decoder_.forward(encode(feature_rows));
    }
    double mean_loss(const Eigen::MatrixXd& feature_rows) const;
    // Full-batch gradient descent with momentum on the reconstruction loss.
    void fit(const Eigen::MatrixXd& feature_rows, int iters, double lr, double momentum = 0.9);

    int mid_dim() const { return encoder_.out_dim(); }
    Fc& encoder() { return encoder_; }
    Fc& decoder() { return decoder_; }

private:
    Fc encoder_;
    Fc decoder_;
    Eigen::VectorXd vel_;
};

struct AutoencoderConfig {
    int mid_dim = 0;  // 0 -> feature_dim / 2 (the reference setting halves 1024 to 512)
    int pretrain_iters = 300;
    int finetune_iters = 300;
    double lr = 0.05;
    std::uint64_t seed = 0;
};

// Pretrains on source features, fine-tunes on target features; the adapted
// representation is the encoder output.
LinearAutoencoder autoencoder_baseline(const SiameseModel& model, const Dataset& target, const Dataset& source,
                                       const AutoencoderConfig& cfg);

class EncoderFeatureExtractor : public FeatureExtractor {
public:
    EncoderFeatureExtractor(const SiameseModel& model, const LinearAutoencoder& ae) : model_(model), ae_(ae) {}
    Eigen::MatrixXd extract(const Eigen::MatrixXd& images) const override {
        return ae_.encode(model_.forward_features(images));
    }
    ImageShape input_shape() const override { return model_.backbone().input_shape(); }
    std::string id() const override { return model_.backbone().identifier() + "+encoder"; }

private:
    const SiameseModel& model_;
    const LinearAutoencoder& ae_;
};

// ---------------------------------------------------------------------------

// Cross-validates lambda on the unlabelled target: one co-training round on
// half of the data per candidate, scored on the held-out half by the
// cross-view nearest-neighbour cycle-consistency rate. Ties go to the
// smaller lambda.
double select_lambda(const SiameseModel& model, const Dataset& target, const std::vector<double>& candidates,
                     std::uint64_t seed, const AdaptConfig& base_cfg);

// Fraction of matched-view images whose anchor nearest neighbour maps back to
// them (the declared soft-label quality proxy).
double cycle_consistency_rate(const FeatureMatrix& features, const std::vector<int>& view_a_rows,
                              const std::vector<int>& view_b_rows);

// Row indices of the anchor view and of all other views.
std::pair<std::vector<int>, std::vector<int>> split_views(const Dataset& ds, int anchor_camera);

}  // namespace reid
