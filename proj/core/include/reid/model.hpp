#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "reid/backbone.hpp"
#include "reid/layers.hpp"
#include "reid/rng.hpp"
#include "reid/sampler.hpp"

namespace reid {

enum class DropoutMode { classification_random, verification_pairwise_consistent };

// Bernoulli(keep_prob) 0/1 masks, applied as y~ = r * y (element-wise). The
// classification path draws an independent mask per image; the verification
// path draws one mask per compared pair, shared by both members so the
// difference vector reflects appearance rather than masking.
class DropoutUnit {
public:
    DropoutUnit() = default;
    DropoutUnit(double keep_prob, DropoutMode mode);

    double keep_prob() const { return keep_prob_; }
    DropoutMode mode() const { return mode_; }

    // One mask row per image.
    Eigen::MatrixXd draw_image_masks(Rng& rng, Eigen::Index count, Eigen::Index dim);
    // One mask row per pair.
    Eigen::MatrixXd draw_pair_masks(Rng& rng, Eigen::Index count, Eigen::Index dim);

    // Masks drawn by the most recent call, for inspection.
    const Eigen::MatrixXd& current_masks() const { return current_; }

private:
    double keep_prob_ = 0.5;
    DropoutMode mode_ = DropoutMode::classification_random;
    Eigen::MatrixXd current_;
};

struct ClassificationDropoutResult {
    Eigen::MatrixXd masked;  // B x D
    Eigen::MatrixXd masks;   // B x D
};

struct PairwiseDropoutResult {
    Eigen::MatrixXd masked_i;  // P x D, first pair member
    Eigen::MatrixXd masked_j;  // P x D, second pair member
    Eigen::MatrixXd masks;     // P x D, shared within each pair
};

ClassificationDropoutResult apply_dropout(DropoutUnit& unit, const Eigen::MatrixXd& features, Rng& rng);
PairwiseDropoutResult apply_dropout(DropoutUnit& unit, const Eigen::MatrixXd& features,
                                    const std::vector<IndexPair>& pairing, Rng& rng);

// Subtract -> ReLU -> FC -> ReLU -> two-node head. Output index 1 means
// "same identity".
struct VerificationSubnet {
    VerificationSubnet() = default;
    VerificationSubnet(const std::string& prefix, int feature_dim, int hidden_dim);
    Fc fc;   // hidden FC after the difference
    Fc out;  // 2-way head
};

Eigen::Vector2d verification_logits(const VerificationSubnet& subnet, const Eigen::VectorXd& yi,
                                    const Eigen::VectorXd& yj);

// Single N-way softmax layer.
struct ClassificationSubnet {
    ClassificationSubnet() = default;
    ClassificationSubnet(const std::string& prefix, int feature_dim, int num_classes);
    Fc head;
};

Eigen::MatrixXd classification_probabilities(const ClassificationSubnet& subnet, const Eigen::MatrixXd& features);

struct LossConfig {
    double verification_weight = 3.0;
    double classification_weight = 1.0;
    int num_aux_heads = 0;  // 0 or 2

    void validate() const;
};

struct ModelConfig {
    ImageShape input{16, 16, 3};
    std::string backbone = "toy_conv";
    int feature_dim = 32;
    int conv_channels = 8;
    int verif_hidden = 32;
    int num_classes = 0;
    double dropout_keep = 0.5;
    LossConfig loss;
    std::uint64_t init_seed = 0;
};

// Inputs for one optimisation step. Pair indices refer to rows of `images`.
struct BatchView {
    Eigen::MatrixXd images;          // B x input_size
    std::vector<int> labels;         // class indices, size B (empty if unused)
    std::vector<IndexPair> pairs;    // ordered pairs (empty if unused)
    std::vector<int> pair_same;      // 1 = same identity, aligned with pairs
};

// Masks for one step. Empty matrices mean "dropout off" (test time).
struct DropoutDraw {
    Eigen::MatrixXd image_masks;  // B x D
    Eigen::MatrixXd pair_masks;   // P x D
};

struct HeadLoss {
    double verification = 0.0;
    double classification = 0.0;
};

struct ForwardStats {
    double total = 0.0;
    std::vector<HeadLoss> heads;
};

// Logits produced by every attachment point, so the loss can also be computed
// on hand-set outputs.
struct HeadOutputs {
    std::vector<Eigen::MatrixXd> cls_logits;    // per head: B x N
    std::vector<Eigen::MatrixXd> verif_logits;  // per head: P x 2
};

// Weighted sum over attachment points of verification BCE (over two-node
// softmax) and classification CE, with the per-head breakdown.
ForwardStats combined_loss(const LossConfig& cfg, const HeadOutputs& outputs, const std::vector<int>& labels,
                           const std::vector<int>& pair_same);

// Per-head activations kept between forward_loss and backward.
class TrainCache {
public:
    BatchView batch;
    DropoutDraw draw;
    std::unique_ptr<BackboneCache> bb_cache;
    Eigen::MatrixXd features;          // B x D
    std::vector<Eigen::MatrixXd> aux;  // per tap

    struct HeadCache {
        Eigen::MatrixXd cls_masked;    // B x D
        Eigen::MatrixXd cls_logits;    // B x N
        Eigen::MatrixXd diff;          // P x D (masked difference, pre-ReLU)
        Eigen::MatrixXd relu_diff;     // P x D
        Eigen::MatrixXd h_pre;         // P x hidden
        Eigen::MatrixXd h_act;         // P x hidden
        Eigen::MatrixXd verif_logits;  // P x 2
    };
    std::vector<HeadCache> heads;
};

// The two-branch Siamese graph: one shared backbone, a loss-specific dropout
// unit, and a classification + verification subnet at every attachment point.
class SiameseModel {
public:
    explicit SiameseModel(const ModelConfig& cfg);

    // Deep copy: a new model with identical configuration and parameters.
    SiameseModel clone() const;

    const ModelConfig& config() const { return cfg_; }
    Backbone& backbone() { return *backbone_; }
    const Backbone& backbone() const { return *backbone_; }
    int feature_dim() const { return backbone_->feature_dim(); }
    int num_classes() const { return cfg_.num_classes; }
    int num_heads() const { return 1 + cfg_.loss.num_aux_heads; }

    DropoutUnit& classification_dropout() { return cls_dropout_; }
    DropoutUnit& verification_dropout() { return verif_dropout_; }

    // Test-time features (dropout disabled), row order preserved.
    Eigen::MatrixXd forward_features(const Eigen::MatrixXd& images) const;

    DropoutDraw draw_dropout(Rng& rng, Eigen::Index num_images, Eigen::Index num_pairs);

    // Training forward. The same draw can be replayed for finite differences.
    ForwardStats forward_loss(const BatchView& batch, const DropoutDraw& draw,
                              std::unique_ptr<TrainCache>* cache) const;
    void backward(const TrainCache& cache);

    std::vector<ParamGroup> param_groups();
    ParamGroup find_group(const std::string& name);

    // Group names of all classification heads (the "new softmax layer" that
    // two-stepped fine-tuning trains first).
    std::vector<std::string> classification_head_groups() const;

    // Swap every classification head for a freshly initialised num_classes-way
    // one. Invalidates previously fetched TensorRefs.
    void replace_classification_head(int num_classes, std::uint64_t seed, double weight_scale);

    HeadOutputs forward_heads(const BatchView& batch, const DropoutDraw& draw) const;

    VerificationSubnet& verification_subnet(int head = 0) { return verif_[static_cast<std::size_t>(head)]; }
    ClassificationSubnet& classification_subnet(int head = 0) { return cls_[static_cast<std::size_t>(head)]; }

private:
    ModelConfig cfg_;
    std::unique_ptr<Backbone> backbone_;
    std::vector<ClassificationSubnet> cls_;   // one per attachment point
    std::vector<VerificationSubnet> verif_;
    DropoutUnit cls_dropout_;
    DropoutUnit verif_dropout_;
};

}  // namespace reid
