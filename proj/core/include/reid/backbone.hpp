#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "reid/dataset.hpp"
#include "reid/layers.hpp"

namespace reid {

struct ImageShape {
    int h = 16;
    int w = 16;
    int c = 3;
    int size() const { return h * w * c; }
    bool operator==(const ImageShape&) const = default;
};

// Converts records into a batch matrix, one CHW-flattened image per row.
Eigen::MatrixXd images_to_matrix(const std::vector<const ImageRecord*>& records, const ImageShape& shape);
Eigen::MatrixXd images_to_matrix(const std::vector<ImageRecord>& records, const ImageShape& shape);

// Opaque per-forward activations kept for the backward pass.
class BackboneCache {
public:
    virtual ~BackboneCache() = default;
};

// Feature extractor phi: image -> D-dimensional vector. Both Siamese branches
// run through one Backbone instance, so weight sharing is identity (a single
// parameter storage), not a copy.
class Backbone {
public:
    virtual ~Backbone() = default;

    virtual std::string identifier() const = 0;
    virtual ImageShape input_shape() const = 0;
    virtual int feature_dim() const = 0;
    virtual int num_aux_taps() const = 0;
    virtual bool pretrained() const = 0;
    virtual void set_pretrained(bool p) = 0;

    // Deterministic forward pass; dropout is never applied here. aux (when
    // non-null) receives one B x D matrix per intermediate tap.
    virtual Eigen::MatrixXd forward(const Eigen::MatrixXd& images, std::unique_ptr<BackboneCache>* cache,
                                    std::vector<Eigen::MatrixXd>* aux) const = 0;
    // Accumulates parameter gradients; daux must match num_aux_taps().
    virtual void backward(const BackboneCache& cache, const Eigen::MatrixXd& dfeatures,
                          const std::vector<Eigen::MatrixXd>& daux) = 0;

    virtual std::vector<ParamGroup> param_groups() = 0;

    // Named layers whose per-channel activation maps can be dumped.
    virtual std::vector<std::string> response_layers() const = 0;
    virtual std::vector<Eigen::MatrixXd> response_maps(const Image& image, const std::string& layer) const = 0;
};

// Small conv net for desk-scale runs: conv3x3 -> ReLU -> pool -> conv3x3 ->
// ReLU -> pool -> FC projection to the feature dimension. Optional aux taps
// (global average pool + FC) after each pooling stage mirror the auxiliary
// branch pattern of large classification backbones.
class ToyConvNet : public Backbone {
public:
    ToyConvNet(ImageShape input, int feature_dim, int conv_channels, int aux_taps, std::uint64_t init_seed);

    std::string identifier() const override { return "toy_conv"; }
    ImageShape input_shape() const override { return input_; }
    int feature_dim() const override { return feature_dim_; }
    int num_aux_taps() const override { return aux_taps_; }
    bool pretrained() const override { return pretrained_; }
    void set_pretrained(bool p) override { pretrained_ = p; }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& images, std::unique_ptr<BackboneCache>* cache,
                            std::vector<Eigen::MatrixXd>* aux) const override;
    void backward(const BackboneCache& cache, const Eigen::MatrixXd& dfeatures,
                  const std::vector<Eigen::MatrixXd>& daux) override;

    std::vector<ParamGroup> param_groups() override;

    std::vector<std::string> response_layers() const override { return {"conv1", "conv2"}; }
    std::vector<Eigen::MatrixXd> response_maps(const Image& image, const std::string& layer) const override;

    int conv_channels() const { return conv_channels_; }

private:
    ImageShape input_;
    int feature_dim_;
    int conv_channels_;
    int aux_taps_;
    bool pretrained_ = false;

    Conv2d conv1_, conv2_;
    AvgPool2 pool1_, pool2_;
    Fc proj_;
    Fc aux1_, aux2_;  // GAP(channels) -> feature_dim, only when aux_taps_ == 2
};

// Factory keyed by the identifier stored in checkpoints.
std::unique_ptr<Backbone> make_backbone(const std::string& identifier, ImageShape input, int feature_dim,
                                        int conv_channels, int aux_taps, std::uint64_t init_seed);

}  // namespace reid
