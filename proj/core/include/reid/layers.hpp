#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "reid/rng.hpp"

namespace reid {

// View into one parameter tensor and its gradient buffer. Refs are
// invalidated if the owning layer is resized (e.g. head replacement);
// re-fetch param_groups() afterwards.
struct TensorRef {
    std::string name;
    double* value = nullptr;
    double* grad = nullptr;
    Eigen::Index size = 0;
};

// A named, freezable set of tensors (one logical layer).
struct ParamGroup {
    std::string name;
    std::vector<TensorRef> tensors;

    Eigen::Index size() const {
        Eigen::Index n = 0;
        for (const auto& t : tensors) n += t.size;
        return n;
    }
};

void zero_grads(std::vector<ParamGroup>& groups);
Eigen::VectorXd flatten_params(const std::vector<ParamGroup>& groups);
Eigen::VectorXd flatten_grads(const std::vector<ParamGroup>& groups);
void set_params(std::vector<ParamGroup>& groups, const Eigen::VectorXd& flat);

// FNV-1a over the raw bytes of every tensor in the group, in order.
std::uint64_t group_hash(const ParamGroup& group);

// ---------------------------------------------------------------------------

inline Eigen::MatrixXd relu(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

// dx = dy where the pre-activation was positive.
inline Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& pre) {
    return (pre.array() > 0.0).select(dy, Eigen::MatrixXd::Zero(dy.rows(), dy.cols()));
}

// Fully connected layer, rows are samples: y = x * W^T + b.
class Fc {
public:
    Fc() = default;
    Fc(std::string name, int in_dim, int out_dim);

    void init(Rng& rng, double scale);  // W ~ N(0, scale^2), b = 0
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
    // Accumulates into the layer grads; returns dx.
    Eigen::MatrixXd backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy);

    int in_dim() const { return static_cast<int>(w.cols()); }
    int out_dim() const { return static_cast<int>(w.rows()); }
    ParamGroup group();

    std::string name;
    Eigen::MatrixXd w, gw;
    Eigen::VectorXd b, gb;
};

// Zero-padded same convolution, stride 1, square odd kernel. Batch rows are
// CHW-flattened images.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, int in_h, int in_w, int in_c, int out_c, int ksize);

    void init(Rng& rng, double scale);
    // Returns B x (out_c*h*w); fills the im2col cache for backward.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, std::vector<Eigen::MatrixXd>* cols_cache) const;
    Eigen::MatrixXd backward(const std::vector<Eigen::MatrixXd>& cols_cache, const Eigen::MatrixXd& dy);

    int out_size() const { return out_c * h * w; }
    ParamGroup group();

    std::string name;
    int h = 0, w = 0, in_c = 0, out_c = 0, k = 0;
    Eigen::MatrixXd weight, gweight;  // (out_c, k*k*in_c)
    Eigen::VectorXd bias, gbias;
};

// 2x2 average pooling, stride 2 (input sides must be even).
class AvgPool2 {
public:
    AvgPool2() = default;
    AvgPool2(int in_h, int in_w, int channels) : h(in_h), w(in_w), c(channels) {}

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
    Eigen::MatrixXd backward(const Eigen::MatrixXd& dy) const;

    int out_size() const { return c * (h / 2) * (w / 2); }

    int h = 0, w = 0, c = 0;
};

// Per-channel global average pooling over CHW rows: B x (c*h*w) -> B x c.
Eigen::MatrixXd global_avg_pool(const Eigen::MatrixXd& x, int c, int hw);
Eigen::MatrixXd global_avg_pool_backward(const Eigen::MatrixXd& dy, int c, int hw);

// Row-wise softmax cross-entropy with integer targets; mean over rows.
// d_logits (optional out) is the gradient of the MEAN loss.
double softmax_cross_entropy(const Eigen::MatrixXd& logits, const std::vector<int>& targets,
                             Eigen::MatrixXd* d_logits);

// Row-wise softmax probabilities (numerically stable).
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

}  // namespace reid
