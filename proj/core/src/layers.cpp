#include "reid/layers.hpp"

#include <cmath>

#include "reid/errors.hpp"

namespace reid {

namespace {
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
}

void zero_grads(std::vector<ParamGroup>& groups) {
    for (auto& g : groups)
        for (auto& t : g.tensors) Eigen::Map<Eigen::VectorXd>(t.grad, t.size).setZero();
}

Eigen::VectorXd flatten_params(const std::vector<ParamGroup>& groups) {
    Eigen::Index total = 0;
    for (const auto& g : groups) total += g.size();
    Eigen::VectorXd out(total);
    Eigen::Index at = 0;
    for (const auto& g : groups)
        for (const auto& t : g.tensors) {
            out.segment(at, t.size) = Eigen::Map<const Eigen::VectorXd>(t.value, t.size);
            at += t.size;
        }
    return out;
}

Eigen::VectorXd flatten_grads(const std::vector<ParamGroup>& groups) {
    Eigen::Index total = 0;
    for (const auto& g : groups) total += g.size();
    Eigen::VectorXd out(total);
    Eigen::Index at = 0;
    for (const auto& g : groups)
        for (const auto& t : g.tensors) {
            out.segment(at, t.size) = Eigen::Map<const Eigen::VectorXd>(t.grad, t.size);
            at += t.size;
        }
    return out;
}

void set_params(std::vector<ParamGroup>& groups, const Eigen::VectorXd& flat) {
    Eigen::Index at = 0;
    for (auto& g : groups)
        for (auto& t : g.tensors) {
            if (at + t.size > flat.size()) throw ShapeError("set_params: flat vector too short");
            Eigen::Map<Eigen::VectorXd>(t.value, t.size) = flat.segment(at, t.size);
            at += t.size;
        }
    if (at != flat.size()) throw ShapeError("set_params: flat vector size mismatch");
}

std::uint64_t group_hash(const ParamGroup& group) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const unsigned char* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& t : group.tensors)
        mix(reinterpret_cast<const unsigned char*>(t.value), static_cast<std::size_t>(t.size) * sizeof(double));
    return h;
}

// ---------------------------------------------------------------------------

Fc::Fc(std::string name_, int in_dim, int out_dim)
    : name(std::move(name_)),
      w(Eigen::MatrixXd::Zero(out_dim, in_dim)),
      gw(Eigen::MatrixXd::Zero(out_dim, in_dim)),
      b(Eigen::VectorXd::Zero(out_dim)),
      gb(Eigen::VectorXd::Zero(out_dim)) {}

void Fc::init(Rng& rng, double scale) {
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * rng.normal();
    b.setZero();
}

Eigen::MatrixXd Fc::forward(const Eigen::MatrixXd& x) const {
    if (x.cols() != w.cols())
        throw ShapeError("fc '" + name + "': input dim " + std::to_string(x.cols()) + " != " +
                         std::to_string(w.cols()));
    return (x * w.transpose()).rowwise() + b.transpose();
}

Eigen::MatrixXd Fc::backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy) {
    gw.noalias() += dy.transpose() * x;
    gb.noalias() += dy.colwise().sum().transpose();
    return dy * w;
}

ParamGroup Fc::group() {
    return ParamGroup{name,
                      {TensorRef{name + ".w", w.data(), gw.data(), w.size()},
                       TensorRef{name + ".b", b.data(), gb.data(), b.size()}}};
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(std::string name_, int in_h, int in_w, int in_c_, int out_c_, int ksize)
    : name(std::move(name_)), h(in_h), w(in_w), in_c(in_c_), out_c(out_c_), k(ksize) {
    if (k % 2 == 0) throw InvalidArgument("conv '" + name + "': kernel size must be odd");
    weight = Eigen::MatrixXd::Zero(out_c, k * k * in_c);
    gweight = Eigen::MatrixXd::Zero(out_c, k * k * in_c);
    bias = Eigen::VectorXd::Zero(out_c);
    gbias = Eigen::VectorXd::Zero(out_c);
}

void Conv2d::init(Rng& rng, double scale) {
    for (Eigen::Index i = 0; i < weight.size(); ++i) weight.data()[i] = scale * rng.normal();
    bias.setZero();
}

Eigen::MatrixXd Conv2d::forward(const Eigen::MatrixXd& x, std::vector<Eigen::MatrixXd>* cols_cache) const {
    const Eigen::Index batch = x.rows();
    if (x.cols() != static_cast<Eigen::Index>(in_c) * h * w)
        throw ShapeError("conv '" + name + "': bad input size");
    const int pad = k / 2;
    const Eigen::Index patch = static_cast<Eigen::Index>(k) * k * in_c;
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    Eigen::MatrixXd out(batch, static_cast<Eigen::Index>(out_c) * hw);
    if (cols_cache) cols_cache->assign(static_cast<std::size_t>(batch), Eigen::MatrixXd());

    for (Eigen::Index bi = 0; bi < batch; ++bi) {
        const Eigen::VectorXd img = x.row(bi);  // contiguous CHW copy
        Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(patch, hw);
        for (int c = 0; c < in_c; ++c) {
            const double* plane = img.data() + static_cast<Eigen::Index>(c) * hw;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const Eigen::Index prow = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
                    for (int y = 0; y < h; ++y) {
                        const int sy = y + ky - pad;
                        if (sy < 0 || sy >= h) continue;
                        for (int xx = 0; xx < w; ++xx) {
                            const int sx = xx + kx - pad;
                            if (sx < 0 || sx >= w) continue;
                            cols(prow, static_cast<Eigen::Index>(y) * w + xx) =
                                plane[static_cast<Eigen::Index>(sy) * w + sx];
                        }
                    }
                }
            }
        }
        RowMajorMatrix planes = weight * cols;  // (out_c, h*w), CHW flatten = row-major data
        planes.colwise() += bias;
        out.row(bi) = Eigen::Map<const Eigen::VectorXd>(planes.data(), planes.size());
        if (cols_cache) (*cols_cache)[static_cast<std::size_t>(bi)] = std::move(cols);
    }
    return out;
}

Eigen::MatrixXd Conv2d::backward(const std::vector<Eigen::MatrixXd>& cols_cache, const Eigen::MatrixXd& dy) {
    const Eigen::Index batch = dy.rows();
    const int pad = k / 2;
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(batch, static_cast<Eigen::Index>(in_c) * hw);
    for (Eigen::Index bi = 0; bi < batch; ++bi) {
        const Eigen::VectorXd drow = dy.row(bi);
        const Eigen::Map<const RowMajorMatrix> dplanes(drow.data(), out_c, hw);
        const auto& cols = cols_cache[static_cast<std::size_t>(bi)];
        gweight.noalias() += dplanes * cols.transpose();
        gbias.noalias() += dplanes.rowwise().sum();
        const Eigen::MatrixXd dcols = weight.transpose() * dplanes;  // (patch, h*w)
        Eigen::VectorXd dimg = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(in_c) * hw);
        for (int c = 0; c < in_c; ++c) {
            double* dplane = dimg.data() + static_cast<Eigen::Index>(c) * hw;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const Eigen::Index prow = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
                    for (int y = 0; y < h; ++y) {
                        const int sy = y + ky - pad;
                        if (sy < 0 || sy >= h) continue;
                        for (int xx = 0; xx < w; ++xx) {
                            const int sx = xx + kx - pad;
                            if (sx < 0 || sx >= w) continue;
                            dplane[static_cast<Eigen::Index>(sy) * w + sx] +=
                                dcols(prow, static_cast<Eigen::Index>(y) * w + xx);
                        }
                    }
                }
            }
        }
        dx.row(bi) = dimg;
    }
    return dx;
}

ParamGroup Conv2d::group() {
    return ParamGroup{name,
                      {TensorRef{name + ".w", weight.data(), gweight.data(), weight.size()},
                       TensorRef{name + ".b", bias.data(), gbias.data(), bias.size()}}};
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd AvgPool2::forward(const Eigen::MatrixXd& x) const {
    if (h % 2 != 0 || w % 2 != 0) throw InvalidArgument("avg pool needs even input sides");
    const Eigen::Index batch = x.rows();
    const int oh = h / 2, ow = w / 2;
    Eigen::MatrixXd out(batch, static_cast<Eigen::Index>(c) * oh * ow);
    for (Eigen::Index bi = 0; bi < batch; ++bi) {
        const Eigen::VectorXd img = x.row(bi);
        Eigen::VectorXd dst(out.cols());
        for (int ch = 0; ch < c; ++ch) {
            const double* plane = img.data() + static_cast<Eigen::Index>(ch) * h * w;
            double* oplane = dst.data() + static_cast<Eigen::Index>(ch) * oh * ow;
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx)
                    oplane[static_cast<Eigen::Index>(y) * ow + xx] =
                        0.25 * (plane[static_cast<Eigen::Index>(2 * y) * w + 2 * xx] +
                                plane[static_cast<Eigen::Index>(2 * y) * w + 2 * xx + 1] +
                                plane[static_cast<Eigen::Index>(2 * y + 1) * w + 2 * xx] +
                                plane[static_cast<Eigen::Index>(2 * y + 1) * w + 2 * xx + 1]);
        }
        out.row(bi) = dst;
    }
    return out;
}

Eigen::MatrixXd AvgPool2::backward(const Eigen::MatrixXd& dy) const {
    const Eigen::Index batch = dy.rows();
    const int oh = h / 2, ow = w / 2;
    Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(batch, static_cast<Eigen::Index>(c) * h * w);
    for (Eigen::Index bi = 0; bi < batch; ++bi) {
        const Eigen::VectorXd src = dy.row(bi);
        Eigen::VectorXd dimg = Eigen::VectorXd::Zero(dx.cols());
        for (int ch = 0; ch < c; ++ch) {
            const double* oplane = src.data() + static_cast<Eigen::Index>(ch) * oh * ow;
            double* plane = dimg.data() + static_cast<Eigen::Index>(ch) * h * w;
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    const double g = 0.25 * oplane[static_cast<Eigen::Index>(y) * ow + xx];
                    plane[static_cast<Eigen::Index>(2 * y) * w + 2 * xx] += g;
                    plane[static_cast<Eigen::Index>(2 * y) * w + 2 * xx + 1] += g;
                    plane[static_cast<Eigen::Index>(2 * y + 1) * w + 2 * xx] += g;
                    plane[static_cast<Eigen::Index>(2 * y + 1) * w + 2 * xx + 1] += g;
                }
        }
        dx.row(bi) = dimg;
    }
    return dx;
}

Eigen::MatrixXd global_avg_pool(const Eigen::MatrixXd& x, int c, int hw) {
    const Eigen::Index batch = x.rows();
    Eigen::MatrixXd out(batch, c);
    for (Eigen::Index bi = 0; bi < batch; ++bi)
        for (int ch = 0; ch < c; ++ch)
            out(bi, ch) = x.row(bi).segment(static_cast<Eigen::Index>(ch) * hw, hw).mean();
    return out;
}

Eigen::MatrixXd global_avg_pool_backward(const Eigen::MatrixXd& dy, int c, int hw) {
    const Eigen::Index batch = dy.rows();
    Eigen::MatrixXd dx(batch, static_cast<Eigen::Index>(c) * hw);
    for (Eigen::Index bi = 0; bi < batch; ++bi)
        for (int ch = 0; ch < c; ++ch)
            dx.row(bi).segment(static_cast<Eigen::Index>(ch) * hw, hw).setConstant(dy(bi, ch) / hw);
    return dx;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        Eigen::ArrayXd e = (logits.row(i).transpose().array() - m).exp();
        p.row(i) = (e / e.sum()).matrix().transpose();
    }
    return p;
}

double softmax_cross_entropy(const Eigen::MatrixXd& logits, const std::vector<int>& targets,
                             Eigen::MatrixXd* d_logits) {
    if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
        throw ShapeError("cross entropy: target count != logit rows");
    const Eigen::Index n = logits.rows();
    if (n == 0) throw ShapeError("cross entropy: empty batch");
    double loss = 0;
    Eigen::MatrixXd probs = softmax_rows(logits);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= logits.cols()) throw ShapeError("cross entropy: target out of range");
        const double m = logits.row(i).maxCoeff();
        const double lse = m + std::log((logits.row(i).transpose().array() - m).exp().sum());
        loss += lse - logits(i, t);
    }
    loss /= static_cast<double>(n);
    if (d_logits) {
        *d_logits = probs;
        for (Eigen::Index i = 0; i < n; ++i) (*d_logits)(i, targets[static_cast<std::size_t>(i)]) -= 1.0;
        *d_logits /= static_cast<double>(n);
    }
    return loss;
}

}  // namespace reid
