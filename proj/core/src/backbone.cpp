#include "reid/backbone.hpp"

#include <cmath>

#include "reid/errors.hpp"

namespace reid {

Eigen::MatrixXd images_to_matrix(const std::vector<const ImageRecord*>& records, const ImageShape& shape) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(records.size()), shape.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Image& img = records[i]->pixels;
        if (img.h != shape.h || img.w != shape.w || img.c != shape.c)
            throw ShapeError("image '" + records[i]->image_id + "' does not match the backbone input shape");
        Eigen::Index at = 0;
        for (int ch = 0; ch < img.c; ++ch)
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x) out(static_cast<Eigen::Index>(i), at++) = img.at(y, x, ch);
    }
    return out;
}

Eigen::MatrixXd images_to_matrix(const std::vector<ImageRecord>& records, const ImageShape& shape) {
    std::vector<const ImageRecord*> ptrs;
    ptrs.reserve(records.size());
    for (const auto& r : records) ptrs.push_back(&r);
    return images_to_matrix(ptrs, shape);
}

namespace {

struct ToyCache : public BackboneCache {
    Eigen::MatrixXd input;
    std::vector<Eigen::MatrixXd> cols1, cols2;
    Eigen::MatrixXd pre1, act1, pooled1;
    Eigen::MatrixXd pre2, act2, pooled2;
};

}  // namespace

ToyConvNet::ToyConvNet(ImageShape input, int feature_dim, int conv_channels, int aux_taps,
                       std::uint64_t init_seed)
    : input_(input), feature_dim_(feature_dim), conv_channels_(conv_channels), aux_taps_(aux_taps) {
    if (input_.h % 4 != 0 || input_.w % 4 != 0)
        throw InvalidArgument("toy backbone needs input sides divisible by 4");
    if (aux_taps_ != 0 && aux_taps_ != 2)
        throw InvalidArgument("toy backbone supports 0 or 2 aux taps");

    conv1_ = Conv2d("backbone.conv1", input_.h, input_.w, input_.c, conv_channels_, 3);
    pool1_ = AvgPool2(input_.h, input_.w, conv_channels_);
    conv2_ = Conv2d("backbone.conv2", input_.h / 2, input_.w / 2, conv_channels_, conv_channels_, 3);
    pool2_ = AvgPool2(input_.h / 2, input_.w / 2, conv_channels_);
    const int flat = conv_channels_ * (input_.h / 4) * (input_.w / 4);
    proj_ = Fc("backbone.proj", flat, feature_dim_);
    if (aux_taps_ == 2) {
        aux1_ = Fc("backbone.aux1", conv_channels_, feature_dim_);
        aux2_ = Fc("backbone.aux2", conv_channels_, feature_dim_);
    }

    Rng rng(init_seed);
    conv1_.init(rng, std::sqrt(2.0 / (3.0 * 3.0 * input_.c)));
    conv2_.init(rng, std::sqrt(2.0 / (3.0 * 3.0 * conv_channels_)));
    proj_.init(rng, std::sqrt(2.0 / flat));
    if (aux_taps_ == 2) {
        aux1_.init(rng, std::sqrt(2.0 / conv_channels_));
        aux2_.init(rng, std::sqrt(2.0 / conv_channels_));
    }
}

Eigen::MatrixXd ToyConvNet::forward(const Eigen::MatrixXd& images, std::unique_ptr<BackboneCache>* cache,
                                    std::vector<Eigen::MatrixXd>* aux) const {
    if (images.cols() != input_.size())
        throw ShapeError("backbone input has " + std::to_string(images.cols()) + " values per row, expected " +
                         std::to_string(input_.size()));
    auto c = std::make_unique<ToyCache>();
    c->input = images;
    c->pre1 = conv1_.forward(images, cache ? &c->cols1 : nullptr);
    c->act1 = relu(c->pre1);
    c->pooled1 = pool1_.forward(c->act1);
    c->pre2 = conv2_.forward(c->pooled1, cache ? &c->cols2 : nullptr);
    c->act2 = relu(c->pre2);
    c->pooled2 = pool2_.forward(c->act2);
    Eigen::MatrixXd features = proj_.forward(c->pooled2);

    if (aux) {
        aux->clear();
        if (aux_taps_ == 2) {
            const int hw1 = (input_.h / 2) * (input_.w / 2);
            const int hw2 = (input_.h / 4) * (input_.w / 4);
            aux->push_back(aux1_.forward(global_avg_pool(c->pooled1, conv_channels_, hw1)));
            aux->push_back(aux2_.forward(global_avg_pool(c->pooled2, conv_channels_, hw2)));
        }
    }
    if (cache) *cache = std::move(c);
    return features;
}

void ToyConvNet::backward(const BackboneCache& cache, const Eigen::MatrixXd& dfeatures,
                          const std::vector<Eigen::MatrixXd>& daux) {
    const auto& c = dynamic_cast<const ToyCache&>(cache);
    Eigen::MatrixXd dpooled2 = proj_.backward(c.pooled2, dfeatures);
    Eigen::MatrixXd dpooled1 = Eigen::MatrixXd::Zero(c.pooled1.rows(), c.pooled1.cols());

    if (aux_taps_ == 2) {
        if (daux.size() != 2) throw ShapeError("toy backbone expects gradients for 2 aux taps");
        const int hw1 = (input_.h / 2) * (input_.w / 2);
        const int hw2 = (input_.h / 4) * (input_.w / 4);
        const Eigen::MatrixXd g1 = global_avg_pool(c.pooled1, conv_channels_, hw1);
        const Eigen::MatrixXd g2 = global_avg_pool(c.pooled2, conv_channels_, hw2);
        dpooled1 += global_avg_pool_backward(aux1_.backward(g1, daux[0]), conv_channels_, hw1);
        dpooled2 += global_avg_pool_backward(aux2_.backward(g2, daux[1]), conv_channels_, hw2);
    } else if (!daux.empty()) {
        throw ShapeError("toy backbone has no aux taps but aux gradients were provided");
    }

    Eigen::MatrixXd dact2 = pool2_.backward(dpooled2);
    Eigen::MatrixXd dpre2 = relu_backward(dact2, c.pre2);
    dpooled1 += conv2_.backward(c.cols2, dpre2);
    Eigen::MatrixXd dact1 = pool1_.backward(dpooled1);
    Eigen::MatrixXd dpre1 = relu_backward(dact1, c.pre1);
    conv1_.backward(c.cols1, dpre1);  // input gradient unused
}

std::vector<ParamGroup> ToyConvNet::param_groups() {
    std::vector<ParamGroup> groups{conv1_.group(), conv2_.group(), proj_.group()};
    if (aux_taps_ == 2) {
        groups.push_back(aux1_.group());
        groups.push_back(aux2_.group());
    }
    return groups;
}

std::vector<Eigen::MatrixXd> ToyConvNet::response_maps(const Image& image, const std::string& layer) const {
    std::vector<const ImageRecord*> one;
    ImageRecord rec;
    rec.pixels = image;
    one.push_back(&rec);
    const Eigen::MatrixXd x = images_to_matrix(one, input_);

    std::vector<Eigen::MatrixXd> cols;
    Eigen::MatrixXd act;
    int mh = 0, mw = 0;
    if (layer == "conv1") {
        act = relu(conv1_.forward(x, nullptr));
        mh = input_.h;
        mw = input_.w;
    } else if (layer == "conv2") {
        Eigen::MatrixXd a1 = pool1_.forward(relu(conv1_.forward(x, nullptr)));
        act = relu(conv2_.forward(a1, nullptr));
        mh = input_.h / 2;
        mw = input_.w / 2;
    } else {
        throw InvalidArgument("unknown response layer '" + layer + "' (known: conv1, conv2)");
    }

    std::vector<Eigen::MatrixXd> maps;
    const Eigen::VectorXd row = act.row(0);
    for (int ch = 0; ch < conv_channels_; ++ch) {
        Eigen::MatrixXd m(mh, mw);
        for (int y = 0; y < mh; ++y)
            for (int xx = 0; xx < mw; ++xx)
                m(y, xx) = row[static_cast<Eigen::Index>(ch) * mh * mw + static_cast<Eigen::Index>(y) * mw + xx];
        maps.push_back(std::move(m));
    }
    return maps;
}

std::unique_ptr<Backbone> make_backbone(const std::string& identifier, ImageShape input, int feature_dim,
                                        int conv_channels, int aux_taps, std::uint64_t init_seed) {
    if (identifier == "toy_conv")
        return std::make_unique<ToyConvNet>(input, feature_dim, conv_channels, aux_taps, init_seed);
    throw InvalidArgument("unknown backbone identifier '" + identifier +
                          "' (adapters for pretrained backbones register here)");
}

}  // namespace reid
