#include "reid/model.hpp"

#include <cmath>

#include "reid/errors.hpp"

namespace reid {

DropoutUnit::DropoutUnit(double keep_prob, DropoutMode mode) : keep_prob_(keep_prob), mode_(mode) {
    if (!(keep_prob_ > 0.0) || keep_prob_ > 1.0)
        throw InvalidArgument("dropout keep probability must be in (0, 1]");
}

Eigen::MatrixXd DropoutUnit::draw_image_masks(Rng& rng, Eigen::Index count, Eigen::Index dim) {
    Eigen::MatrixXd masks(count, dim);
    for (Eigen::Index i = 0; i < count; ++i)
        for (Eigen::Index d = 0; d < dim; ++d) masks(i, d) = rng.bernoulli(keep_prob_) ? 1.0 : 0.0;
    current_ = masks;
    return masks;
}

Eigen::MatrixXd DropoutUnit::draw_pair_masks(Rng& rng, Eigen::Index count, Eigen::Index dim) {
    return draw_image_masks(rng, count, dim);  // one shared row per pair
}

ClassificationDropoutResult apply_dropout(DropoutUnit& unit, const Eigen::MatrixXd& features, Rng& rng) {
    if (unit.mode() != DropoutMode::classification_random)
        throw InvalidArgument("classification apply_dropout called on a pairwise-consistent unit");
    ClassificationDropoutResult res;
    res.masks = unit.draw_image_masks(rng, features.rows(), features.cols());
    res.masked = res.masks.cwiseProduct(features);
    return res;
}

PairwiseDropoutResult apply_dropout(DropoutUnit& unit, const Eigen::MatrixXd& features,
                                    const std::vector<IndexPair>& pairing, Rng& rng) {
    if (unit.mode() != DropoutMode::verification_pairwise_consistent)
        throw InvalidArgument("pairwise apply_dropout called on a classification unit");
    if (pairing.empty()) throw InvalidArgument("pairwise-consistent dropout requires a pairing");
    PairwiseDropoutResult res;
    res.masks = unit.draw_pair_masks(rng, static_cast<Eigen::Index>(pairing.size()), features.cols());
    res.masked_i.resize(static_cast<Eigen::Index>(pairing.size()), features.cols());
    res.masked_j.resize(static_cast<Eigen::Index>(pairing.size()), features.cols());
    for (std::size_t p = 0; p < pairing.size(); ++p) {
        const auto [i, j] = pairing[p];
        if (i < 0 || j < 0 || i >= features.rows() || j >= features.rows())
            throw ShapeError("pair index out of range");
        res.masked_i.row(static_cast<Eigen::Index>(p)) =
            res.masks.row(static_cast<Eigen::Index>(p)).cwiseProduct(features.row(i));
        res.masked_j.row(static_cast<Eigen::Index>(p)) =
            res.masks.row(static_cast<Eigen::Index>(p)).cwiseProduct(features.row(j));
    }
    return res;
}

VerificationSubnet::VerificationSubnet(const std::string& prefix, int feature_dim, int hidden_dim)
    : fc(prefix + ".verif_fc", feature_dim, hidden_dim), out(prefix + ".verif_out", hidden_dim, 2) {}

Eigen::Vector2d verification_logits(const VerificationSubnet& subnet, const Eigen::VectorXd& yi,
                                    const Eigen::VectorXd& yj) {
    if (yi.size() != yj.size() || yi.size() != subnet.fc.in_dim())
        throw ShapeError("verification_logits: feature dimension mismatch");
    const Eigen::MatrixXd diff = (yi - yj).transpose();
    const Eigen::MatrixXd h = subnet.fc.forward(relu(diff));
    const Eigen::MatrixXd logits = subnet.out.forward(relu(h));
    return logits.row(0).transpose();
}

ClassificationSubnet::ClassificationSubnet(const std::string& prefix, int feature_dim, int num_classes)
    : head(prefix + ".cls", feature_dim, num_classes) {}

Eigen::MatrixXd classification_probabilities(const ClassificationSubnet& subnet,
                                             const Eigen::MatrixXd& features) {
    return softmax_rows(subnet.head.forward(features));
}

void LossConfig::validate() const {
    if (verification_weight < 0 || classification_weight < 0)
        throw InvalidArgument("loss weights must be >= 0");
    if (verification_weight == 0 && classification_weight == 0)
        throw InvalidArgument("at least one loss weight must be positive");
    if (num_aux_heads != 0 && num_aux_heads != 2)
        throw InvalidArgument("num_aux_heads must be 0 or 2");
}

ForwardStats combined_loss(const LossConfig& cfg, const HeadOutputs& outputs, const std::vector<int>& labels,
                           const std::vector<int>& pair_same) {
    cfg.validate();
    const std::size_t heads = outputs.cls_logits.size();
    if (outputs.verif_logits.size() != heads) throw ShapeError("combined_loss: head list size mismatch");

    ForwardStats stats;
    stats.heads.resize(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto& hl = stats.heads[h];
        if (cfg.classification_weight > 0) {
            if (labels.empty()) throw InvalidArgument("classification loss enabled but labels are missing");
            hl.classification = softmax_cross_entropy(outputs.cls_logits[h], labels, nullptr);
        }
        if (cfg.verification_weight > 0) {
            if (pair_same.empty()) throw InvalidArgument("verification loss enabled but pairs are missing");
            hl.verification = softmax_cross_entropy(outputs.verif_logits[h], pair_same, nullptr);
        }
        stats.total += cfg.verification_weight * hl.verification + cfg.classification_weight * hl.classification;
    }
    return stats;
}

// ---------------------------------------------------------------------------

SiameseModel::SiameseModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.loss.validate();
    backbone_ = make_backbone(cfg_.backbone, cfg_.input, cfg_.feature_dim, cfg_.conv_channels,
                              cfg_.loss.num_aux_heads, cfg_.init_seed);
    Rng rng = Rng(cfg_.init_seed).fork(seed_offset::model_init);
    for (int h = 0; h < num_heads(); ++h) {
        const std::string prefix = "head" + std::to_string(h);
        cls_.emplace_back(prefix, cfg_.feature_dim, std::max(cfg_.num_classes, 1));
        verif_.emplace_back(prefix, cfg_.feature_dim, cfg_.verif_hidden);
        cls_.back().head.init(rng, 0.01);
        verif_.back().fc.init(rng, std::sqrt(2.0 / cfg_.feature_dim));
        verif_.back().out.init(rng, std::sqrt(2.0 / cfg_.verif_hidden));
    }
    cls_dropout_ = DropoutUnit(cfg_.dropout_keep, DropoutMode::classification_random);
    verif_dropout_ = DropoutUnit(cfg_.dropout_keep, DropoutMode::verification_pairwise_consistent);
}

SiameseModel SiameseModel::clone() const {
    SiameseModel copy(cfg_);
    auto& self = const_cast<SiameseModel&>(*this);  // param_groups() does not mutate values
    auto src = self.param_groups();
    auto dst = copy.param_groups();
    set_params(dst, flatten_params(src));
    copy.backbone_->set_pretrained(backbone_->pretrained());
    return copy;
}

Eigen::MatrixXd SiameseModel::forward_features(const Eigen::MatrixXd& images) const {
    return backbone_->forward(images, nullptr, nullptr);
}

DropoutDraw SiameseModel::draw_dropout(Rng& rng, Eigen::Index num_images, Eigen::Index num_pairs) {
    DropoutDraw draw;
    draw.image_masks = cls_dropout_.draw_image_masks(rng, num_images, cfg_.feature_dim);
    if (num_pairs > 0) draw.pair_masks = verif_dropout_.draw_pair_masks(rng, num_pairs, cfg_.feature_dim);
    return draw;
}

namespace {

// y~ = r * y with an all-ones fallback when masks are absent (test time).
Eigen::MatrixXd masked_or_plain(const Eigen::MatrixXd& values, const Eigen::MatrixXd& masks) {
    if (masks.size() == 0) return values;
    if (masks.rows() != values.rows() || masks.cols() != values.cols())
        throw ShapeError("dropout mask shape does not match features");
    return masks.cwiseProduct(values);
}

}  // namespace

ForwardStats SiameseModel::forward_loss(const BatchView& batch, const DropoutDraw& draw,
                                        std::unique_ptr<TrainCache>* cache) const {
    cfg_.loss.validate();
    if (batch.pairs.size() != batch.pair_same.size())
        throw ShapeError("pair list and pair label list differ in length");

    auto tc = std::make_unique<TrainCache>();
    tc->batch = batch;
    tc->draw = draw;
    tc->features = backbone_->forward(batch.images, &tc->bb_cache, &tc->aux);

    const Eigen::Index num_pairs = static_cast<Eigen::Index>(batch.pairs.size());
    HeadOutputs outputs;
    tc->heads.resize(static_cast<std::size_t>(num_heads()));
    for (int h = 0; h < num_heads(); ++h) {
        auto& hc = tc->heads[static_cast<std::size_t>(h)];
        const Eigen::MatrixXd& feat = (h == 0) ? tc->features : tc->aux[static_cast<std::size_t>(h - 1)];

        if (cfg_.loss.classification_weight > 0) {
            hc.cls_masked = masked_or_plain(feat, draw.image_masks);
            hc.cls_logits = cls_[static_cast<std::size_t>(h)].head.forward(hc.cls_masked);
            outputs.cls_logits.push_back(hc.cls_logits);
        } else {
            outputs.cls_logits.emplace_back();
        }

        if (cfg_.loss.verification_weight > 0 && num_pairs > 0) {
            hc.diff.resize(num_pairs, feat.cols());
            for (Eigen::Index p = 0; p < num_pairs; ++p) {
                const auto [i, j] = batch.pairs[static_cast<std::size_t>(p)];
                hc.diff.row(p) = feat.row(i) - feat.row(j);
            }
            if (draw.pair_masks.size() != 0) hc.diff = draw.pair_masks.cwiseProduct(hc.diff);
            hc.relu_diff = relu(hc.diff);
            hc.h_pre = verif_[static_cast<std::size_t>(h)].fc.forward(hc.relu_diff);
            hc.h_act = relu(hc.h_pre);
            hc.verif_logits = verif_[static_cast<std::size_t>(h)].out.forward(hc.h_act);
            outputs.verif_logits.push_back(hc.verif_logits);
        } else {
            outputs.verif_logits.emplace_back();
        }
    }

    ForwardStats stats = combined_loss(cfg_.loss, outputs, batch.labels, batch.pair_same);
    if (!std::isfinite(stats.total))
        throw NumericError("non-finite combined loss; aborting (check learning rate and data)");
    if (cache) *cache = std::move(tc);
    return stats;
}

void SiameseModel::backward(const TrainCache& cache) {
    const auto& batch = cache.batch;
    const Eigen::Index num_pairs = static_cast<Eigen::Index>(batch.pairs.size());
    Eigen::MatrixXd dfeatures = Eigen::MatrixXd::Zero(cache.features.rows(), cache.features.cols());
    std::vector<Eigen::MatrixXd> daux;
    for (const auto& a : cache.aux) daux.push_back(Eigen::MatrixXd::Zero(a.rows(), a.cols()));

    for (int h = 0; h < num_heads(); ++h) {
        const auto& hc = cache.heads[static_cast<std::size_t>(h)];
        Eigen::MatrixXd* dfeat = (h == 0) ? &dfeatures : &daux[static_cast<std::size_t>(h - 1)];

        if (cfg_.loss.classification_weight > 0) {
            Eigen::MatrixXd dlogits;
            softmax_cross_entropy(hc.cls_logits, batch.labels, &dlogits);
            dlogits *= cfg_.loss.classification_weight;
            Eigen::MatrixXd dmasked = cls_[static_cast<std::size_t>(h)].head.backward(hc.cls_masked, dlogits);
            *dfeat += masked_or_plain(dmasked, cache.draw.image_masks);
        }

        if (cfg_.loss.verification_weight > 0 && num_pairs > 0) {
            Eigen::MatrixXd dlogits;
            softmax_cross_entropy(hc.verif_logits, batch.pair_same, &dlogits);
            dlogits *= cfg_.loss.verification_weight;
            Eigen::MatrixXd dh_act = verif_[static_cast<std::size_t>(h)].out.backward(hc.h_act, dlogits);
            Eigen::MatrixXd dh_pre = relu_backward(dh_act, hc.h_pre);
            Eigen::MatrixXd drelu = verif_[static_cast<std::size_t>(h)].fc.backward(hc.relu_diff, dh_pre);
            Eigen::MatrixXd ddiff = relu_backward(drelu, hc.diff);
            if (cache.draw.pair_masks.size() != 0) ddiff = cache.draw.pair_masks.cwiseProduct(ddiff);
            for (Eigen::Index p = 0; p < num_pairs; ++p) {
                const auto [i, j] = batch.pairs[static_cast<std::size_t>(p)];
                dfeat->row(i) += ddiff.row(p);
                dfeat->row(j) -= ddiff.row(p);
            }
        }
    }
    backbone_->backward(*cache.bb_cache, dfeatures, daux);
}

std::vector<ParamGroup> SiameseModel::param_groups() {
    std::vector<ParamGroup> groups = backbone_->param_groups();
    for (int h = 0; h < num_heads(); ++h) {
        groups.push_back(cls_[static_cast<std::size_t>(h)].head.group());
        groups.push_back(verif_[static_cast<std::size_t>(h)].fc.group());
        groups.push_back(verif_[static_cast<std::size_t>(h)].out.group());
    }
    return groups;
}

ParamGroup SiameseModel::find_group(const std::string& name) {
    for (auto& g : param_groups())
        if (g.name == name) return g;
    throw InvalidArgument("unknown parameter group '" + name + "'");
}

std::vector<std::string> SiameseModel::classification_head_groups() const {
    std::vector<std::string> names;
    for (int h = 0; h < num_heads(); ++h) names.push_back("head" + std::to_string(h) + ".cls");
    return names;
}

void SiameseModel::replace_classification_head(int num_classes, std::uint64_t seed, double weight_scale) {
    if (num_classes < 1) throw InvalidArgument("classification head needs at least 1 class");
    Rng rng(seed);
    for (int h = 0; h < num_heads(); ++h) {
        const std::string prefix = "head" + std::to_string(h);
        cls_[static_cast<std::size_t>(h)] = ClassificationSubnet(prefix, cfg_.feature_dim, num_classes);
        cls_[static_cast<std::size_t>(h)].head.init(rng, weight_scale);
    }
    cfg_.num_classes = num_classes;
}

HeadOutputs SiameseModel::forward_heads(const BatchView& batch, const DropoutDraw& draw) const {
    std::unique_ptr<TrainCache> cache;
    forward_loss(batch, draw, &cache);
    HeadOutputs out;
    for (const auto& hc : cache->heads) {
        out.cls_logits.push_back(hc.cls_logits);
        out.verif_logits.push_back(hc.verif_logits);
    }
    return out;
}

}  // namespace reid
