#include "reid/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "reid/errors.hpp"
#include "reid/eval.hpp"

namespace reid {

void AugmentBounds::validate() const {
    if (translate_frac < 0 || translate_frac > 0.5)
        throw InvalidArgument("augment translate_frac must be in [0, 0.5]");
    if (scale_min <= 0 || scale_max < scale_min)
        throw InvalidArgument("augment scale bounds must satisfy 0 < min <= max");
    if (rotate_deg < 0 || rotate_deg > 45) throw InvalidArgument("augment rotate_deg must be in [0, 45]");
}

void TrainConfig::validate() const {
    if (initial_lr <= 0) throw InvalidArgument("train.initial_lr must be > 0");
    if (lr_decay_factor <= 0 || lr_decay_factor > 1)
        throw InvalidArgument("train.lr_decay_factor must be in (0, 1]");
    if (lr_decay_interval < 1) throw InvalidArgument("train.lr_decay_interval must be >= 1");
    if (step1_iters < 0 || step2_iters < 0) throw InvalidArgument("iteration counts must be >= 0");
    if (augmentations_per_image < 0) throw InvalidArgument("augment.count must be >= 0");
    if (batch_k < 1 || batch_m < 2) throw InvalidArgument("batch.k must be >= 1 and batch.m >= 2");
    if (momentum < 0 || momentum >= 1) throw InvalidArgument("train.momentum must be in [0, 1)");
    augment_bounds.validate();
}

double lr_at(const TrainConfig& cfg, long iteration) {
    const long k = iteration / cfg.lr_decay_interval;
    return cfg.initial_lr * std::pow(cfg.lr_decay_factor, static_cast<double>(k));
}

FreezePlan FreezePlan::all_trainable(SiameseModel& model) {
    FreezePlan plan;
    for (const auto& g : model.param_groups()) plan.trainable.insert(g.name);
    return plan;
}

FreezePlan FreezePlan::heads_only(SiameseModel& model, const std::vector<std::string>& trainable_groups) {
    FreezePlan plan;
    plan.trainable.insert(trainable_groups.begin(), trainable_groups.end());
    for (const auto& g : model.param_groups())
        if (!plan.trainable.count(g.name)) plan.frozen.insert(g.name);
    return plan;
}

void FreezePlan::validate(SiameseModel& model) const {
    for (const auto& g : model.param_groups()) {
        const bool f = frozen.count(g.name) > 0;
        const bool t = trainable.count(g.name) > 0;
        if (f == t)
            throw InvalidArgument("freeze plan must list group '" + g.name + "' as exactly one of frozen/trainable");
    }
    for (const auto& name : frozen)
        model.find_group(name);  // throws on unknown groups
    for (const auto& name : trainable) model.find_group(name);
}

bool FreezePlan::is_trainable(const std::string& group) const { return trainable.count(group) > 0; }

void SgdOptimizer::step(SiameseModel& model, const FreezePlan& plan, double lr) {
    for (auto& g : model.param_groups()) {
        if (!plan.is_trainable(g.name)) continue;
        for (auto& t : g.tensors) {
            Eigen::Map<Eigen::VectorXd> value(t.value, t.size);
            Eigen::Map<Eigen::VectorXd> grad(t.grad, t.size);
            auto [it, inserted] = velocity_.try_emplace(t.name, Eigen::VectorXd::Zero(t.size));
            if (it->second.size() != t.size) it->second = Eigen::VectorXd::Zero(t.size);
            Eigen::VectorXd g_eff = grad;
            if (weight_decay_ > 0) g_eff += weight_decay_ * value;
            it->second = momentum_ * it->second - lr * g_eff;
            value += it->second;
        }
    }
}

std::vector<ImageRecord> augment(const ImageRecord& record, int count, const AugmentBounds& bounds, Rng& rng) {
    if (count < 0) throw InvalidArgument("augment count must be >= 0");
    bounds.validate();
    std::vector<ImageRecord> out;
    out.reserve(static_cast<std::size_t>(count));
    const double max_tx = bounds.translate_frac * record.pixels.w;
    const double max_ty = bounds.translate_frac * record.pixels.h;
    for (int i = 0; i < count; ++i) {
        const double rot = rng.uniform(-bounds.rotate_deg, bounds.rotate_deg) * 3.14159265358979323846 / 180.0;
        const double scale = rng.uniform(bounds.scale_min, bounds.scale_max);
        const double tx = rng.uniform(-max_tx, max_tx);
        const double ty = rng.uniform(-max_ty, max_ty);
        ImageRecord copy = record;
        copy.image_id = record.image_id + "#aug" + std::to_string(i);
        copy.path.clear();
        copy.pixels = warp_affine(record.pixels, rot, scale, tx, ty);
        out.push_back(std::move(copy));
    }
    return out;
}

Dataset augment_dataset(const Dataset& ds, int per_image, const AugmentBounds& bounds, Rng& rng) {
    if (per_image == 0) return ds;
    std::vector<ImageRecord> records = ds.records;
    for (const auto& r : ds.records) {
        auto extra = augment(r, per_image, bounds, rng);
        for (auto& e : extra) records.push_back(std::move(e));
    }
    return make_dataset(ds.name + "+aug", std::move(records));
}

BatchView make_batch_view(const SiameseModel& model, const PairBatch& batch, const Dataset& ds) {
    BatchView view;
    std::vector<const ImageRecord*> recs;
    recs.reserve(batch.image_rows.size());
    for (int row : batch.image_rows) recs.push_back(&ds.records[static_cast<std::size_t>(row)]);
    view.images = images_to_matrix(recs, model.backbone().input_shape());
    if (ds.labelled()) {
        view.labels.reserve(recs.size());
        for (const auto* r : recs) view.labels.push_back(ds.class_index(*r->person_id));
    }
    view.pairs.reserve(batch.positive_pairs.size() + batch.negative_pairs.size());
    for (const auto& p : batch.positive_pairs) {
        view.pairs.push_back(p);
        view.pair_same.push_back(1);
    }
    for (const auto& p : batch.negative_pairs) {
        view.pairs.push_back(p);
        view.pair_same.push_back(0);
    }
    return view;
}

LossRecord train_step(SiameseModel& model, const PairBatch& batch, const Dataset& ds, const FreezePlan& plan,
                      double lr, SgdOptimizer& opt, Rng& rng) {
    plan.validate(model);
    BatchView view = make_batch_view(model, batch, ds);
    DropoutDraw draw = model.draw_dropout(rng, view.images.rows(), static_cast<Eigen::Index>(view.pairs.size()));

    std::unique_ptr<TrainCache> cache;
    ForwardStats stats = model.forward_loss(view, draw, &cache);

    auto groups = model.param_groups();
    zero_grads(groups);
    model.backward(*cache);
    opt.step(model, plan, lr);

    LossRecord rec;
    rec.lr = lr;
    rec.total = stats.total;
    rec.heads = stats.heads;
    return rec;
}

namespace {

struct Loop {
    SiameseModel& model;
    const Dataset& ds;
    const TrainConfig& cfg;
    const FreezePlan& plan;
    SgdOptimizer& opt;
    Rng& sampler_rng;
    Rng& dropout_rng;

    long run(long iters, long iteration, const LossSink& sink) {
        for (long i = 0; i < iters; ++i) {
            PairBatch batch = sample_batch(ds, cfg.batch_k, cfg.batch_m, sampler_rng);
            LossRecord rec = train_step(model, batch, ds, plan, lr_at(cfg, iteration), opt, dropout_rng);
            rec.iteration = iteration++;
            if (sink) sink(rec);
        }
        return iteration;
    }
};

Dataset prepare_target(const Dataset& target, const TrainConfig& cfg) {
    if (!target.labelled())
        throw InvalidArgument("fine-tuning needs a labelled target dataset (use pseudo labels for unlabelled data)");
    Dataset pool = subset_by_split(target, Split::train);
    if (cfg.augmentations_per_image > 0) {
        Rng aug_rng = Rng(cfg.seed).fork(seed_offset::augment);
        pool = augment_dataset(pool, cfg.augmentations_per_image, cfg.augment_bounds, aug_rng);
    }
    return pool;
}

// Tracks the best validation rank-1 snapshot when val_use = early_stop and
// the target carries a val split.
class ValTracker {
public:
    ValTracker(SiameseModel& model, const Dataset& target, const TrainConfig& cfg, long step2_iters)
        : model_(model) {
        if (cfg.val_use != ValUse::early_stop) return;
        const Dataset val = subset_by_split(target, Split::val, /*fallback_all=*/false);
        if (val.records.empty() || !val.labelled()) return;
        try {
            pg_ = make_probe_gallery(val, EvalProtocol::single_shot, cfg.seed);
        } catch (const ProtocolError&) {
            return;  // val split unusable for ranking; early stopping is a no-op
        }
        active_ = true;
        interval_ = std::max<long>(1, step2_iters / 10);
    }

    void observe(long step_index) {
        if (!active_ || step_index % interval_ != 0) return;
        const EvalReport report = evaluate(ModelFeatureExtractor(model_), pg_, EvalProtocol::single_shot);
        const double r1 = rank_k(report, 1);
        if (r1 > best_rank1_) {
            best_rank1_ = r1;
            auto groups = model_.param_groups();
            best_params_ = flatten_params(groups);
        }
    }

    void restore_best() {
        if (!active_ || best_params_.size() == 0) return;
        auto groups = model_.param_groups();
        set_params(groups, best_params_);
    }

private:
    SiameseModel& model_;
    ProbeGallery pg_;
    bool active_ = false;
    long interval_ = 1;
    double best_rank1_ = -1.0;
    Eigen::VectorXd best_params_;
};

}  // namespace

long two_stepped_finetune(SiameseModel& model, const Dataset& target, const TrainConfig& cfg,
                          long start_iteration, const LossSink& sink) {
    cfg.validate();
    const Dataset ds = prepare_target(target, cfg);
    if (ds.num_identities == 0) throw InvalidArgument("target dataset has no identities");

    // The source heads classify source identities; they cannot be reused.
    model.replace_classification_head(ds.num_identities, Rng(cfg.seed).fork(seed_offset::model_init).next_u64(),
                                      cfg.head_init_scale);

    Rng sampler_rng = Rng(cfg.seed).fork(seed_offset::sampler);
    Rng dropout_rng = Rng(cfg.seed).fork(seed_offset::train);
    SgdOptimizer opt(cfg.momentum, cfg.weight_decay);

    // Step 1: only the fresh softmax heads learn; a randomly initialised head
    // would otherwise backpropagate garbage gradients into the base network.
    FreezePlan step1 = FreezePlan::heads_only(model, model.classification_head_groups());
    Loop loop1{model, ds, cfg, step1, opt, sampler_rng, dropout_rng};
    long iteration = loop1.run(cfg.step1_iters, start_iteration, sink);

    // Step 2: everything trains.
    FreezePlan step2 = FreezePlan::all_trainable(model);
    opt.reset();
    ValTracker val(model, target, cfg, cfg.step2_iters);
    for (long i = 0; i < cfg.step2_iters; ++i) {
        PairBatch batch = sample_batch(ds, cfg.batch_k, cfg.batch_m, sampler_rng);
        LossRecord rec = train_step(model, batch, ds, step2, lr_at(cfg, iteration), opt, dropout_rng);
        rec.iteration = iteration++;
        if (sink) sink(rec);
        val.observe(i + 1);
    }
    val.restore_best();
    return iteration;
}

long one_stepped_finetune(SiameseModel& model, const Dataset& target, const TrainConfig& cfg,
                          long start_iteration, const LossSink& sink) {
    cfg.validate();
    const Dataset ds = prepare_target(target, cfg);
    if (ds.num_identities == 0) throw InvalidArgument("target dataset has no identities");
    model.replace_classification_head(ds.num_identities, Rng(cfg.seed).fork(seed_offset::model_init).next_u64(),
                                      cfg.head_init_scale);

    Rng sampler_rng = Rng(cfg.seed).fork(seed_offset::sampler);
    Rng dropout_rng = Rng(cfg.seed).fork(seed_offset::train);
    SgdOptimizer opt(cfg.momentum, cfg.weight_decay);
    FreezePlan plan = FreezePlan::all_trainable(model);
    Loop loop{model, ds, cfg, plan, opt, sampler_rng, dropout_rng};
    return loop.run(cfg.step1_iters + cfg.step2_iters, start_iteration, sink);
}

long staged_transfer(SiameseModel& model, const std::vector<TransferStage>& stages, long start_iteration,
                     const LossSink& sink) {
    if (stages.empty()) throw InvalidArgument("staged transfer needs at least one stage");
    long iteration = start_iteration;
    int stage_no = 0;
    for (const auto& stage : stages) {
        if (stage.datasets.empty()) throw InvalidArgument("transfer stage has no datasets");
        const Dataset ds = stage.datasets.size() == 1
                               ? stage.datasets.front()
                               : merge_datasets(stage.datasets, "stage" + std::to_string(stage_no));
        iteration = two_stepped_finetune(model, ds, stage.config, iteration, sink);
        ++stage_no;
    }
    return iteration;
}

void write_loss_log(const std::vector<LossRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open loss log for writing: " + path.string());
    const std::size_t heads = records.empty() ? 1 : records.front().heads.size();
    out << "iter,lr,total_loss";
    for (std::size_t h = 0; h < heads; ++h) out << ",verif_head" << h << ",cls_head" << h;
    out << "\n";
    char buf[64];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.10g", v);
        return std::string(buf);
    };
    for (const auto& r : records) {
        out << r.iteration << "," << fmt(r.lr) << "," << fmt(r.total);
        for (const auto& h : r.heads) out << "," << fmt(h.verification) << "," << fmt(h.classification);
        out << "\n";
    }
}

}  // namespace reid
