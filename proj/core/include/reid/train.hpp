#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "reid/dataset.hpp"
#include "reid/model.hpp"
#include "reid/sampler.hpp"

namespace reid {

struct AugmentBounds {
    double translate_frac = 0.05;  // of the image side, per axis
    double scale_min = 0.95;
    double scale_max = 1.05;
    double rotate_deg = 5.0;

    void validate() const;
};

enum class ValUse { hyperparam, early_stop };

struct TrainConfig {
    double initial_lr = 0.01;
    double lr_decay_factor = 0.1;
    long lr_decay_interval = 40000;
    long step1_iters = 200;
    long step2_iters = 2000;
    int augmentations_per_image = 0;
    std::uint64_t seed = 0;

    // batch construction
    int batch_k = 4;
    int batch_m = 2;

    // optimiser (values are ecosystem defaults, all configurable)
    double momentum = 0.9;
    double weight_decay = 0.0;

    double head_init_scale = 0.01;
    AugmentBounds augment_bounds;
    ValUse val_use = ValUse::hyperparam;

    void validate() const;
};

// lr(t) = initial_lr * decay_factor^floor(t / decay_interval)
double lr_at(const TrainConfig& cfg, long iteration);

// Every parameter group is exactly one of frozen/trainable.
struct FreezePlan {
    std::set<std::string> frozen;
    std::set<std::string> trainable;

    static FreezePlan all_trainable(SiameseModel& model);
    static FreezePlan heads_only(SiameseModel& model, const std::vector<std::string>& trainable_groups);
    void validate(SiameseModel& model) const;
    bool is_trainable(const std::string& group) const;
};

// SGD with momentum; velocity buffers are keyed by tensor name so they
// survive TensorRef re-fetches.
class SgdOptimizer {
public:
    explicit SgdOptimizer(double momentum = 0.9, double weight_decay = 0.0)
        : momentum_(momentum), weight_decay_(weight_decay) {}

    void step(SiameseModel& model, const FreezePlan& plan, double lr);
    void reset() { velocity_.clear(); }

private:
    double momentum_;
    double weight_decay_;
    std::map<std::string, Eigen::VectorXd> velocity_;
};

struct LossRecord {
    long iteration = 0;
    double lr = 0.0;
    double total = 0.0;
    std::vector<HeadLoss> heads;
};

using LossSink = std::function<void(const LossRecord&)>;

// `count` random small 2D transforms about the image center (translation,
// scale, rotation within bounds); identity and camera labels are preserved.
std::vector<ImageRecord> augment(const ImageRecord& record, int count, const AugmentBounds& bounds, Rng& rng);

// Adds augmentations_per_image augmented copies of every record.
Dataset augment_dataset(const Dataset& ds, int per_image, const AugmentBounds& bounds, Rng& rng);

// Resolves a sampled batch into model inputs (images, class indices, ordered
// pairs with same/different labels).
BatchView make_batch_view(const SiameseModel& model, const PairBatch& batch, const Dataset& ds);

// One SGD step on one batch. Only trainable groups change. Dropout masks for
// the step are drawn from `rng` and retained in the model's dropout units.
LossRecord train_step(SiameseModel& model, const PairBatch& batch, const Dataset& ds, const FreezePlan& plan,
                      double lr, SgdOptimizer& opt, Rng& rng);

// Replaces the classification heads with fresh num-identities-wide ones, then
// step 1: trains only those heads (everything else frozen); step 2: trains
// all layers. Returns the iteration counter after the run.
long two_stepped_finetune(SiameseModel& model, const Dataset& target, const TrainConfig& cfg,
                          long start_iteration = 0, const LossSink& sink = {});

// One-stepped baseline: head replacement followed by training all layers for
// step1_iters + step2_iters.
long one_stepped_finetune(SiameseModel& model, const Dataset& target, const TrainConfig& cfg,
                          long start_iteration = 0, const LossSink& sink = {});

struct TransferStage {
    std::vector<Dataset> datasets;  // merged (with identity offsetting) if > 1
    TrainConfig config;
};

// Sequential fine-tuning across datasets; stage k+1 starts from stage k's
// parameters and every stage is two-stepped.
long staged_transfer(SiameseModel& model, const std::vector<TransferStage>& stages, long start_iteration = 0,
                     const LossSink& sink = {});

void write_loss_log(const std::vector<LossRecord>& records, const std::filesystem::path& path);

}  // namespace reid
