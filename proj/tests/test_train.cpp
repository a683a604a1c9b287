#include <doctest.h>

#include <cmath>
#include <map>

#include "reid/errors.hpp"
#include "reid/train.hpp"

using namespace reid;

namespace {

ModelConfig small_model(int classes) {
    ModelConfig cfg;
    cfg.input = ImageShape{8, 8, 1};
    cfg.feature_dim = 12;
    cfg.conv_channels = 4;
    cfg.verif_hidden = 8;
    cfg.num_classes = classes;
    cfg.dropout_keep = 1.0;  // deterministic paths for the bookkeeping tests
    cfg.init_seed = 9;
    return cfg;
}

Dataset small_data(int ids, int per_cam, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.num_identities = ids;
    spec.images_per_identity_per_camera = per_cam;
    spec.num_cameras = 2;
    spec.height = 8;
    spec.width = 8;
    spec.channels = 1;
    spec.seed = seed;
    return generate_synthetic(spec);
}

TrainConfig fast_cfg(long s1, long s2, std::uint64_t seed = 100) {
    TrainConfig cfg;
    cfg.initial_lr = 0.01;
    cfg.step1_iters = s1;
    cfg.step2_iters = s2;
    cfg.batch_k = 3;
    cfg.batch_m = 2;
    cfg.seed = seed;
    return cfg;
}

std::map<std::string, std::uint64_t> all_hashes(SiameseModel& model) {
    std::map<std::string, std::uint64_t> out;
    for (auto& g : model.param_groups()) out[g.name] = group_hash(g);
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("learning rate schedule steps at the decay interval") {
    TrainConfig cfg;
    cfg.initial_lr = 0.001;
    cfg.lr_decay_factor = 0.1;
    cfg.lr_decay_interval = 40000;
    CHECK(lr_at(cfg, 0) == doctest::Approx(0.001));
    CHECK(lr_at(cfg, 39999) == doctest::Approx(0.001));
    CHECK(lr_at(cfg, 40000) == doctest::Approx(0.0001));
    CHECK(lr_at(cfg, 80000) == doctest::Approx(0.00001));
}

TEST_CASE("augment preserves labels and honours bounds") {
    const Dataset ds = small_data(2, 1, 50);
    const ImageRecord& rec = ds.records.front();
    Rng rng(4);

    AugmentBounds bounds;
    CHECK(augment(rec, 0, bounds, rng).empty());

    auto five = augment(rec, 5, bounds, rng);
    CHECK(five.size() == 5);
    for (const auto& a : five) {
        CHECK(a.person_id == rec.person_id);
        CHECK(a.camera_id == rec.camera_id);
        CHECK(a.pixels.px != rec.pixels.px);
        CHECK(a.image_id != rec.image_id);
    }

    // zero-magnitude bounds reproduce the input exactly
    AugmentBounds zero;
    zero.translate_frac = 0;
    zero.scale_min = zero.scale_max = 1.0;
    zero.rotate_deg = 0;
    auto same = augment(rec, 2, zero, rng);
    for (const auto& a : same) CHECK(a.pixels.px == rec.pixels.px);

    AugmentBounds bad;
    bad.scale_min = 1.2;
    bad.scale_max = 0.8;
    CHECK_THROWS_AS(augment(rec, 1, bad, rng), InvalidArgument);
}

TEST_CASE("train_step with everything frozen leaves parameters bit-identical") {
    SiameseModel model(small_model(3));
    const Dataset ds = small_data(3, 2, 51);
    Rng sampler_rng(1), dropout_rng(2);
    const PairBatch batch = sample_batch(ds, 3, 2, sampler_rng);

    FreezePlan plan;
    for (const auto& g : model.param_groups()) plan.frozen.insert(g.name);
    SgdOptimizer opt(0.9);
    const auto before = all_hashes(model);
    train_step(model, batch, ds, plan, 0.1, opt, dropout_rng);
    CHECK(all_hashes(model) == before);
}

TEST_CASE("plain SGD applies new = old - lr * grad") {
    SiameseModel model(small_model(3));
    const Dataset ds = small_data(3, 2, 52);
    Rng sampler_rng(1), dropout_rng(2);
    const PairBatch batch = sample_batch(ds, 3, 2, sampler_rng);

    // compute the gradient of this exact step by hand
    SiameseModel probe = model.clone();
    {
        std::vector<const ImageRecord*> recs;
        for (int row : batch.image_rows) recs.push_back(&ds.records[static_cast<std::size_t>(row)]);
        BatchView view;
        view.images = images_to_matrix(recs, probe.backbone().input_shape());
        for (const auto* r : recs) view.labels.push_back(ds.class_index(*r->person_id));
        for (const auto& p : batch.positive_pairs) {
            view.pairs.push_back(p);
            view.pair_same.push_back(1);
        }
        for (const auto& p : batch.negative_pairs) {
            view.pairs.push_back(p);
            view.pair_same.push_back(0);
        }
        Rng mask_rng(2);  // same stream as dropout_rng below
        const DropoutDraw draw =
            probe.draw_dropout(mask_rng, view.images.rows(), static_cast<Eigen::Index>(view.pairs.size()));
        auto groups = probe.param_groups();
        zero_grads(groups);
        std::unique_ptr<TrainCache> cache;
        probe.forward_loss(view, draw, &cache);
        probe.backward(*cache);
    }
    const Eigen::VectorXd grad = flatten_grads(probe.param_groups());
    const Eigen::VectorXd before = flatten_params(model.param_groups());

    SgdOptimizer opt(/*momentum=*/0.0);
    const double lr = 0.05;
    train_step(model, batch, ds, FreezePlan::all_trainable(model), lr, opt, dropout_rng);
    const Eigen::VectorXd after = flatten_params(model.param_groups());
    CHECK((after - (before - lr * grad)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("lr = 0 changes nothing") {
    SiameseModel model(small_model(3));
    const Dataset ds = small_data(3, 2, 53);
    Rng sampler_rng(7), dropout_rng(8);
    const PairBatch batch = sample_batch(ds, 3, 2, sampler_rng);
    SgdOptimizer opt(0.9);
    const auto before = all_hashes(model);
    train_step(model, batch, ds, FreezePlan::all_trainable(model), 0.0, opt, dropout_rng);
    CHECK(all_hashes(model) == before);
}

TEST_CASE("two-stepped fine-tuning freezes everything but the heads in step 1") {
    SiameseModel model(small_model(5));
    const Dataset source = small_data(5, 2, 54);
    const Dataset target = small_data(4, 2, 55);

    // step 1 only: non-head groups must be untouched
    TrainConfig cfg = fast_cfg(10, 0);
    SiameseModel step1 = model.clone();
    auto before = all_hashes(step1);
    two_stepped_finetune(step1, target, cfg);
    for (const auto& [name, hash] : all_hashes(step1)) {
        if (name.find(".cls") != std::string::npos) continue;
        CHECK_MESSAGE(hash == before.at(name), name);
    }
    CHECK(step1.num_classes() == 4);

    // with step 2, all groups move
    TrainConfig cfg2 = fast_cfg(5, 15);
    SiameseModel full = model.clone();
    before = all_hashes(full);
    const long end_iter = two_stepped_finetune(full, target, cfg2);
    CHECK(end_iter == 20);
    for (const auto& [name, hash] : all_hashes(full)) CHECK_MESSAGE(hash != before.at(name), name);

    (void)source;
}

TEST_CASE("fine-tuning rejects unlabelled targets") {
    SiameseModel model(small_model(3));
    Dataset target = small_data(3, 2, 56);
    for (auto& r : target.records) r.person_id.reset();
    const Dataset unlabelled = make_dataset("unlabelled", std::move(target.records));
    CHECK_THROWS_AS(two_stepped_finetune(model, unlabelled, fast_cfg(1, 1)), InvalidArgument);
}

TEST_CASE("staged transfer merges within a stage and tracks the last head width") {
    SiameseModel model(small_model(2));
    const Dataset a = small_data(3, 2, 57);
    const Dataset b = small_data(2, 2, 58);
    const Dataset target = small_data(4, 2, 59);

    std::vector<TransferStage> stages;
    stages.push_back({{a, b}, fast_cfg(2, 4)});
    stages.push_back({{target}, fast_cfg(2, 4, 101)});
    std::vector<LossRecord> log;
    const long end = staged_transfer(model, stages, 0, [&](const LossRecord& r) { log.push_back(r); });
    CHECK(end == 12);
    CHECK(log.size() == 12);
    CHECK(log.front().iteration == 0);
    CHECK(log.back().iteration == 11);
    CHECK(model.num_classes() == 4);  // last stage wins

    // single stage behaves exactly like two_stepped_finetune
    SiameseModel lhs(small_model(2));
    SiameseModel rhs(small_model(2));
    staged_transfer(lhs, {{{target}, fast_cfg(2, 4, 300)}});
    two_stepped_finetune(rhs, target, fast_cfg(2, 4, 300));
    auto ha = all_hashes(lhs);
    auto hb = all_hashes(rhs);
    CHECK(ha == hb);
}

TEST_CASE("training is reproducible under equal seeds") {
    const Dataset target = small_data(4, 2, 60);
    SiameseModel a(small_model(2));
    SiameseModel b(small_model(2));
    two_stepped_finetune(a, target, fast_cfg(3, 6, 77));
    two_stepped_finetune(b, target, fast_cfg(3, 6, 77));
    CHECK(all_hashes(a) == all_hashes(b));

    SiameseModel c(small_model(2));
    two_stepped_finetune(c, target, fast_cfg(3, 6, 78));
    CHECK(all_hashes(a) != all_hashes(c));
}

TEST_CASE("loss moving average decreases on separable data") {
    const Dataset target = small_data(6, 3, 61);
    SiameseModel model(small_model(2));
    TrainConfig cfg = fast_cfg(20, 280, 500);
    cfg.initial_lr = 0.02;
    std::vector<double> losses;
    two_stepped_finetune(model, target, cfg, 0, [&](const LossRecord& r) { losses.push_back(r.total); });
    REQUIRE(losses.size() == 300);
    const auto window_mean = [&](std::size_t from, std::size_t count) {
        double sum = 0;
        for (std::size_t i = from; i < from + count; ++i) sum += losses[i];
        return sum / static_cast<double>(count);
    };
    CHECK(window_mean(losses.size() - 50, 50) <= window_mean(20, 50));
}

TEST_CASE("early stopping on a val split is accepted and deterministic") {
    SyntheticSpec spec;
    spec.num_identities = 5;
    spec.images_per_identity_per_camera = 3;
    spec.num_cameras = 2;
    spec.height = 8;
    spec.width = 8;
    spec.channels = 1;
    spec.seed = 63;
    Dataset base = generate_synthetic(spec);
    std::vector<ImageRecord> records = base.records;
    std::map<std::pair<int, int>, int> seen;
    for (auto& r : records)
        if (seen[{*r.person_id, r.camera_id}]++ == 2) r.split = Split::val;  // last image per cell
    const Dataset target = make_dataset("with_val", std::move(records));

    TrainConfig cfg = fast_cfg(5, 40, 91);
    cfg.val_use = ValUse::early_stop;
    SiameseModel a(small_model(2));
    two_stepped_finetune(a, target, cfg);
    SiameseModel b(small_model(2));
    two_stepped_finetune(b, target, cfg);
    CHECK(all_hashes(a) == all_hashes(b));
}

TEST_CASE("nan loss aborts with a numeric error") {
    SiameseModel model(small_model(3));
    const Dataset ds = small_data(3, 2, 62);
    Rng sampler_rng(1), dropout_rng(2);
    const PairBatch batch = sample_batch(ds, 3, 2, sampler_rng);

    ParamGroup g = model.find_group("backbone.proj");
    g.tensors[0].value[0] = std::numeric_limits<double>::quiet_NaN();
    SgdOptimizer opt;
    CHECK_THROWS_AS(train_step(model, batch, ds, FreezePlan::all_trainable(model), 0.01, opt, dropout_rng),
                    NumericError);
}

TEST_SUITE_END();
