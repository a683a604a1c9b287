// Command-line driver: dataset synthesis, staged training, unsupervised
// adaptation, retrieval evaluation, response dumps and the SIR/CIR timing
// benchmark. One command per process; every command is deterministic given
// (config, seed).

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "reid/adapt.hpp"
#include "reid/checkpoint.hpp"
#include "reid/config.hpp"
#include "reid/errors.hpp"
#include "reid/eval.hpp"
#include "reid/train.hpp"

namespace fs = std::filesystem;
using namespace reid;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    bool force = false;
};

ExperimentConfig build_config(const CommonOpts& opts) {
    ConfigMap map;
    if (!opts.config_path.empty()) map = load_config_file(opts.config_path);
    apply_overrides(map, opts.overrides);
    return make_experiment_config(map);
}

std::string require_key(const ExperimentConfig& cfg, const std::string& key, const char* command) {
    const std::string value = cfg.raw.get_string(key, "");
    if (value.empty())
        throw ConfigError(std::string(command) + " requires config key '" + key + "'");
    return value;
}

std::string sanitize(const std::string& name) {
    std::string out;
    for (char ch : name) out.push_back(std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_');
    return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonOpts& opts) {
    const ExperimentConfig cfg = build_config(opts);
    const Dataset ds = generate_synthetic(cfg.synth_spec());
    const fs::path out = cfg.out_dir();
    fs::create_directories(out);
    save_dataset(ds, out, opts.force);
    std::cout << "wrote " << ds.records.size() << " images and " << (out / "manifest.csv").string() << "\n";
    return 0;
}

SiameseModel make_or_load_model(const ExperimentConfig& cfg, const ImageShape& input, long* start_iteration) {
    const std::string ckpt = cfg.raw.get_string("io.checkpoint", "");
    if (!ckpt.empty() && cfg.raw.get_bool("io.resume", false)) {
        LoadedCheckpoint loaded = load_checkpoint(ckpt);
        *start_iteration = loaded.iteration;
        return std::move(loaded.model);
    }
    ModelConfig mc = cfg.model_config();
    mc.input = input;
    *start_iteration = 0;
    return SiameseModel(mc);
}

int cmd_train(const CommonOpts& opts) {
    const ExperimentConfig cfg = build_config(opts);
    require_key(cfg, "data.stages", "train");
    const auto stage_paths = cfg.stage_manifests();
    if (stage_paths.empty()) throw ConfigError("config key 'data.stages' lists no manifests");

    std::vector<TransferStage> stages;
    const TrainConfig train_cfg = cfg.train_config();
    for (const auto& stage : stage_paths) {
        TransferStage ts;
        for (const auto& manifest : stage) ts.datasets.push_back(load_manifest(manifest));
        ts.config = train_cfg;
        stages.push_back(std::move(ts));
    }
    const Image& first = stages.front().datasets.front().records.front().pixels;
    const ImageShape input{first.h, first.w, first.c};

    long start_iteration = 0;
    SiameseModel model = make_or_load_model(cfg, input, &start_iteration);

    std::vector<LossRecord> log;
    const long end = staged_transfer(model, stages, start_iteration,
                                     [&](const LossRecord& r) { log.push_back(r); });

    const fs::path out = cfg.out_dir();
    fs::create_directories(out);
    write_loss_log(log, out / "loss_log.csv");
    save_checkpoint(model, end, out / "checkpoint.reid");
    std::cout << "trained " << (end - start_iteration) << " iterations (ending at " << end << "), wrote "
              << (out / "checkpoint.reid").string() << "\n";
    if (!log.empty()) std::cout << "final loss " << log.back().total << "\n";
    return 0;
}

ProbeGallery probe_gallery_for(const ExperimentConfig& cfg, const Dataset& ds) {
    const bool has_explicit = std::any_of(ds.records.begin(), ds.records.end(), [](const ImageRecord& r) {
        return r.split == Split::probe || r.split == Split::gallery;
    });
    if (has_explicit) return split_probe_gallery(ds);
    const std::uint64_t seed = cfg.raw.get_seed("eval.split_seed", cfg.global_seed() + seed_offset::eval);
    return make_probe_gallery(ds, cfg.eval_protocol(), seed);
}

int cmd_eval(const CommonOpts& opts) {
    const ExperimentConfig cfg = build_config(opts);
    const std::string ckpt = require_key(cfg, "io.checkpoint", "eval");
    const std::string manifest = require_key(cfg, "data.manifest", "eval");

    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const Dataset ds = load_manifest(manifest);
    const ProbeGallery pg = probe_gallery_for(cfg, ds);

    const ModelFeatureExtractor extractor(loaded.model);
    const FeatureMatrix probe_feats = extract_features(extractor, pg.probe);
    const FeatureMatrix gallery_feats = extract_features(extractor, pg.gallery);
    const EvalReport report = evaluate(probe_feats, pg.probe, gallery_feats, pg.gallery, cfg.eval_protocol());

    const fs::path out = cfg.out_dir();
    fs::create_directories(out);
    write_report(report, out / "report.json");
    write_features(gallery_feats, out / "gallery_features.bin", out / "gallery_features_ids.csv");
    write_features(probe_feats, out / "probe_features.bin", out / "probe_features_ids.csv");
    if (cfg.raw.get_bool("eval.plot", false)) write_cmc_svg(report, out / "cmc.svg");

    std::cout << "probes scored: " << report.num_probes << " (excluded " << report.num_excluded << ")\n";
    for (int k : {1, 5, 10, 20})
        std::cout << "rank-" << k << ": " << 100.0 * rank_k(report, k) << "%\n";
    std::cout << "mAP: " << report.map << "\n";
    std::cout << "wrote " << (out / "report.json").string() << "\n";
    return 0;
}

int cmd_adapt(const CommonOpts& opts) {
    const ExperimentConfig cfg = build_config(opts);
    const std::string ckpt = require_key(cfg, "io.checkpoint", "adapt");
    const std::string manifest = require_key(cfg, "data.manifest", "adapt");

    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const Dataset target = load_manifest(manifest);

    AdaptConfig adapt_cfg = cfg.adapt_config();
    const auto candidates = cfg.raw.get_double_list("adapt.lambda_candidates");
    if (!candidates.empty()) {
        adapt_cfg.lambda = select_lambda(loaded.model, target, candidates, adapt_cfg.seed, adapt_cfg);
        std::cout << "cross-validated lambda: " << adapt_cfg.lambda << "\n";
    }

    const CoTrainReport report = co_train(loaded.model, target, adapt_cfg);

    const fs::path out = cfg.out_dir();
    fs::create_directories(out);
    std::vector<SolverDiag> all_diags;
    for (const auto& r : report.rounds)
        all_diags.insert(all_diags.end(), r.solver.begin(), r.solver.end());
    write_solver_diagnostics(all_diags, out / "solver_diag.csv");

    std::ofstream agree(out / "label_agreement.csv");
    agree << "round,num_pseudo_classes,label_agreement\n";
    for (const auto& r : report.rounds) {
        agree << r.round << "," << r.num_pseudo_classes << "," << r.label_agreement << "\n";
        std::cout << "round " << r.round << ": " << r.num_pseudo_classes << " pseudo classes, agreement "
                  << r.label_agreement << "\n";
    }
    save_checkpoint(loaded.model, 0, out / "adapted.reid");
    std::cout << "wrote " << (out / "adapted.reid").string() << "\n";
    return 0;
}

int cmd_dump_responses(const CommonOpts& opts) {
    const ExperimentConfig cfg = build_config(opts);
    const std::string ckpt = require_key(cfg, "io.checkpoint", "dump-responses");
    const std::string manifest = require_key(cfg, "data.manifest", "dump-responses");
    const std::string layer = require_key(cfg, "dump.layer", "dump-responses");

    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    const Dataset ds = load_manifest(manifest);
    const auto wanted = cfg.raw.get_string_list("dump.images");

    const fs::path out = cfg.out_dir() / "responses";
    fs::create_directories(out);
    int files = 0;
    for (const auto& rec : ds.records) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), rec.image_id) == wanted.end()) continue;
        const auto maps = loaded.model.backbone().response_maps(rec.pixels, layer);
        for (std::size_t ch = 0; ch < maps.size(); ++ch) {
            const auto& m = maps[ch];
            Image img(static_cast<int>(m.rows()), static_cast<int>(m.cols()), 1);
            const double peak = m.maxCoeff();
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x)
                    img.at(y, x, 0) = peak > 0 ? static_cast<float>(std::max(0.0, m(y, x)) / peak) : 0.f;
            write_image(img, out / (sanitize(rec.image_id) + "_" + layer + "_c" + std::to_string(ch) + ".pgm"));
            ++files;
        }
    }
    std::cout << "wrote " << files << " response maps under " << out.string() << "\n";
    return 0;
}

int cmd_bench_sir_cir(const CommonOpts& opts) {
    const ExperimentConfig cfg = build_config(opts);
    const int dim = static_cast<int>(cfg.raw.get_int("bench.feature_dim", 1024));
    const int hidden = static_cast<int>(cfg.raw.get_int("bench.verif_hidden", 1024));
    const int gallery = static_cast<int>(cfg.raw.get_int("bench.gallery_size", 200));
    const int queries = static_cast<int>(cfg.raw.get_int("bench.queries", 20));
    Rng rng(cfg.raw.get_seed("bench.seed", 1));

    Eigen::MatrixXd gal(gallery, dim);
    for (Eigen::Index i = 0; i < gal.size(); ++i) gal.data()[i] = rng.normal();
    Eigen::MatrixXd probes(queries, dim);
    for (Eigen::Index i = 0; i < probes.size(); ++i) probes.data()[i] = rng.normal();

    VerificationSubnet subnet("bench", dim, hidden);
    Rng init(2);
    subnet.fc.init(init, 0.05);
    subnet.out.init(init, 0.05);

    using clock = std::chrono::steady_clock;
    double sink = 0;

    // SIR: pre-computed gallery vectors, one Euclidean scan per probe
    const auto t0 = clock::now();
    for (int q = 0; q < queries; ++q)
        for (int g = 0; g < gallery; ++g)
            sink += (probes.row(q) - gal.row(g)).squaredNorm();
    const auto t1 = clock::now();

    // CIR: every probe/gallery pair passes through the verification subnet
    for (int q = 0; q < queries; ++q)
        for (int g = 0; g < gallery; ++g) {
            const Eigen::Vector2d logits =
                verification_logits(subnet, probes.row(q).transpose(), gal.row(g).transpose());
            sink += logits[1];
        }
    const auto t2 = clock::now();

    if (!std::isfinite(sink)) {  // also keeps the measured loops alive
        std::cerr << "error: benchmark produced non-finite scores\n";
        return 1;
    }
    const double sir_us = std::chrono::duration<double, std::micro>(t1 - t0).count() / queries;
    const double cir_us = std::chrono::duration<double, std::micro>(t2 - t1).count() / queries;
    std::cout << "gallery_size=" << gallery << " feature_dim=" << dim << "\n";
    std::cout << "sir_us_per_query=" << sir_us << "\n";
    std::cout << "cir_us_per_query=" << cir_us << "\n";
    std::cout << "cir_over_sir=" << (sir_us > 0 ? cir_us / sir_us : 0) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"person re-identification training, adaptation and evaluation toolkit"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string command;
    for (const auto& [name, help] :
         std::vector<std::pair<std::string, std::string>>{
             {"synth", "generate a synthetic dataset (manifest + images)"},
             {"train", "run staged two-stepped fine-tuning over data.stages"},
             {"adapt", "co-training unsupervised adaptation of a checkpoint"},
             {"eval", "CMC/mAP evaluation of a checkpoint on a manifest"},
             {"dump-responses", "write per-channel activation maps of a backbone layer"},
             {"bench-sir-cir", "time single-image vs cross-image scoring"}}) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opts.config_path, "config file of key = value lines");
        sub->add_option("--set", opts.overrides, "override a config key (key=value, repeatable)");
        sub->add_flag("--force", opts.force, "allow overwriting existing outputs");
        sub->callback([&command, name = name]() { command = name; });
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (command == "synth") return cmd_synth(opts);
        if (command == "train") return cmd_train(opts);
        if (command == "adapt") return cmd_adapt(opts);
        if (command == "eval") return cmd_eval(opts);
        if (command == "dump-responses") return cmd_dump_responses(opts);
        if (command == "bench-sir-cir") return cmd_bench_sir_cir(opts);
        std::cerr << "error: no command selected\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 3;
    }
}
