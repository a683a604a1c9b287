#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "reid/checkpoint.hpp"
#include "reid/config.hpp"
#include "reid/errors.hpp"

using namespace reid;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("config_checkpoint");

TEST_CASE("config files parse dotted keys, comments and overrides") {
    const fs::path dir = fs::temp_directory_path() / "reid_test_cfg";
    fs::create_directories(dir);
    std::ofstream(dir / "a.conf") << "# comment\n"
                                  << "seed = 99\n"
                                  << "batch.k = 8   # trailing comment\n"
                                  << "train.initial_lr = 0.5\n"
                                  << "eval.plot = true\n"
                                  << "adapt.lambda_candidates = 0.1, 0.2,0.4\n";
    ConfigMap cfg = load_config_file(dir / "a.conf");
    CHECK(cfg.get_seed("seed", 0) == 99);
    CHECK(cfg.get_int("batch.k", 0) == 8);
    CHECK(cfg.get_double("train.initial_lr", 0) == 0.5);
    CHECK(cfg.get_bool("eval.plot", false));
    CHECK(cfg.get_double_list("adapt.lambda_candidates") == std::vector<double>{0.1, 0.2, 0.4});

    apply_overrides(cfg, {"batch.k=4", "train.initial_lr=0.125"});
    CHECK(cfg.get_int("batch.k", 0) == 4);
    CHECK(cfg.get_double("train.initial_lr", 0) == 0.125);

    CHECK_THROWS_AS(apply_overrides(cfg, {"no_equals_sign"}), ConfigError);
    CHECK_NOTHROW(make_experiment_config(cfg));
}

TEST_CASE("unknown keys are rejected by name") {
    ConfigMap cfg;
    cfg.set("batch.k", "4");
    cfg.set("batch.size", "64");  // not a key of this project
    try {
        make_experiment_config(cfg);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("batch.size") != std::string::npos);
    }
}

TEST_CASE("typed getters validate their values") {
    ConfigMap cfg;
    cfg.set("batch.k", "many");
    CHECK_THROWS_AS(cfg.get_int("batch.k", 1), ConfigError);
    cfg.set("eval.plot", "maybe");
    CHECK_THROWS_AS(cfg.get_bool("eval.plot", false), ConfigError);
    cfg.set("train.initial_lr", "0.1x");
    CHECK_THROWS_AS(cfg.get_double("train.initial_lr", 0.0), ConfigError);
}

TEST_CASE("module seeds default to global seed plus fixed offsets") {
    ConfigMap map;
    map.set("seed", "1000");
    const ExperimentConfig cfg = make_experiment_config(map);
    CHECK(cfg.synth_spec().seed == 1000 + seed_offset::synth);
    CHECK(cfg.train_config().seed == 1000 + seed_offset::train);
    CHECK(cfg.adapt_config().seed == 1000 + seed_offset::adapt);

    ConfigMap map2;
    map2.set("seed", "1000");
    map2.set("train.seed", "7");
    CHECK(make_experiment_config(map2).train_config().seed == 7);
}

TEST_CASE("stage manifests split on ';' between stages and '+' within") {
    ConfigMap map;
    map.set("data.stages", "a.csv + b.csv ; c.csv");
    const auto stages = make_experiment_config(map).stage_manifests();
    REQUIRE(stages.size() == 2);
    CHECK(stages[0] == std::vector<std::string>{"a.csv", "b.csv"});
    CHECK(stages[1] == std::vector<std::string>{"c.csv"});
}

namespace {

ModelConfig ckpt_model_config() {
    ModelConfig cfg;
    cfg.input = ImageShape{8, 8, 1};
    cfg.feature_dim = 10;
    cfg.conv_channels = 4;
    cfg.verif_hidden = 6;
    cfg.num_classes = 3;
    cfg.init_seed = 42;
    return cfg;
}

}  // namespace

TEST_CASE("checkpoints round-trip parameters and the iteration counter") {
    const fs::path dir = fs::temp_directory_path() / "reid_test_ckpt";
    fs::create_directories(dir);
    SiameseModel model(ckpt_model_config());
    // make the state distinctive
    ParamGroup g = model.find_group("backbone.proj");
    g.tensors[0].value[5] = 1.25;

    save_checkpoint(model, 77, dir / "m.ckpt");
    LoadedCheckpoint loaded = load_checkpoint(dir / "m.ckpt");
    CHECK(loaded.iteration == 77);
    CHECK(loaded.model.num_classes() == 3);

    auto a = model.param_groups();
    auto b = loaded.model.param_groups();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(group_hash(a[i]) == group_hash(b[i]));

    // and the bytes are reproducible
    save_checkpoint(loaded.model, 77, dir / "m2.ckpt");
    std::ifstream f1(dir / "m.ckpt", std::ios::binary), f2(dir / "m2.ckpt", std::ios::binary);
    const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
}

TEST_CASE("checkpoint loading fails loudly on corruption") {
    const fs::path dir = fs::temp_directory_path() / "reid_test_ckpt_bad";
    fs::create_directories(dir);
    SiameseModel model(ckpt_model_config());
    const fs::path good = dir / "good.ckpt";
    save_checkpoint(model, 1, good);

    auto read_all = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    auto write_all = [](const fs::path& p, const std::string& bytes) {
        std::ofstream out(p, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    };
    const std::string bytes = read_all(good);

    SUBCASE("bad magic") {
        std::string b = bytes;
        b[0] = 'X';
        write_all(dir / "bad.ckpt", b);
        CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), CheckpointError);
    }
    SUBCASE("unsupported version") {
        std::string b = bytes;
        b[8] = 9;  // version lives right after the magic
        write_all(dir / "bad.ckpt", b);
        CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), CheckpointError);
    }
    SUBCASE("truncated tensors") {
        write_all(dir / "bad.ckpt", bytes.substr(0, bytes.size() - 64));
        CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), CheckpointError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(dir / "nope.ckpt"), IoError); }
}

TEST_SUITE_END();
