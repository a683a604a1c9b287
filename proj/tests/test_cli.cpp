#include <doctest.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "reid/dataset.hpp"

using namespace reid;
namespace fs = std::filesystem;

namespace {

const char* cli_path() { return REID_CLI_PATH; }

int run(const std::string& args) {
    const std::string cmd = std::string(cli_path()) + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
}

std::uint64_t file_hash(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char ch;
    while (in.get(ch)) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return h;
}

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "reid_test_cli";
    return dir;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("synth, train, eval, adapt, dump-responses work end to end") {
    const fs::path dir = work_dir();
    fs::remove_all(dir);
    fs::create_directories(dir);

    const std::string synth_args =
        " --set synth.num_identities=6 --set synth.images_per_identity_per_camera=2"
        " --set synth.num_cameras=2 --set synth.height=8 --set synth.width=8 --set synth.channels=1"
        " --set seed=7";

    // synth refuses to overwrite without --force
    REQUIRE(run("synth --set out.dir=" + q(dir / "data") + synth_args) == 0);
    CHECK(run("synth --set out.dir=" + q(dir / "data") + synth_args) != 0);
    CHECK(run("synth --force --set out.dir=" + q(dir / "data") + synth_args) == 0);

    // identical seeds give identical manifests (and the data loads back)
    REQUIRE(run("synth --set out.dir=" + q(dir / "data2") + synth_args) == 0);
    CHECK(file_hash(dir / "data" / "manifest.csv") == file_hash(dir / "data2" / "manifest.csv"));
    const Dataset ds = load_manifest(dir / "data" / "manifest.csv");
    CHECK(ds.records.size() == 24);

    const std::string model_args =
        " --set model.feature_dim=12 --set model.conv_channels=4 --set model.verif_hidden=8"
        " --set batch.k=3 --set batch.m=2 --set train.step1_iters=4 --set train.step2_iters=8";

    // train writes a checkpoint and a loss log
    const std::string train_args = "train --set data.stages=" + q(dir / "data" / "manifest.csv") +
                                   " --set out.dir=" + q(dir / "run") + model_args + " --set seed=7";
    REQUIRE(run(train_args) == 0);
    CHECK(fs::exists(dir / "run" / "checkpoint.reid"));
    CHECK(fs::exists(dir / "run" / "loss_log.csv"));
    {
        std::ifstream log(dir / "run" / "loss_log.csv");
        std::string header;
        std::getline(log, header);
        CHECK(header.rfind("iter,lr,total_loss", 0) == 0);
        int rows = 0;
        std::string line;
        while (std::getline(log, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 12);
    }

    // determinism: a re-run reproduces the checkpoint bit for bit
    REQUIRE(run("train --set data.stages=" + q(dir / "data" / "manifest.csv") + " --set out.dir=" +
                q(dir / "run_b") + model_args + " --set seed=7") == 0);
    CHECK(file_hash(dir / "run" / "checkpoint.reid") == file_hash(dir / "run_b" / "checkpoint.reid"));
    CHECK(file_hash(dir / "run" / "loss_log.csv") == file_hash(dir / "run_b" / "loss_log.csv"));

    // resuming from the checkpoint continues the iteration numbering
    REQUIRE(run("train --set data.stages=" + q(dir / "data" / "manifest.csv") + " --set out.dir=" +
                q(dir / "resume") + model_args + " --set seed=7 --set io.resume=true --set io.checkpoint=" +
                q(dir / "run" / "checkpoint.reid")) == 0);
    {
        std::ifstream log(dir / "resume" / "loss_log.csv");
        std::string header, first;
        std::getline(log, header);
        std::getline(log, first);
        CHECK(first.rfind("12,", 0) == 0);  // the first run ended after iteration 11
    }

    // eval emits the JSON report and feature exports
    const std::string eval_args = "eval --set io.checkpoint=" + q(dir / "run" / "checkpoint.reid") +
                                  " --set data.manifest=" + q(dir / "data" / "manifest.csv") +
                                  " --set out.dir=" + q(dir / "eval_out") +
                                  " --set eval.protocol=single_shot --set eval.plot=true --set seed=7";
    REQUIRE(run(eval_args) == 0);
    CHECK(fs::exists(dir / "eval_out" / "report.json"));
    CHECK(fs::exists(dir / "eval_out" / "cmc.svg"));
    CHECK(fs::exists(dir / "eval_out" / "gallery_features.bin"));
    {
        std::ifstream in(dir / "eval_out" / "report.json");
        const std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        for (const char* key : {"\"cmc\"", "\"map\"", "\"rank_table\"", "\"protocol\""})
            CHECK(body.find(key) != std::string::npos);
    }

    // adapt runs co-training on an unlabelled copy of the data
    {
        Dataset unlabelled = ds;
        std::vector<ImageRecord> recs = unlabelled.records;
        for (auto& r : recs) r.person_id.reset();
        save_dataset(make_dataset("target", std::move(recs)), dir / "target");
    }
    const std::string adapt_args = "adapt --set io.checkpoint=" + q(dir / "run" / "checkpoint.reid") +
                                   " --set data.manifest=" + q(dir / "target" / "manifest.csv") +
                                   " --set out.dir=" + q(dir / "adapt_out") +
                                   " --set adapt.rounds=1 --set adapt.knn_k=1 --set adapt.solver_iters=10" +
                                   " --set train.step1_iters=2 --set train.step2_iters=2" +
                                   " --set batch.k=2 --set batch.m=2 --set seed=7";
    REQUIRE(run(adapt_args) == 0);
    CHECK(fs::exists(dir / "adapt_out" / "adapted.reid"));
    CHECK(fs::exists(dir / "adapt_out" / "solver_diag.csv"));
    CHECK(fs::exists(dir / "adapt_out" / "label_agreement.csv"));

    // a zero-iteration run still produces a valid checkpoint and an empty log
    REQUIRE(run("train --set data.stages=" + q(dir / "data" / "manifest.csv") + " --set out.dir=" +
                q(dir / "run0") + model_args + " --set seed=7 --set train.step1_iters=0"
                " --set train.step2_iters=0") == 0);
    CHECK(fs::exists(dir / "run0" / "checkpoint.reid"));
    {
        std::ifstream log(dir / "run0" / "loss_log.csv");
        std::string header, extra;
        std::getline(log, header);
        CHECK_FALSE(std::getline(log, extra));  // no iterations, no rows
    }

    // dump-responses writes channels x images grayscale maps
    const std::string dump_args_tail = " --set data.manifest=" + q(dir / "data" / "manifest.csv") +
                                       " --set dump.layer=conv1 --set dump.images=" +
                                       ds.records.front().image_id;
    REQUIRE(run("dump-responses --set io.checkpoint=" + q(dir / "run" / "checkpoint.reid") +
                " --set out.dir=" + q(dir / "dump_out") + dump_args_tail) == 0);
    int files = 0;
    fs::path one_map;
    for (const auto& e : fs::directory_iterator(dir / "dump_out" / "responses")) {
        CHECK(e.path().extension() == ".pgm");
        one_map = e.path();
        ++files;
    }
    CHECK(files == 4);  // conv channels x one image

    // identical input twice -> identical files
    REQUIRE(run("dump-responses --set io.checkpoint=" + q(dir / "run" / "checkpoint.reid") +
                " --set out.dir=" + q(dir / "dump_out2") + dump_args_tail) == 0);
    CHECK(file_hash(one_map) == file_hash(dir / "dump_out2" / "responses" / one_map.filename()));

    // unknown layer fails with a nonzero exit
    CHECK(run("dump-responses --set io.checkpoint=" + q(dir / "run" / "checkpoint.reid") +
              " --set data.manifest=" + q(dir / "data" / "manifest.csv") + " --set out.dir=" +
              q(dir / "dump_out") + " --set dump.layer=conv9") != 0);
}

TEST_CASE("bench-sir-cir runs at toy sizes") {
    CHECK(run("bench-sir-cir --set bench.feature_dim=64 --set bench.verif_hidden=64"
              " --set bench.gallery_size=16 --set bench.queries=2") == 0);
}

TEST_CASE("unknown config keys and missing inputs fail with nonzero exits") {
    CHECK(run("synth --set bogus.key=1") != 0);
    CHECK(run("eval --set io.checkpoint=/nonexistent.reid --set data.manifest=/nonexistent.csv") != 0);
    CHECK(run("train") != 0);  // data.stages missing
}

TEST_SUITE_END();
