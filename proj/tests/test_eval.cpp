#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "reid/errors.hpp"
#include "reid/eval.hpp"
#include "support/eval_reference.hpp"

using namespace reid;
using reid_test::reference_scores;
using reid_test::RefScores;

namespace {

std::vector<ImageRecord> fake_records(const std::vector<int>& pids, const std::vector<int>& cams,
                                      const std::string& prefix) {
    std::vector<ImageRecord> out;
    for (std::size_t i = 0; i < pids.size(); ++i) {
        ImageRecord r;
        r.image_id = prefix + std::to_string(i);
        r.person_id = pids[i];
        r.camera_id = cams[i];
        out.push_back(std::move(r));
    }
    return out;
}

FeatureMatrix as_features(const Eigen::MatrixXd& rows, const std::string& prefix) {
    FeatureMatrix fm;
    fm.features = rows;
    for (Eigen::Index i = 0; i < rows.rows(); ++i) fm.image_ids.push_back(prefix + std::to_string(i));
    fm.extractor_id = "test";
    return fm;
}

}  // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("rank_gallery sorts ascending with index tie-breaks") {
    FeatureMatrix gallery = as_features((Eigen::MatrixXd(4, 2) << 0, 0, 3, 4, 0, 0, 1, 0).finished(), "g");
    Eigen::VectorXd probe(2);
    probe << 0, 0;
    const auto order = rank_gallery(probe, gallery);
    // rows 0 and 2 are equidistant (0); lower index first
    CHECK(order == std::vector<int>{0, 2, 3, 1});

    Eigen::VectorXd bad(3);
    CHECK_THROWS_AS(rank_gallery(bad, gallery), ShapeError);
}

TEST_CASE("probe vector contained in the gallery ranks first at distance zero") {
    Eigen::MatrixXd rows(3, 4);
    rows << 1, 2, 3, 4, 0, 1, 0, 1, 9, 9, 9, 9;
    FeatureMatrix gallery = as_features(rows, "g");
    const auto order = rank_gallery(rows.row(1).transpose(), gallery);
    CHECK(order.front() == 1);
}

TEST_CASE("cmc of a single probe hitting at rank 3") {
    // 5 gallery items, correct identity first appears at rank 3
    std::vector<std::vector<int>> rankings{{0, 1, 2, 3, 4}};
    std::vector<int> probe_ids{7};
    std::vector<int> gallery_ids{1, 2, 7, 7, 3};
    const Eigen::VectorXd cmc = compute_cmc(rankings, probe_ids, gallery_ids, 5);
    CHECK(cmc[0] == 0.0);
    CHECK(cmc[1] == 0.0);
    CHECK(cmc[2] == 1.0);
    CHECK(cmc[3] == 1.0);
    CHECK(cmc[4] == 1.0);

    CHECK_THROWS_AS(compute_cmc({}, {}, gallery_ids, 5), InvalidArgument);
}

TEST_CASE("AP with hits at ranks 1 and 3 is 0.8333...") {
    std::vector<std::vector<int>> rankings{{0, 1, 2, 3}};
    std::vector<int> probe_ids{1};
    std::vector<int> gallery_ids{1, 5, 1, 6};
    const double ap = compute_map(rankings, probe_ids, gallery_ids);
    CHECK(ap == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(std::abs(ap - 0.833333333333) < 1e-9);

    std::vector<int> absent{99};
    CHECK_THROWS_AS(compute_map(rankings, absent, gallery_ids), ProtocolError);
}

TEST_CASE("single correct item at rank 1 gives mAP 1.0") {
    std::vector<std::vector<int>> rankings{{0, 1}};
    const double ap = compute_map(rankings, {3}, {3, 4});
    CHECK(ap == 1.0);
}

TEST_CASE("evaluate matches the brute-force reference on random instances") {
    Rng rng(2025);
    for (int trial = 0; trial < 12; ++trial) {
        const int ids = 4 + static_cast<int>(rng.uniform_int(4));
        const int gal_per_id = 1 + static_cast<int>(rng.uniform_int(3));
        const int probes = 8 + static_cast<int>(rng.uniform_int(8));
        const int dim = 5;

        std::vector<int> gal_pids, gal_cams, probe_pids, probe_cams;
        for (int i = 0; i < ids; ++i)
            for (int k = 0; k < gal_per_id; ++k) {
                gal_pids.push_back(i);
                gal_cams.push_back(static_cast<int>(rng.uniform_int(2)));
            }
        for (int p = 0; p < probes; ++p) {
            probe_pids.push_back(static_cast<int>(rng.uniform_int(ids)));
            probe_cams.push_back(2);  // distinct camera: nothing junked, every id present
        }
        Eigen::MatrixXd gf(gal_pids.size(), dim), pf(probes, dim);
        for (Eigen::Index i = 0; i < gf.size(); ++i) gf.data()[i] = rng.normal();
        for (Eigen::Index i = 0; i < pf.size(); ++i) pf.data()[i] = rng.normal();

        const auto probes_r = fake_records(probe_pids, probe_cams, "p");
        const auto gallery_r = fake_records(gal_pids, gal_cams, "g");
        const EvalReport report = evaluate(as_features(pf, "p"), probes_r, as_features(gf, "g"), gallery_r,
                                           EvalProtocol::single_query);
        const RefScores ref = reference_scores(pf, probe_pids, probe_cams, gf, gal_pids, gal_cams);

        // the rank table is just the CMC vector read at those ranks
        for (const auto& [k, v] : report.rank_table)
            CHECK(v == report.cmc[std::min<int>(k, static_cast<int>(report.cmc.size())) - 1]);

        CHECK(std::abs(report.map - ref.map) < 1e-9);
        REQUIRE(report.cmc.size() == static_cast<Eigen::Index>(ref.cmc.size()));
        for (Eigen::Index k = 0; k < report.cmc.size(); ++k)
            CHECK(std::abs(report.cmc[k] - ref.cmc[static_cast<std::size_t>(k)]) < 1e-9);

        // scale invariance: scaling every feature leaves the report unchanged
        const EvalReport scaled = evaluate(as_features(3.7 * pf, "p"), probes_r, as_features(3.7 * gf, "g"),
                                           gallery_r, EvalProtocol::single_query);
        CHECK(std::abs(scaled.map - report.map) < 1e-12);
        CHECK((scaled.cmc - report.cmc).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("same-camera same-identity gallery entries are junked") {
    // probe id 1 cam 0; gallery: [id1 cam0 at distance 0] must be skipped,
    // [id1 cam1 farther] must be the hit.
    Eigen::MatrixXd pf(1, 2), gf(3, 2);
    pf << 0, 0;
    gf << 0, 0, 5, 0, 1, 1;
    auto probes = fake_records({1}, {0}, "p");
    auto gallery = fake_records({1, 2, 1}, {0, 0, 1}, "g");
    const EvalReport report = evaluate(as_features(pf, "p"), probes, as_features(gf, "g"), gallery,
                                       EvalProtocol::single_query);
    CHECK(report.cmc[0] == 1.0);  // the cam-1 twin wins rank 1 (distance 2 beats 25)
    CHECK(report.map == 1.0);
}

TEST_CASE("probes whose identity is missing from the gallery are excluded and counted") {
    Eigen::MatrixXd pf(2, 2), gf(1, 2);
    pf << 0, 0, 1, 1;
    gf << 0, 0;
    auto probes = fake_records({1, 9}, {0, 0}, "p");
    auto gallery = fake_records({1}, {1}, "g");
    const EvalReport report = evaluate(as_features(pf, "p"), probes, as_features(gf, "g"), gallery,
                                       EvalProtocol::single_query);
    CHECK(report.num_probes == 1);
    CHECK(report.num_excluded == 1);
}

TEST_CASE("multi-query pools features of a query group before ranking") {
    // two probes of the same identity+camera, the mean lands on the match
    Eigen::MatrixXd pf(2, 2), gf(2, 2);
    pf << 2, 0, 0, 2;
    gf << 1, 1, -4, -4;
    auto probes = fake_records({3, 3}, {0, 0}, "p");
    auto gallery = fake_records({3, 8}, {1, 1}, "g");
    const EvalReport report = evaluate(as_features(pf, "p"), probes, as_features(gf, "g"), gallery,
                                       EvalProtocol::multi_query);
    CHECK(report.num_probes == 1);  // one query group
    CHECK(report.cmc[0] == 1.0);
    CHECK(report.map == 1.0);
}

TEST_CASE("extract_features keeps row order and handles duplicates/empties") {
    ModelConfig mc;
    mc.input = ImageShape{8, 8, 1};
    mc.feature_dim = 8;
    mc.conv_channels = 4;
    mc.verif_hidden = 8;
    mc.num_classes = 2;
    mc.init_seed = 3;
    SiameseModel model(mc);

    SyntheticSpec spec;
    spec.num_identities = 2;
    spec.images_per_identity_per_camera = 1;
    spec.height = 8;
    spec.width = 8;
    spec.channels = 1;
    spec.seed = 66;
    const Dataset ds = generate_synthetic(spec);

    std::vector<ImageRecord> doubled{ds.records[0], ds.records[1], ds.records[0]};
    const FeatureMatrix fm = extract_features(model, doubled);
    CHECK(fm.features.rows() == 3);
    CHECK((fm.features.row(0) - fm.features.row(2)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(fm.image_ids[0] == fm.image_ids[2]);

    const FeatureMatrix empty = extract_features(model, {});
    CHECK(empty.features.rows() == 0);
    CHECK(empty.image_ids.empty());
}

TEST_CASE("feature export round-trips through the binary + sidecar format") {
    const auto dir = std::filesystem::temp_directory_path() / "reid_test_feat";
    std::filesystem::create_directories(dir);
    Rng rng(12);
    Eigen::MatrixXd rows(5, 3);
    for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = rng.normal();
    FeatureMatrix fm = as_features(rows, "img");
    write_features(fm, dir / "f.bin", dir / "f.csv");
    const FeatureMatrix back = read_features(dir / "f.bin", dir / "f.csv");
    CHECK(back.image_ids == fm.image_ids);
    CHECK((back.features - fm.features).cwiseAbs().maxCoeff() < 1e-6);  // float32 storage
}

TEST_CASE("report JSON carries the declared schema keys") {
    EvalReport report;
    report.cmc = Eigen::VectorXd::LinSpaced(4, 0.25, 1.0);
    report.rank_table = {{1, 0.25}, {5, 1.0}, {10, 1.0}, {20, 1.0}};
    report.map = 0.5;
    report.protocol = EvalProtocol::single_query;
    report.num_probes = 4;
    const std::string json = report_to_json(report);
    for (const char* key : {"\"cmc\"", "\"rank_table\"", "\"map\"", "\"protocol\"", "\"rank1\""})
        CHECK(json.find(key) != std::string::npos);
}

TEST_SUITE_END();
