#include <doctest.h>

#include <map>

#include "reid/errors.hpp"
#include "reid/sampler.hpp"

using namespace reid;

namespace {

// Independent ordered-pair enumerator over a label list.
struct PairCounts {
    long positives = 0;
    long negatives = 0;
};

PairCounts brute_force_counts(const std::vector<int>& ids) {
    PairCounts c;
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < ids.size(); ++j) {
            if (i == j) continue;
            if (ids[i] == ids[j]) ++c.positives;
            else ++c.negatives;
        }
    return c;
}

Dataset toy_dataset(int identities, int images_per_id) {
    SyntheticSpec spec;
    spec.num_identities = identities;
    spec.images_per_identity_per_camera = images_per_id;
    spec.num_cameras = 1;
    spec.height = 4;
    spec.width = 4;
    spec.channels = 1;
    spec.seed = 17;
    return generate_synthetic(spec);
}

}  // namespace

TEST_SUITE_BEGIN("sampler");

TEST_CASE("K=32, M=2 reproduces the balanced 3968-pair batch") {
    const Dataset ds = toy_dataset(40, 2);
    Rng rng(123);
    const PairBatch batch = sample_batch(ds, 32, 2, rng);
    CHECK(batch.image_rows.size() == 64);
    CHECK(batch.negative_pairs.size() == 3968);
    CHECK(batch.positive_pairs.size() == 3968);
    CHECK_FALSE(batch.degenerate);

    // the first 64 positives are the exhaustive unique ones
    std::map<IndexPair, int> unique;
    for (std::size_t i = 0; i < 64; ++i) unique[batch.positive_pairs[i]]++;
    CHECK(unique.size() == 64);
    // every duplicated entry is a copy of an existing positive
    for (const auto& p : batch.positive_pairs) CHECK(unique.count(p) == 1);
}

TEST_CASE("pair counts match the brute-force enumerator for K<=5, M<=4") {
    for (int k = 1; k <= 5; ++k) {
        for (int m = 2; m <= 4; ++m) {
            const Dataset ds = toy_dataset(k + 2, m);
            Rng rng(static_cast<std::uint64_t>(k * 100 + m));
            const PairBatch batch = sample_batch(ds, k, m, rng);
            const long km = static_cast<long>(k) * m;

            std::vector<int> ids;
            for (int row : batch.image_rows) ids.push_back(*ds.records[static_cast<std::size_t>(row)].person_id);
            const PairCounts expect = brute_force_counts(ids);

            CHECK(expect.negatives == km * (km - 1) - km * (m - 1));
            CHECK(expect.positives == km * (m - 1));
            CHECK(static_cast<long>(batch.negative_pairs.size()) == expect.negatives);
            if (k == 1) {
                CHECK(batch.degenerate);
                CHECK(static_cast<long>(batch.positive_pairs.size()) == expect.positives);
            } else {
                CHECK(static_cast<long>(batch.positive_pairs.size()) == expect.negatives);  // balanced
            }

            // pair labels are consistent with identities
            for (const auto& [i, j] : batch.positive_pairs) {
                CHECK(i != j);
                CHECK(ids[static_cast<std::size_t>(i)] == ids[static_cast<std::size_t>(j)]);
            }
            for (const auto& [i, j] : batch.negative_pairs)
                CHECK(ids[static_cast<std::size_t>(i)] != ids[static_cast<std::size_t>(j)]);
        }
    }
}

TEST_CASE("equal seed gives identical batches") {
    const Dataset ds = toy_dataset(6, 3);
    Rng r1(42), r2(42);
    const PairBatch a = sample_batch(ds, 3, 2, r1);
    const PairBatch b = sample_batch(ds, 3, 2, r2);
    CHECK(a.image_rows == b.image_rows);
    CHECK(a.positive_pairs == b.positive_pairs);
    CHECK(a.negative_pairs == b.negative_pairs);
    CHECK(a.seed_state == b.seed_state);
}

TEST_CASE("generate_pairs on 2x2 batch balances 4 positives up to 8") {
    std::vector<int> ids{0, 0, 1, 1};
    Rng rng(9);
    const PairLists pairs = generate_pairs(ids, rng);
    CHECK(pairs.negatives.size() == 8);
    CHECK(pairs.positives.size() == 8);
    std::map<IndexPair, int> unique;
    for (std::size_t i = 0; i < 4; ++i) unique[pairs.positives[i]]++;
    CHECK(unique.size() == 4);
}

TEST_CASE("single-identity batch is flagged degenerate") {
    std::vector<int> ids{5, 5, 5};
    Rng rng(1);
    const PairLists pairs = generate_pairs(ids, rng);
    CHECK(pairs.degenerate);
    CHECK(pairs.positives.size() == 6);
    CHECK(pairs.negatives.empty());
}

TEST_CASE("error paths") {
    const Dataset ds = toy_dataset(3, 2);
    Rng rng(5);
    CHECK_THROWS_AS(sample_batch(ds, 2, 1, rng), SamplingError);   // M < 2
    CHECK_THROWS_AS(sample_batch(ds, 9, 2, rng), SamplingError);   // not enough identities
    std::vector<int> lonely{0, 1};
    CHECK_THROWS_AS(generate_pairs(lonely, rng), SamplingError);   // no positive pair
}

TEST_SUITE_END();
