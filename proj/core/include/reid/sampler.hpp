#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "reid/dataset.hpp"
#include "reid/rng.hpp"

namespace reid {

// Ordered (i, j) index pairs into a batch's image list. Pairs are ordered on
// purpose: the verification subnet's subtract-then-ReLU is not symmetric, and
// only ordered counting reproduces the balanced pair totals.
using IndexPair = std::pair<int, int>;

struct PairLists {
    std::vector<IndexPair> positives;  // same identity, i != j; duplicated up to |negatives|
    std::vector<IndexPair> negatives;  // different identity
    // Set when the batch holds a single identity: positives exist but there is
    // no balancing target, and no duplication is performed.
    bool degenerate = false;
};

struct PairBatch {
    std::vector<int> image_rows;  // K*M record indices into the source dataset
    std::vector<IndexPair> positive_pairs;
    std::vector<IndexPair> negative_pairs;
    bool degenerate = false;
    std::uint64_t seed_state = 0;  // RNG state token at sampling time
};

// Exhaustive ordered pairs for a batch: all cross-identity pairs as negatives,
// all same-identity pairs as positives, then positives duplicated uniformly at
// random (with replacement from the unique list) until the counts balance.
PairLists generate_pairs(const std::vector<int>& person_ids, Rng& rng);

// Identity-balanced minibatch: K identities drawn without replacement among
// those with at least M images, M images each without replacement, followed by
// generate_pairs over the K*M images.
PairBatch sample_batch(const Dataset& ds, int k, int m, Rng& rng);

}  // namespace reid
