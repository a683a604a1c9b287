#include "reid/sampler.hpp"

#include <string>

#include "reid/errors.hpp"

namespace reid {

PairLists generate_pairs(const std::vector<int>& person_ids, Rng& rng) {
    const int n = static_cast<int>(person_ids.size());
    if (n < 2) throw SamplingError("pair generation needs at least 2 images, got " + std::to_string(n));

    PairLists out;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;  // self-pairs carry no appearance signal
            if (person_ids[static_cast<std::size_t>(i)] == person_ids[static_cast<std::size_t>(j)])
                out.positives.emplace_back(i, j);
            else
                out.negatives.emplace_back(i, j);
        }
    }
    if (out.positives.empty())
        throw SamplingError("batch has no same-identity ordered pair; cannot form positives");

    if (out.negatives.empty()) {
        out.degenerate = true;  // single identity: nothing to balance against
        return out;
    }

    const std::size_t unique_count = out.positives.size();
    while (out.positives.size() < out.negatives.size()) {
        const auto pick = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(unique_count)));
        out.positives.push_back(out.positives[pick]);
    }
    return out;
}

PairBatch sample_batch(const Dataset& ds, int k, int m, Rng& rng) {
    if (m < 2) throw SamplingError("batch.m must be >= 2 so that positive pairs exist, got " + std::to_string(m));
    if (k < 1) throw SamplingError("batch.k must be >= 1");

    // Identities with fewer than M images are excluded rather than padded.
    std::vector<int> eligible;
    for (const auto& [pid, rows] : ds.by_identity())
        if (static_cast<int>(rows.size()) >= m) eligible.push_back(pid);
    if (static_cast<int>(eligible.size()) < k)
        throw SamplingError("dataset '" + ds.name + "' has " + std::to_string(eligible.size()) +
                            " identities with >= " + std::to_string(m) + " images, need " + std::to_string(k));

    PairBatch batch;
    batch.seed_state = rng.state_token();

    const auto id_picks = rng.sample_without_replacement(static_cast<int>(eligible.size()), k);
    std::vector<int> person_ids;
    person_ids.reserve(static_cast<std::size_t>(k) * m);
    for (int pick : id_picks) {
        const int pid = eligible[static_cast<std::size_t>(pick)];
        const auto& rows = ds.by_identity().at(pid);
        const auto img_picks = rng.sample_without_replacement(static_cast<int>(rows.size()), m);
        for (int ip : img_picks) {
            batch.image_rows.push_back(rows[static_cast<std::size_t>(ip)]);
            person_ids.push_back(pid);
        }
    }

    auto pairs = generate_pairs(person_ids, rng);
    batch.positive_pairs = std::move(pairs.positives);
    batch.negative_pairs = std::move(pairs.negatives);
    batch.degenerate = pairs.degenerate;
    return batch;
}

}  // namespace reid
