#include "vbstream/replay.hpp"

#include "vbstream/dpmm.hpp"
#include "vbstream/stream.hpp"

namespace vbs::replay {

Matrix replay_augment(const stream::StreamLedger& ledger, const Matrix& stream,
                      const ReplayConfig& cfg, std::size_t minibatches) {
    if (!cfg.enabled || ledger.stream_index == 0 || cfg.samples_per_minibatch == 0 ||
        minibatches == 0)
        return stream;
    if (ledger.model.cluster_count() == 0)
        throw StateError("replay_augment: model has no clusters");

    const std::uint64_t sample_seed =
        cfg.seed_policy == ReplayConfig::SeedPolicy::FixedSeed
            ? cfg.base_seed
            : mix_seed(cfg.base_seed, ledger.stream_index);
    const std::size_t count = minibatches * cfg.samples_per_minibatch;
    Matrix generated = dpmm::sample_generative(ledger.model, ledger.codec, count, sample_seed);

    Matrix merged = generated;
    merged.append_rows(stream);

    // Shuffle so replayed rows spread across the mini-batch split.
    Rng shuffle_rng(mix_seed(cfg.base_seed ^ 0x7265706c6179ULL, ledger.stream_index));
    const std::size_t n = merged.rows();
    for (std::size_t i = n; i-- > 1;) {
        const std::size_t swap_with = shuffle_rng.below(i + 1);
        if (swap_with == i) continue;
        for (std::size_t c = 0; c < merged.cols(); ++c) {
            const double tmp = merged(i, c);
            merged(i, c) = merged(swap_with, c);
            merged(swap_with, c) = tmp;
        }
    }
    return merged;
}

} // namespace vbs::replay
