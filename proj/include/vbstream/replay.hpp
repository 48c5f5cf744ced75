#pragma once

#include <cstdint>

#include "vbstream/matrix.hpp"

namespace vbs::stream {
struct StreamLedger;
}

namespace vbs::replay {

struct ReplayConfig {
    bool enabled = true;
    std::size_t samples_per_minibatch = 100;
    enum class SeedPolicy { FixedSeed, StreamDerived } seed_policy = SeedPolicy::StreamDerived;
    std::uint64_t base_seed = 0;
};

// Prepends minibatches * samples_per_minibatch decoder-mean samples from the
// current model to the stream, then shuffles rows with a stream-derived seed.
// Returns the stream unchanged when disabled or before anything was learned
// (stream index 0). Pure given the ledger snapshot.
Matrix replay_augment(const stream::StreamLedger& ledger, const Matrix& stream,
                      const ReplayConfig& cfg, std::size_t minibatches);

} // namespace vbs::replay
