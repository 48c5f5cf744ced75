#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vbstream/dpmm.hpp"
#include "vbstream/matrix.hpp"
#include "vbstream/replay.hpp"
#include "vbstream/rng.hpp"
#include "vbstream/vae.hpp"

namespace vbs::stream {

// Three-level sufficient statistics: per-mini-batch slots, their running sum
// for the live stream, and the overall total across absorbed streams.
struct StatScope {
    bool stream_active = false;
    bool ever_started = false;
    std::size_t stream_id = 0;
    std::vector<dpmm::SuffStats> minibatch;
    dpmm::SuffStats stream;
    dpmm::SuffStats overall;

    void begin_stream(std::size_t j, std::size_t minibatches, std::size_t clusters,
                      std::size_t dim);
    void append_clusters(std::size_t count, std::size_t dim);
    void remove_cluster(std::size_t k);
    void merge_clusters(std::size_t dst, std::size_t src);

    // Largest absolute mismatch between the stream slot sums and the cached
    // stream statistics (conservation diagnostic).
    double conservation_error() const;
};

// Subtract the old (j, i) summary, store the new one, add it back.
void stats_cycle(StatScope& scope, std::size_t j, std::size_t i, dpmm::SuffStats new_batch_stats);

// Overall stats absorb the finished stream; per-stream slots are cleared.
void finalize_stream(StatScope& scope);

struct BirthConfig {
    bool enabled = true;
    double collect_threshold = 0.1;
    std::size_t k_prime = 10;
    std::size_t subsample_cap = 500;
    std::size_t min_subsample = 50;
    std::size_t fit_iters = 50;
};

struct MergeConfig {
    bool enabled = true;
    std::size_t max_pairs = 3;
};

struct EngineConfig {
    std::size_t minibatches = 2;
    std::size_t vae_steps = 10;
    std::size_t passes = 1; // >1 only makes sense for batch-style runs
    std::size_t max_sweeps = 20;
    double elbo_rel_tol = 1e-6;
    bool prune_enabled = true;
    double prune_threshold = 0.01;
    unsigned workers = 1;
    BirthConfig birth;
    MergeConfig merge;
    replay::ReplayConfig replay;
};

// One structured record per sweep of the inner loop.
struct StreamEvent {
    std::size_t sweep = 0;
    double elbo = 0.0;
    std::size_t clusters = 0;
    std::size_t births = 0;
    std::size_t merges = 0;
};

// Cached latents and responsibilities for the stream currently in memory;
// row order concatenates the minibatch slots.
struct StreamWork {
    std::vector<Matrix> z;
    std::vector<dpmm::Responsibilities> gamma;

    bool staged() const;
    Matrix concat_z() const;
    dpmm::Responsibilities concat_gamma() const;
    void clear() {
        z.clear();
        gamma.clear();
    }
};

// Everything carried between data streams. The per-cluster priors inside the
// model are the posterior snapshot of the previous streams (the sequential
// Bayes rule); the scope holds the statistics hierarchy.
struct StreamLedger {
    dpmm::DpmmModel model;
    vae::LatentCodec codec;
    vae::AdamState opt;
    StatScope scope;
    std::size_t stream_index = 0;
    Rng rng;
    StreamWork work;
    std::vector<StreamEvent> last_stream_events;
    std::vector<std::string> notices;

    static StreamLedger init(dpmm::DpmmModel model, vae::LatentCodec codec, vae::AdamState opt,
                             std::uint64_t seed);
};

// Each cluster's current posterior becomes its own prior; stick parameters
// carry forward as pseudo-counts. Requires the stream to be finalized.
void absorb_posterior_as_prior(StreamLedger& ledger);

// Encodes nothing: loads already-latent data as the live stream (local
// updates, statistics cycles, one global refresh). Used by tests and by
// engine-internal passes that work directly in latent space.
void stage_stream_latents(StreamLedger& ledger, const Matrix& z, std::size_t minibatches,
                          unsigned workers = 1);

// Expansion proposal: for each existing cluster, collect the rows it claims
// with probability above the threshold, fit a fresh truncated model to that
// subsample, append the fitted components, then re-sweep the staged stream.
// Returns the number of clusters added.
std::size_t birth_move(StreamLedger& ledger, const BirthConfig& cfg, unsigned workers = 1);

// Tries the top-scoring cluster pairs; a merge is kept only when the DPMM
// ELBO over the staged stream strictly improves. Returns accepted count.
std::size_t merge_move(StreamLedger& ledger, const MergeConfig& cfg);

// Drops clusters whose absorbed-plus-current mass falls below the threshold.
// Returns the number removed.
std::size_t prune_degenerate(StreamLedger& ledger, double threshold);

// One full Algorithm-style stream: replay augmentation, per-mini-batch codec
// updates, the inner DPMM loop with statistics cycles, birth and merge
// proposals, finalize, absorb.
void run_stream(StreamLedger& ledger, const Matrix& stream_x, const EngineConfig& cfg);

// Fits a fresh truncated model on a data block (used by birth proposals):
// cluster means seeded from rows, then plain local/global iterations.
dpmm::DpmmModel fit_fresh_dpmm(const Matrix& z, std::size_t components, std::size_t iters,
                               const dpmm::NWPrior& base, double alpha0, Rng& rng);

} // namespace vbs::stream
