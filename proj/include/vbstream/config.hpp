#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vbstream/errors.hpp"
#include "vbstream/stream.hpp"

namespace vbs::io {

enum class Protocol { Batch, DisjointStreams, Contamination };

Protocol protocol_from_string(const std::string& s);
std::string protocol_to_string(Protocol p);

// Flat dotted-key configuration shared by the CLI and the protocol runner.
struct RunConfig {
    // Model and codec shape.
    std::size_t latent_dim = 2;
    std::size_t data_dim = 0; // 0: taken from the dataset
    std::vector<std::size_t> hidden = {64, 32};
    std::string activation = "tanh";

    // Streaming schedule.
    std::size_t stream_size = 1000;
    std::size_t minibatches = 2;
    std::size_t vae_steps = 10;
    std::size_t batch_passes = 8;
    std::size_t batch_size = 1500; // mini-batch size for the batch protocol
    std::size_t max_sweeps = 20;
    double elbo_rel_tol = 1e-6;

    // Optimizer.
    double learning_rate = 2e-3;
    double lr_decay = 0.9;

    // DPMM.
    double alpha0 = 1.0;
    std::size_t truncation_max = 50;
    bool prune_enabled = true;
    double prune_threshold = 0.01;

    // Moves.
    bool birth_enabled = true;
    double birth_threshold = 0.1;
    std::size_t birth_k_prime = 10;
    std::size_t birth_subsample_cap = 500;
    std::size_t birth_min_subsample = 50;
    std::size_t birth_fit_iters = 50;
    bool merge_enabled = true;
    std::size_t merge_max_pairs = 3;

    // Replay.
    bool replay_enabled = true;
    std::size_t replay_samples = 100;
    std::string replay_seed_policy = "stream-derived"; // or "fixed"

    // Protocol composition.
    std::string protocol = "batch";
    std::size_t classes_per_stream = 2;
    double contamination_fraction = 0.05;
    std::string pretrain_classes = "0,1";
    int novel_class = -1; // -1: smallest class not in pretrain set
    std::size_t contamination_streams = 1;
    double holdout_fraction = 0.2;
    std::size_t stop_after_streams = 0; // 0: run everything (used to test resume)

    // Data source: CSV path or synthetic generator.
    std::string data_path;
    bool data_has_labels = true;
    std::size_t synth_k = 5;
    std::size_t synth_d = 2;
    std::size_t synth_n = 2000;
    double synth_separation = 10.0;

    std::uint64_t seed = 0;
    unsigned workers = 1;

    void validate() const;
    stream::EngineConfig engine(bool batch_mode) const;
    std::vector<std::size_t> pretrain_class_list() const;
};

// key = value lines, '#' comments, unknown keys rejected.
RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text, RunConfig base = {});
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Canonical serialization: every key on its own line in fixed order.
std::string serialize_config(const RunConfig& cfg);

} // namespace vbs::io
