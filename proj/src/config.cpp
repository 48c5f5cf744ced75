#include "vbstream/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace vbs::io {

Protocol protocol_from_string(const std::string& s) {
    if (s == "batch") return Protocol::Batch;
    if (s == "disjoint-streams") return Protocol::DisjointStreams;
    if (s == "contamination") return Protocol::Contamination;
    throw ConfigError("unknown protocol: " + s);
}

std::string protocol_to_string(Protocol p) {
    switch (p) {
        case Protocol::Batch: return "batch";
        case Protocol::DisjointStreams: return "disjoint-streams";
        case Protocol::Contamination: return "contamination";
    }
    return "batch";
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

double to_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("config key '" + key + "': bad real value '" + v + "'");
    return out;
}

std::uint64_t to_count(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("config key '" + key + "': bad count value '" + v + "'");
    return out;
}

bool to_flag(const std::string& key, const std::string& v) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw ConfigError("config key '" + key + "': bad flag value '" + v + "'");
}

std::vector<std::size_t> to_count_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_count(key, trim(item)));
    return out;
}

std::string join_counts(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::string real_to_string(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

void RunConfig::validate() const {
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (stream_size < 1) throw ConfigError("stream_size must be >= 1");
    if (minibatches < 1) throw ConfigError("minibatches must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(alpha0 > 0.0)) throw ConfigError("alpha0 must be positive");
    if (truncation_max < 1) throw ConfigError("truncation_max must be >= 1");
    if (!(birth_threshold > 0.0 && birth_threshold < 1.0))
        throw ConfigError("birth.threshold must lie in (0, 1)");
    if (birth_k_prime < 1) throw ConfigError("birth.k_prime must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
        throw ConfigError("holdout_fraction must lie in [0, 1)");
    if (activation != "tanh" && activation != "softplus")
        throw ConfigError("activation must be tanh or softplus");
    if (replay_seed_policy != "stream-derived" && replay_seed_policy != "fixed")
        throw ConfigError("replay.seed_policy must be stream-derived or fixed");
    protocol_from_string(protocol);
}

stream::EngineConfig RunConfig::engine(bool batch_mode) const {
    stream::EngineConfig e;
    e.minibatches = minibatches;
    e.vae_steps = vae_steps;
    e.passes = batch_mode ? batch_passes : 1;
    e.max_sweeps = max_sweeps;
    e.elbo_rel_tol = elbo_rel_tol;
    e.prune_enabled = prune_enabled;
    e.prune_threshold = prune_threshold;
    e.workers = workers;
    e.birth.enabled = birth_enabled;
    e.birth.collect_threshold = birth_threshold;
    e.birth.k_prime = birth_k_prime;
    e.birth.subsample_cap = birth_subsample_cap;
    e.birth.min_subsample = birth_min_subsample;
    e.birth.fit_iters = birth_fit_iters;
    e.merge.enabled = merge_enabled;
    e.merge.max_pairs = merge_max_pairs;
    e.replay.enabled = replay_enabled;
    e.replay.samples_per_minibatch = replay_samples;
    e.replay.seed_policy = replay_seed_policy == "fixed"
                               ? replay::ReplayConfig::SeedPolicy::FixedSeed
                               : replay::ReplayConfig::SeedPolicy::StreamDerived;
    e.replay.base_seed = seed;
    return e;
}

std::vector<std::size_t> RunConfig::pretrain_class_list() const {
    std::vector<std::size_t> out = to_count_list("contamination.pretrain_classes",
                                                 pretrain_classes);
    if (out.empty()) throw ConfigError("contamination.pretrain_classes must not be empty");
    return out;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (key == "latent_dim") cfg.latent_dim = to_count(key, v);
    else if (key == "data_dim") cfg.data_dim = to_count(key, v);
    else if (key == "hidden") cfg.hidden = to_count_list(key, v);
    else if (key == "activation") cfg.activation = v;
    else if (key == "stream_size") cfg.stream_size = to_count(key, v);
    else if (key == "minibatches") cfg.minibatches = to_count(key, v);
    else if (key == "vae_steps") cfg.vae_steps = to_count(key, v);
    else if (key == "batch_passes") cfg.batch_passes = to_count(key, v);
    else if (key == "batch_size") cfg.batch_size = to_count(key, v);
    else if (key == "max_sweeps") cfg.max_sweeps = to_count(key, v);
    else if (key == "elbo_rel_tol") cfg.elbo_rel_tol = to_real(key, v);
    else if (key == "learning_rate") cfg.learning_rate = to_real(key, v);
    else if (key == "lr_decay") cfg.lr_decay = to_real(key, v);
    else if (key == "alpha0") cfg.alpha0 = to_real(key, v);
    else if (key == "truncation_max") cfg.truncation_max = to_count(key, v);
    else if (key == "prune.enabled") cfg.prune_enabled = to_flag(key, v);
    else if (key == "prune.threshold") cfg.prune_threshold = to_real(key, v);
    else if (key == "birth.enabled") cfg.birth_enabled = to_flag(key, v);
    else if (key == "birth.threshold") cfg.birth_threshold = to_real(key, v);
    else if (key == "birth.k_prime") cfg.birth_k_prime = to_count(key, v);
    else if (key == "birth.subsample_cap") cfg.birth_subsample_cap = to_count(key, v);
    else if (key == "birth.min_subsample") cfg.birth_min_subsample = to_count(key, v);
    else if (key == "birth.fit_iters") cfg.birth_fit_iters = to_count(key, v);
    else if (key == "merge.enabled") cfg.merge_enabled = to_flag(key, v);
    else if (key == "merge.max_pairs") cfg.merge_max_pairs = to_count(key, v);
    else if (key == "replay.enabled") cfg.replay_enabled = to_flag(key, v);
    else if (key == "replay.samples") cfg.replay_samples = to_count(key, v);
    else if (key == "replay.seed_policy") cfg.replay_seed_policy = v;
    else if (key == "protocol") cfg.protocol = v;
    else if (key == "classes_per_stream") cfg.classes_per_stream = to_count(key, v);
    else if (key == "contamination.fraction") cfg.contamination_fraction = to_real(key, v);
    else if (key == "contamination.pretrain_classes") cfg.pretrain_classes = v;
    else if (key == "contamination.novel_class") cfg.novel_class = static_cast<int>(to_real(key, v));
    else if (key == "contamination.streams") cfg.contamination_streams = to_count(key, v);
    else if (key == "holdout_fraction") cfg.holdout_fraction = to_real(key, v);
    else if (key == "stop_after_streams") cfg.stop_after_streams = to_count(key, v);
    else if (key == "data.path") cfg.data_path = v;
    else if (key == "data.has_labels") cfg.data_has_labels = to_flag(key, v);
    else if (key == "synth.k") cfg.synth_k = to_count(key, v);
    else if (key == "synth.d") cfg.synth_d = to_count(key, v);
    else if (key == "synth.n") cfg.synth_n = to_count(key, v);
    else if (key == "synth.separation") cfg.synth_separation = to_real(key, v);
    else if (key == "seed") cfg.seed = to_count(key, v);
    else if (key == "workers") cfg.workers = static_cast<unsigned>(to_count(key, v));
    else throw ConfigError("unknown config key: " + key);
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        apply_override(base, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return base;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str());
}

std::string serialize_config(const RunConfig& c) {
    std::ostringstream out;
    out << "latent_dim = " << c.latent_dim << '\n'
        << "data_dim = " << c.data_dim << '\n'
        << "hidden = " << join_counts(c.hidden) << '\n'
        << "activation = " << c.activation << '\n'
        << "stream_size = " << c.stream_size << '\n'
        << "minibatches = " << c.minibatches << '\n'
        << "vae_steps = " << c.vae_steps << '\n'
        << "batch_passes = " << c.batch_passes << '\n'
        << "batch_size = " << c.batch_size << '\n'
        << "max_sweeps = " << c.max_sweeps << '\n'
        << "elbo_rel_tol = " << real_to_string(c.elbo_rel_tol) << '\n'
        << "learning_rate = " << real_to_string(c.learning_rate) << '\n'
        << "lr_decay = " << real_to_string(c.lr_decay) << '\n'
        << "alpha0 = " << real_to_string(c.alpha0) << '\n'
        << "truncation_max = " << c.truncation_max << '\n'
        << "prune.enabled = " << (c.prune_enabled ? "true" : "false") << '\n'
        << "prune.threshold = " << real_to_string(c.prune_threshold) << '\n'
        << "birth.enabled = " << (c.birth_enabled ? "true" : "false") << '\n'
        << "birth.threshold = " << real_to_string(c.birth_threshold) << '\n'
        << "birth.k_prime = " << c.birth_k_prime << '\n'
        << "birth.subsample_cap = " << c.birth_subsample_cap << '\n'
        << "birth.min_subsample = " << c.birth_min_subsample << '\n'
        << "birth.fit_iters = " << c.birth_fit_iters << '\n'
        << "merge.enabled = " << (c.merge_enabled ? "true" : "false") << '\n'
        << "merge.max_pairs = " << c.merge_max_pairs << '\n'
        << "replay.enabled = " << (c.replay_enabled ? "true" : "false") << '\n'
        << "replay.samples = " << c.replay_samples << '\n'
        << "replay.seed_policy = " << c.replay_seed_policy << '\n'
        << "protocol = " << c.protocol << '\n'
        << "classes_per_stream = " << c.classes_per_stream << '\n'
        << "contamination.fraction = " << real_to_string(c.contamination_fraction) << '\n'
        << "contamination.pretrain_classes = " << c.pretrain_classes << '\n'
        << "contamination.novel_class = " << c.novel_class << '\n'
        << "contamination.streams = " << c.contamination_streams << '\n'
        << "holdout_fraction = " << real_to_string(c.holdout_fraction) << '\n'
        << "stop_after_streams = " << c.stop_after_streams << '\n'
        << "data.path = " << c.data_path << '\n'
        << "data.has_labels = " << (c.data_has_labels ? "true" : "false") << '\n'
        << "synth.k = " << c.synth_k << '\n'
        << "synth.d = " << c.synth_d << '\n'
        << "synth.n = " << c.synth_n << '\n'
        << "synth.separation = " << real_to_string(c.synth_separation) << '\n'
        << "seed = " << c.seed << '\n'
        << "workers = " << c.workers << '\n';
    return out.str();
}

} // namespace vbs::io
