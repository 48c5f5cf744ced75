#include "vbstream/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

#include "vbstream/checkpoint.hpp"

namespace vbs::io {

namespace {

std::string real_text(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct StreamPlan {
    std::vector<std::size_t> rows;  // dataset row indices, in stream order
    std::vector<int> novel_classes; // classes first introduced by this stream
};

struct ProtocolPlan {
    std::vector<StreamPlan> streams;
    std::vector<std::size_t> eval_rows; // rows used for the final metric block
    std::set<int> novel_labels;         // labels whose detection is reported
    bool batch_mode = false;
};

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(rows[r], c);
    return out;
}

void shuffle_rows(std::vector<std::size_t>& rows, Rng& rng) {
    for (std::size_t i = rows.size(); i-- > 1;) std::swap(rows[i], rows[rng.below(i + 1)]);
}

std::map<int, std::vector<std::size_t>> rows_by_class(const std::vector<int>& labels) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    return by_class;
}

// Per-class split into train/holdout; the holdout takes the tail.
void split_holdout(const std::map<int, std::vector<std::size_t>>& by_class, double fraction,
                   std::map<int, std::vector<std::size_t>>& train,
                   std::vector<std::size_t>& holdout) {
    for (const auto& [label, rows] : by_class) {
        const std::size_t keep =
            rows.size() - static_cast<std::size_t>(std::floor(fraction * rows.size()));
        train[label].assign(rows.begin(), rows.begin() + keep);
        holdout.insert(holdout.end(), rows.begin() + keep, rows.end());
    }
}

ProtocolPlan plan_batch(const Dataset& data, const RunConfig& cfg) {
    ProtocolPlan plan;
    plan.batch_mode = true;
    StreamPlan s;
    s.rows.resize(data.x.rows());
    for (std::size_t i = 0; i < s.rows.size(); ++i) s.rows[i] = i;
    Rng rng(mix_seed(cfg.seed, 100));
    shuffle_rows(s.rows, rng);
    plan.streams.push_back(std::move(s));
    plan.eval_rows = plan.streams.front().rows;
    return plan;
}

ProtocolPlan plan_disjoint(const Dataset& data, const RunConfig& cfg) {
    if (!data.has_labels)
        throw ConfigError("disjoint-streams protocol requires labeled data");
    ProtocolPlan plan;
    auto by_class = rows_by_class(data.labels);
    std::map<int, std::vector<std::size_t>> train;
    split_holdout(by_class, cfg.holdout_fraction, train, plan.eval_rows);

    std::vector<int> classes;
    for (const auto& [label, rows] : by_class) classes.push_back(label);
    std::sort(classes.begin(), classes.end());

    const std::size_t per = std::max<std::size_t>(1, cfg.classes_per_stream);
    for (std::size_t start = 0; start < classes.size(); start += per) {
        StreamPlan s;
        for (std::size_t c = start; c < std::min(start + per, classes.size()); ++c) {
            const auto& rows = train[classes[c]];
            s.rows.insert(s.rows.end(), rows.begin(), rows.end());
            s.novel_classes.push_back(classes[c]);
            if (start > 0) plan.novel_labels.insert(classes[c]);
        }
        Rng rng(mix_seed(cfg.seed, 100 + plan.streams.size()));
        shuffle_rows(s.rows, rng);
        plan.streams.push_back(std::move(s));
    }
    return plan;
}

ProtocolPlan plan_contamination(const Dataset& data, const RunConfig& cfg) {
    if (!data.has_labels)
        throw ConfigError("contamination protocol requires labeled data");
    if (!(cfg.contamination_fraction > 0.0 && cfg.contamination_fraction <= 1.0))
        throw ConfigError("contamination.fraction must lie in (0, 1]");
    ProtocolPlan plan;
    auto by_class = rows_by_class(data.labels);
    std::map<int, std::vector<std::size_t>> train;
    // Final metrics come from the held-out split so precision against the
    // pretraining classes stays meaningful.
    split_holdout(by_class, cfg.holdout_fraction, train, plan.eval_rows);

    std::set<int> pretrain;
    for (std::size_t c : cfg.pretrain_class_list()) pretrain.insert(static_cast<int>(c));
    int novel = cfg.novel_class;
    if (novel < 0) {
        for (const auto& [label, rows] : by_class)
            if (!pretrain.count(label)) {
                novel = label;
                break;
            }
    }
    if (novel < 0 || !by_class.count(novel))
        throw ConfigError("contamination: no held-out class available");
    plan.novel_labels.insert(novel);

    // Stream 0: pretraining on the in-set classes.
    StreamPlan warm;
    for (int label : pretrain) {
        if (!train.count(label))
            throw ConfigError("contamination: pretrain class " + std::to_string(label) +
                              " absent from data");
        const auto& rows = train[label];
        warm.rows.insert(warm.rows.end(), rows.begin(), rows.end());
    }
    {
        Rng rng(mix_seed(cfg.seed, 100));
        shuffle_rows(warm.rows, rng);
    }
    plan.streams.push_back(std::move(warm));

    // Contaminated streams.
    std::vector<std::size_t> novel_pool = train[novel];
    std::vector<std::size_t> base_pool;
    for (int label : pretrain) {
        const auto& rows = train[label];
        base_pool.insert(base_pool.end(), rows.begin(), rows.end());
    }
    {
        Rng rng(mix_seed(cfg.seed, 101));
        shuffle_rows(novel_pool, rng);
        shuffle_rows(base_pool, rng);
    }
    std::size_t novel_cursor = 0, base_cursor = 0;
    for (std::size_t s = 0; s < cfg.contamination_streams; ++s) {
        StreamPlan sp;
        sp.novel_classes.push_back(novel);
        const auto n_novel = static_cast<std::size_t>(
            std::llround(cfg.contamination_fraction * static_cast<double>(cfg.stream_size)));
        for (std::size_t i = 0; i < n_novel && !novel_pool.empty(); ++i) {
            sp.rows.push_back(novel_pool[novel_cursor % novel_pool.size()]);
            ++novel_cursor;
        }
        while (sp.rows.size() < cfg.stream_size && !base_pool.empty()) {
            sp.rows.push_back(base_pool[base_cursor % base_pool.size()]);
            ++base_cursor;
        }
        Rng rng(mix_seed(cfg.seed, 102 + s));
        shuffle_rows(sp.rows, rng);
        plan.streams.push_back(std::move(sp));
    }
    return plan;
}

Dataset build_dataset(const RunConfig& cfg) {
    if (!cfg.data_path.empty()) return load_dataset(cfg.data_path, cfg.data_has_labels);
    const GmmSample sample =
        make_gmm(mix_seed(cfg.seed, 1), cfg.synth_k, cfg.synth_d, cfg.synth_n,
                 cfg.synth_separation);
    Dataset ds;
    ds.x = sample.x;
    ds.labels = sample.labels;
    ds.has_labels = true;
    return ds;
}

} // namespace

std::vector<int> assign_clusters(const stream::StreamLedger& ledger, const Matrix& x,
                                 unsigned workers) {
    const Matrix z = vae::encode(ledger.codec, x).mu;
    const dpmm::Responsibilities gamma = dpmm::local_update(z, ledger.model, workers);
    std::vector<int> out(x.rows(), 0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < gamma.clusters(); ++k)
            if (gamma.gamma(r, k) > gamma.gamma(r, best)) best = k;
        out[r] = static_cast<int>(best);
    }
    return out;
}

RunOutcome run_protocol(const RunConfig& cfg, const std::string& checkpoint_path, bool resume) {
    cfg.validate();
    const Protocol protocol = protocol_from_string(cfg.protocol);
    const Dataset data = build_dataset(cfg);
    if (cfg.data_dim != 0 && cfg.data_dim != data.x.cols())
        throw ConfigError("data_dim does not match the dataset width");

    ProtocolPlan plan;
    switch (protocol) {
        case Protocol::Batch: plan = plan_batch(data, cfg); break;
        case Protocol::DisjointStreams: plan = plan_disjoint(data, cfg); break;
        case Protocol::Contamination: plan = plan_contamination(data, cfg); break;
    }

    RunOutcome out;
    out.config = cfg;
    std::vector<std::string> report_lines;

    const bool have_checkpoint =
        resume && !checkpoint_path.empty() && std::filesystem::exists(checkpoint_path);
    if (have_checkpoint) {
        Checkpoint ckpt = load_checkpoint(checkpoint_path);
        // The stop marker is the one key a resumed run legitimately changes.
        RunConfig theirs = ckpt.config;
        RunConfig ours = cfg;
        theirs.stop_after_streams = 0;
        ours.stop_after_streams = 0;
        if (serialize_config(theirs) != serialize_config(ours))
            throw ConfigError("resume: checkpoint was created with a different config");
        out.ledger = std::move(ckpt.ledger);
        report_lines = std::move(ckpt.report_lines);
    } else {
        const auto prior = dpmm::NWPrior::default_for_dim(cfg.latent_dim);
        auto model = dpmm::DpmmModel::init(prior, cfg.alpha0, cfg.truncation_max);
        Rng init_rng(mix_seed(cfg.seed, 2));
        auto codec = vae::LatentCodec::init(
            data.x.cols(), cfg.latent_dim, cfg.hidden,
            cfg.activation == "softplus" ? vae::Activation::Softplus : vae::Activation::Tanh,
            init_rng);
        auto opt = vae::AdamState::init(codec, cfg.learning_rate, cfg.lr_decay);
        out.ledger =
            stream::StreamLedger::init(std::move(model), std::move(codec), std::move(opt),
                                       mix_seed(cfg.seed, 3));
    }

    const std::size_t stream_budget = cfg.stop_after_streams == 0
                                          ? plan.streams.size()
                                          : std::min(cfg.stop_after_streams, plan.streams.size());
    while (out.ledger.stream_index < stream_budget) {
        const std::size_t j = out.ledger.stream_index;
        stream::EngineConfig engine = cfg.engine(plan.batch_mode);
        const Matrix stream_x = gather_rows(data.x, plan.streams[j].rows);
        if (plan.batch_mode) {
            engine.minibatches = std::max<std::size_t>(
                1, (stream_x.rows() + cfg.batch_size - 1) / cfg.batch_size);
        }
        stream::run_stream(out.ledger, stream_x, engine);

        report_lines.push_back("stream " + std::to_string(j));
        for (const auto& e : out.ledger.last_stream_events)
            report_lines.push_back("  sweep " + std::to_string(e.sweep) + " elbo=" +
                                   real_text(e.elbo) + " clusters=" +
                                   std::to_string(e.clusters) + " births=" +
                                   std::to_string(e.births) + " merges=" +
                                   std::to_string(e.merges));
        for (const auto& note : out.ledger.notices)
            report_lines.push_back("  notice " + note);
        out.ledger.notices.clear();
        report_lines.push_back("end_stream");

        if (!checkpoint_path.empty()) {
            Checkpoint ckpt;
            ckpt.config = cfg;
            // The ledger holds no mid-stream state here; copy what the
            // checkpoint needs and keep training state in `out`.
            ckpt.ledger = out.ledger;
            ckpt.report_lines = report_lines;
            save_checkpoint(checkpoint_path, ckpt);
        }
    }

    // Final evaluation block.
    std::ostringstream rep;
    rep << "vbstream run report\n";
    rep << "format = 1\n";
    rep << "protocol = " << cfg.protocol << '\n';
    rep << "config_begin\n" << serialize_config(cfg) << "config_end\n";
    for (const auto& line : report_lines) rep << line << '\n';

    const bool interrupted = out.ledger.stream_index < plan.streams.size();
    rep << "streams_completed = " << out.ledger.stream_index << '\n';
    if (!interrupted && data.has_labels && !plan.eval_rows.empty()) {
        const Matrix eval_x = gather_rows(data.x, plan.eval_rows);
        out.eval_pred = assign_clusters(out.ledger, eval_x, cfg.workers);
        out.eval_truth.reserve(plan.eval_rows.size());
        for (std::size_t r : plan.eval_rows) out.eval_truth.push_back(data.labels[r]);

        out.nmi = metrics::nmi(out.eval_truth, out.eval_pred);
        out.ari = metrics::ari(out.eval_truth, out.eval_pred);
        out.hs = metrics::homogeneity(out.eval_truth, out.eval_pred);
        out.vm = metrics::v_measure(out.eval_truth, out.eval_pred);
        rep << "metrics\n";
        rep << "  nmi = " << real_text(out.nmi) << '\n';
        rep << "  ari = " << real_text(out.ari) << '\n';
        rep << "  hs = " << real_text(out.hs) << '\n';
        rep << "  vm = " << real_text(out.vm) << '\n';
        rep << "  clusters = " << out.ledger.model.cluster_count() << '\n';

        // Normalized absorbed mass per cluster.
        double total_mass = 0.0;
        for (std::size_t k = 0; k < out.ledger.model.cluster_count(); ++k)
            total_mass += out.ledger.model.cluster_priors[k].beta0 -
                          out.ledger.model.prior.beta0;
        for (std::size_t k = 0; k < out.ledger.model.cluster_count(); ++k) {
            const double mass = (out.ledger.model.cluster_priors[k].beta0 -
                                 out.ledger.model.prior.beta0) /
                                (total_mass > 0.0 ? total_mass : 1.0);
            out.cluster_mass.push_back(mass);
            rep << "  mass." << k << " = " << real_text(mass) << '\n';
        }
        rep << "end_metrics\n";

        // Per-class recall under the majority-label mapping.
        {
            std::map<int, std::map<int, std::size_t>> tallies;
            for (std::size_t i = 0; i < out.eval_truth.size(); ++i)
                tallies[out.eval_pred[i]][out.eval_truth[i]] += 1;
            std::map<int, int> majority;
            for (const auto& [cluster, by_label] : tallies) {
                int best = 0;
                std::size_t best_count = 0;
                for (const auto& [label, count] : by_label)
                    if (count > best_count) {
                        best_count = count;
                        best = label;
                    }
                majority[cluster] = best;
            }
            std::map<int, std::size_t> hits, totals;
            for (std::size_t i = 0; i < out.eval_truth.size(); ++i) {
                totals[out.eval_truth[i]] += 1;
                if (majority[out.eval_pred[i]] == out.eval_truth[i]) hits[out.eval_truth[i]] += 1;
            }
            rep << "class_recall\n";
            for (const auto& [label, total] : totals) {
                out.class_recall[label] =
                    static_cast<double>(hits[label]) / static_cast<double>(total);
                rep << "  class " << label << " recall=" << real_text(out.class_recall[label])
                    << '\n';
            }
            rep << "end_class_recall\n";
        }

        if (!plan.novel_labels.empty()) {
            out.novelty =
                metrics::novelty_precision_recall(out.eval_truth, out.eval_pred,
                                                  plan.novel_labels);
            rep << "novelty\n";
            for (const auto& n : out.novelty)
                rep << "  label " << n.label << " precision=" << real_text(n.precision)
                    << " recall=" << real_text(n.recall)
                    << " flagged=" << (n.no_novel_cluster ? 1 : 0) << '\n';
            rep << "end_novelty\n";
        }
    }
    rep << "end_report\n";
    out.report_text = rep.str();
    return out;
}

} // namespace vbs::io
