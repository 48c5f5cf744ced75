// Command-line front end: train / generate / assign / evaluate / synth.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "vbstream/checkpoint.hpp"
#include "vbstream/config.hpp"
#include "vbstream/dataset.hpp"
#include "vbstream/metrics.hpp"
#include "vbstream/protocol.hpp"

using namespace vbs;

namespace {

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write output file: " + path);
    out << text;
}

io::RunConfig assemble_config(const std::string& config_path,
                              const std::vector<std::string>& overrides) {
    io::RunConfig cfg;
    if (!config_path.empty()) cfg = io::parse_config_file(config_path);
    for (const auto& kv : overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override must look like key=value: " + kv);
        io::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

std::string metrics_report(const std::vector<int>& truth, const std::vector<int>& pred,
                           const std::set<int>& novel) {
    char buf[40];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    std::string out = "metrics\n";
    out += "  nmi = " + fmt(metrics::nmi(truth, pred)) + "\n";
    out += "  ari = " + fmt(metrics::ari(truth, pred)) + "\n";
    out += "  hs = " + fmt(metrics::homogeneity(truth, pred)) + "\n";
    out += "  vm = " + fmt(metrics::v_measure(truth, pred)) + "\n";
    out += "end_metrics\n";
    if (!novel.empty()) {
        out += "novelty\n";
        for (const auto& n : metrics::novelty_precision_recall(truth, pred, novel))
            out += "  label " + std::to_string(n.label) + " precision=" + fmt(n.precision) +
                   " recall=" + fmt(n.recall) + " flagged=" + (n.no_novel_cluster ? "1" : "0") +
                   "\n";
        out += "end_novelty\n";
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"streaming variational Bayes clustering"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "run a training protocol");
    std::string train_config, train_report = "-", train_checkpoint;
    std::vector<std::string> train_sets;
    bool train_resume = false;
    bool replay_on = false, replay_off = false;
    std::size_t replay_samples_flag = 0;
    train->add_option("--config", train_config, "config file (key = value lines)");
    train->add_option("--set", train_sets, "override a config key (key=value)");
    train->add_option("--report", train_report, "report output path ('-' for stdout)");
    train->add_option("--checkpoint", train_checkpoint, "checkpoint path (written per stream)");
    train->add_flag("--resume", train_resume, "continue from the checkpoint if present");
    train->add_flag("--replay", replay_on, "force generative replay on");
    train->add_flag("--no-replay", replay_off, "force generative replay off");
    train->add_option("--replay-samples", replay_samples_flag,
                      "generated samples per mini-batch");

    // generate
    auto* generate = app.add_subcommand("generate", "sample from a checkpoint");
    std::string gen_checkpoint, gen_out = "-";
    std::size_t gen_n = 100;
    std::uint64_t gen_seed = 0;
    generate->add_option("--checkpoint", gen_checkpoint)->required();
    generate->add_option("--n", gen_n, "number of samples");
    generate->add_option("--seed", gen_seed);
    generate->add_option("--out", gen_out, "CSV output path");

    // assign
    auto* assign = app.add_subcommand("assign", "cluster new data from a checkpoint");
    std::string as_checkpoint, as_data, as_out = "-";
    bool as_labeled = false;
    assign->add_option("--checkpoint", as_checkpoint)->required();
    assign->add_option("--data", as_data)->required();
    assign->add_flag("--has-labels", as_labeled, "data carries a trailing label column");
    assign->add_option("--out", as_out, "cluster id output path (one per line)");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "metrics from two label files");
    std::string ev_truth, ev_pred, ev_out = "-", ev_novel;
    evaluate->add_option("--truth", ev_truth)->required();
    evaluate->add_option("--pred", ev_pred)->required();
    evaluate->add_option("--novel", ev_novel, "comma-separated novel labels");
    evaluate->add_option("--out", ev_out);

    // synth
    auto* synth = app.add_subcommand("synth", "write a synthetic Gaussian mixture CSV");
    std::string sy_out;
    std::uint64_t sy_seed = 0;
    std::size_t sy_k = 5, sy_d = 2, sy_n = 2000;
    double sy_sep = 10.0;
    synth->add_option("--out", sy_out)->required();
    synth->add_option("--seed", sy_seed);
    synth->add_option("--k", sy_k);
    synth->add_option("--d", sy_d);
    synth->add_option("--n", sy_n);
    synth->add_option("--sep", sy_sep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*train) {
            io::RunConfig cfg = assemble_config(train_config, train_sets);
            if (replay_on && replay_off) throw ConfigError("--replay conflicts with --no-replay");
            if (replay_on) cfg.replay_enabled = true;
            if (replay_off) cfg.replay_enabled = false;
            if (replay_samples_flag > 0) cfg.replay_samples = replay_samples_flag;
            const io::RunOutcome outcome =
                io::run_protocol(cfg, train_checkpoint, train_resume);
            write_text(train_report, outcome.report_text);
        } else if (*generate) {
            const io::Checkpoint ckpt = io::load_checkpoint(gen_checkpoint);
            const Matrix samples =
                dpmm::sample_generative(ckpt.ledger.model, ckpt.ledger.codec, gen_n, gen_seed);
            io::save_dataset(gen_out == "-" ? "/dev/stdout" : gen_out, samples);
        } else if (*assign) {
            const io::Checkpoint ckpt = io::load_checkpoint(as_checkpoint);
            const io::Dataset data = io::load_dataset(as_data, as_labeled);
            const std::vector<int> pred = io::assign_clusters(ckpt.ledger, data.x);
            std::string text;
            for (int p : pred) text += std::to_string(p) + "\n";
            write_text(as_out, text);
        } else if (*evaluate) {
            const std::vector<int> truth = io::load_labels(ev_truth);
            const std::vector<int> pred = io::load_labels(ev_pred);
            std::set<int> novel;
            if (!ev_novel.empty()) {
                std::stringstream ss(ev_novel);
                std::string item;
                while (std::getline(ss, item, ',')) novel.insert(std::stoi(item));
            }
            write_text(ev_out, metrics_report(truth, pred, novel));
        } else if (*synth) {
            const io::GmmSample sample = io::make_gmm(sy_seed, sy_k, sy_d, sy_n, sy_sep);
            io::save_dataset(sy_out, sample.x, &sample.labels);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const std::domain_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const NotPositiveDefinite& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 4;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    }
    return 0;
}
