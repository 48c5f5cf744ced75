#pragma once

#include <map>
#include <string>
#include <vector>

#include "vbstream/config.hpp"
#include "vbstream/dataset.hpp"
#include "vbstream/metrics.hpp"
#include "vbstream/stream.hpp"

namespace vbs::io {

struct RunOutcome {
    std::string report_text;
    double nmi = 0.0;
    double ari = 0.0;
    double hs = 0.0;
    double vm = 0.0;
    std::vector<double> cluster_mass;  // normalized absorbed mass per cluster
    std::map<int, double> class_recall; // evaluation recall per true class
    std::vector<metrics::NoveltyReport> novelty;
    std::vector<int> eval_truth;
    std::vector<int> eval_pred;
    stream::StreamLedger ledger;
    RunConfig config;
};

// Hard cluster assignment of raw data under the current model.
std::vector<int> assign_clusters(const stream::StreamLedger& ledger, const Matrix& x,
                                 unsigned workers = 1);

// Executes the configured protocol over the configured dataset. When
// `checkpoint_path` is set, a checkpoint is written after every stream; with
// `resume`, an existing checkpoint at that path continues mid-protocol.
RunOutcome run_protocol(const RunConfig& cfg, const std::string& checkpoint_path = "",
                        bool resume = false);

} // namespace vbs::io
