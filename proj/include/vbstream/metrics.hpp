#pragma once

#include <set>
#include <vector>

#include "vbstream/matrix.hpp"

namespace vbs::metrics {

// Class-by-cluster count table with marginals.
struct ContingencyTable {
    Matrix counts; // class i x cluster j
    Vec class_totals;
    Vec cluster_totals;
    double n = 0.0;

    static ContingencyTable from_labels(const std::vector<int>& labels,
                                        const std::vector<int>& clusters);
};

// 2 I(l, c) / (H(l) + H(c)) with natural-log entropies; 1 when both
// partitions are constant (identical up to relabeling), 0 when only one is.
double nmi(const std::vector<int>& labels, const std::vector<int>& clusters);

// Hubert-Arabie adjusted Rand index; 1 iff the partitions coincide up to
// relabeling (can be negative for anti-correlated partitions).
double ari(const std::vector<int>& labels, const std::vector<int>& clusters);

// h = 1 - H(C|K)/H(C), with h = 1 when H(C,K) = 0 or H(C) = 0.
double homogeneity(const std::vector<int>& labels, const std::vector<int>& clusters);

// Symmetric counterpart of homogeneity.
double completeness(const std::vector<int>& labels, const std::vector<int>& clusters);

// (1+beta) h c / (beta h + c); 0 when both h and c vanish.
double v_measure(const std::vector<int>& labels, const std::vector<int>& clusters,
                 double beta = 1.0);

struct NoveltyReport {
    int label = 0;
    double precision = 0.0;
    double recall = 0.0;
    bool no_novel_cluster = false; // no cluster mapped to this label
};

// Majority-label mapping: every predicted cluster maps to its most common
// ground-truth label (ties to the smaller label); the clusters mapped to a
// novel label are pooled as that label's detection.
std::vector<NoveltyReport> novelty_precision_recall(const std::vector<int>& labels,
                                                    const std::vector<int>& clusters,
                                                    const std::set<int>& novel_labels);

} // namespace vbs::metrics
