#include "vbstream/metrics.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace vbs::metrics {

namespace {

std::vector<std::size_t> compact_ids(const std::vector<int>& raw, std::size_t& count) {
    std::map<int, std::size_t> ids;
    std::vector<std::size_t> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        auto [it, inserted] = ids.emplace(raw[i], ids.size());
        out[i] = it->second;
    }
    count = ids.size();
    return out;
}

double entropy_of(const Vec& totals, double n) {
    double h = 0.0;
    for (double t : totals)
        if (t > 0.0) h -= (t / n) * std::log(t / n);
    return h;
}

// H(rows | cols): expected row entropy within each column.
double conditional_entropy(const ContingencyTable& t) {
    double h = 0.0;
    for (std::size_t i = 0; i < t.counts.rows(); ++i)
        for (std::size_t j = 0; j < t.counts.cols(); ++j) {
            const double a = t.counts(i, j);
            if (a > 0.0) h -= (a / t.n) * std::log(a / t.cluster_totals[j]);
        }
    return h;
}

double mutual_information(const ContingencyTable& t) {
    double mi = 0.0;
    for (std::size_t i = 0; i < t.counts.rows(); ++i)
        for (std::size_t j = 0; j < t.counts.cols(); ++j) {
            const double a = t.counts(i, j);
            if (a > 0.0)
                mi += (a / t.n) *
                      std::log(a * t.n / (t.class_totals[i] * t.cluster_totals[j]));
        }
    return mi;
}

double choose2(double x) { return 0.5 * x * (x - 1.0); }

ContingencyTable transpose_table(const ContingencyTable& t) {
    ContingencyTable out;
    out.counts = t.counts.transposed();
    out.class_totals = t.cluster_totals;
    out.cluster_totals = t.class_totals;
    out.n = t.n;
    return out;
}

double homogeneity_of(const ContingencyTable& t) {
    // Joint entropy zero means a single occupied cell.
    std::size_t occupied = 0;
    for (double a : t.counts.data())
        if (a > 0.0) ++occupied;
    if (occupied <= 1) return 1.0;
    const double h_c = entropy_of(t.class_totals, t.n);
    if (h_c == 0.0) return 1.0;
    return 1.0 - conditional_entropy(t) / h_c;
}

} // namespace

ContingencyTable ContingencyTable::from_labels(const std::vector<int>& labels,
                                               const std::vector<int>& clusters) {
    if (labels.size() != clusters.size())
        throw ShapeError("contingency: label/cluster length mismatch");
    if (labels.empty()) throw std::domain_error("contingency: empty labelings");
    std::size_t n_class = 0, n_cluster = 0;
    const auto li = compact_ids(labels, n_class);
    const auto ci = compact_ids(clusters, n_cluster);

    ContingencyTable t;
    t.counts = Matrix(n_class, n_cluster);
    t.class_totals.assign(n_class, 0.0);
    t.cluster_totals.assign(n_cluster, 0.0);
    t.n = static_cast<double>(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        t.counts(li[i], ci[i]) += 1.0;
        t.class_totals[li[i]] += 1.0;
        t.cluster_totals[ci[i]] += 1.0;
    }
    return t;
}

double nmi(const std::vector<int>& labels, const std::vector<int>& clusters) {
    const auto t = ContingencyTable::from_labels(labels, clusters);
    const double h_l = entropy_of(t.class_totals, t.n);
    const double h_c = entropy_of(t.cluster_totals, t.n);
    if (h_l + h_c == 0.0) return 1.0; // both constant: identical partitions
    return 2.0 * mutual_information(t) / (h_l + h_c);
}

double ari(const std::vector<int>& labels, const std::vector<int>& clusters) {
    if (labels.size() < 2) throw std::domain_error("ari: need at least two points");
    const auto t = ContingencyTable::from_labels(labels, clusters);
    double sum_cells = 0.0;
    for (double a : t.counts.data()) sum_cells += choose2(a);
    double sum_rows = 0.0, sum_cols = 0.0;
    for (double a : t.class_totals) sum_rows += choose2(a);
    for (double b : t.cluster_totals) sum_cols += choose2(b);
    const double expected = sum_rows * sum_cols / choose2(t.n);
    const double maximum = 0.5 * (sum_rows + sum_cols);
    if (maximum == expected) return 1.0; // degenerate: partitions already coincide
    return (sum_cells - expected) / (maximum - expected);
}

double homogeneity(const std::vector<int>& labels, const std::vector<int>& clusters) {
    return homogeneity_of(ContingencyTable::from_labels(labels, clusters));
}

double completeness(const std::vector<int>& labels, const std::vector<int>& clusters) {
    return homogeneity_of(transpose_table(ContingencyTable::from_labels(labels, clusters)));
}

double v_measure(const std::vector<int>& labels, const std::vector<int>& clusters, double beta) {
    const auto t = ContingencyTable::from_labels(labels, clusters);
    const double h = homogeneity_of(t);
    const double c = homogeneity_of(transpose_table(t));
    if (beta * h + c == 0.0) return 0.0;
    return (1.0 + beta) * h * c / (beta * h + c);
}

std::vector<NoveltyReport> novelty_precision_recall(const std::vector<int>& labels,
                                                    const std::vector<int>& clusters,
                                                    const std::set<int>& novel_labels) {
    if (labels.size() != clusters.size())
        throw ShapeError("novelty: label/cluster length mismatch");
    for (int novel : novel_labels) {
        bool seen = false;
        for (int l : labels)
            if (l == novel) {
                seen = true;
                break;
            }
        if (!seen)
            throw std::domain_error("novelty: label " + std::to_string(novel) +
                                    " absent from ground truth");
    }

    // Majority ground-truth label per cluster, ties to the smaller label.
    std::map<int, std::map<int, std::size_t>> tallies; // cluster -> label -> count
    for (std::size_t i = 0; i < labels.size(); ++i) tallies[clusters[i]][labels[i]] += 1;
    std::map<int, int> majority;
    for (const auto& [cluster, by_label] : tallies) {
        int best_label = 0;
        std::size_t best_count = 0;
        for (const auto& [label, count] : by_label)
            if (count > best_count) {
                best_count = count;
                best_label = label;
            }
        majority[cluster] = best_label;
    }

    std::vector<NoveltyReport> out;
    for (int novel : novel_labels) {
        NoveltyReport rep;
        rep.label = novel;
        std::size_t pooled = 0, correct = 0, truly = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == novel) ++truly;
            if (majority[clusters[i]] == novel) {
                ++pooled;
                if (labels[i] == novel) ++correct;
            }
        }
        if (pooled == 0) {
            rep.no_novel_cluster = true;
            rep.precision = 0.0;
            rep.recall = 0.0;
        } else {
            rep.precision = static_cast<double>(correct) / static_cast<double>(pooled);
            rep.recall = static_cast<double>(correct) / static_cast<double>(truly);
        }
        out.push_back(rep);
    }
    return out;
}

} // namespace vbs::metrics
