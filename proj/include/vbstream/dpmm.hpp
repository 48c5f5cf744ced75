#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "vbstream/matrix.hpp"
#include "vbstream/rng.hpp"

namespace vbs::vae {
struct LatentCodec;
}

namespace vbs::dpmm {

// Normal-Wishart base measure over a Gaussian's (mean, precision).
struct NWPrior {
    Vec m0;
    double beta0 = 0.2;
    double nu0 = 0.0; // must stay > D - 1
    Matrix w0;

    static NWPrior default_for_dim(std::size_t d);
    std::size_t dim() const noexcept { return m0.size(); }
    void validate() const;
};

// Per-cluster prior carried between data streams. Fresh clusters start from
// the model's base measure with stick pseudo-counts Beta(1, alpha0); after a
// stream is absorbed the posterior itself sits here (the factored scale
// matrix is stored directly so a zero-data update is an exact fixed point).
struct ClusterPrior {
    Vec m0;
    double beta0 = 0.0;
    double nu0 = 0.0;
    CholeskyFactor w0_chol;
    double stick_a1 = 1.0;
    double stick_a2 = 1.0;

    static ClusterPrior fresh(const NWPrior& base, double alpha0);
    std::size_t dim() const noexcept { return m0.size(); }
};

struct ClusterPosterior {
    Vec m;
    double beta = 0.0;
    double nu = 0.0;
    CholeskyFactor w_chol; // factor of W_k (the Wishart scale, not its inverse)
    double eta1 = 1.0;     // stick Beta(eta1, eta2)
    double eta2 = 1.0;

    std::size_t dim() const noexcept { return m.size(); }
};

struct DpmmModel {
    double alpha0 = 1.0;
    NWPrior prior; // base measure for newborn clusters
    std::vector<ClusterPrior> cluster_priors;
    std::vector<ClusterPosterior> clusters;
    std::size_t truncation_max = 50;

    std::size_t dim() const noexcept { return prior.dim(); }
    std::size_t cluster_count() const noexcept { return clusters.size(); }

    // One cluster sitting exactly at the base measure.
    static DpmmModel init(NWPrior base, double alpha0 = 1.0, std::size_t truncation_max = 50);

    void append_cluster(ClusterPrior cp, ClusterPosterior post);
    void remove_cluster(std::size_t k);
};

// Soft assignments, n rows x T clusters, each row summing to 1.
struct Responsibilities {
    Matrix gamma;

    std::size_t points() const noexcept { return gamma.rows(); }
    std::size_t clusters() const noexcept { return gamma.cols(); }
};

// Weighted zero/first/second moments per cluster. Additive across batches.
struct ClusterStats {
    double n = 0.0;
    Vec sum_z;
    Matrix sum_zz;
};

struct SuffStats {
    std::vector<ClusterStats> per_cluster;

    static SuffStats zeros(std::size_t clusters, std::size_t dim);
    std::size_t clusters() const noexcept { return per_cluster.size(); }
    std::size_t dim() const noexcept {
        return per_cluster.empty() ? 0 : per_cluster.front().sum_z.size();
    }

    SuffStats& operator+=(const SuffStats& o);
    SuffStats& operator-=(const SuffStats& o);

    // Derived views; zero vectors/matrices when the cluster is empty.
    Vec mean(std::size_t k) const;
    Matrix scatter(std::size_t k) const;

    void append_clusters(std::size_t count, std::size_t dim);
    void remove_cluster(std::size_t k);
    void merge_into(std::size_t dst, std::size_t src); // add src to dst, drop src

    // Clamp tiny negative counts left by subtract/add cycles back to zero.
    void clamp_nonnegative(double tol = 1e-9);
};

// pi_k = v_k prod_{j<k} (1 - v_j); each v_i in (0, 1].
Vec stick_weights(const Vec& v);

// E[log V] = psi(eta1) - psi(eta1 + eta2), E[log(1-V)] = psi(eta2) - psi(eta1 + eta2).
std::pair<Vec, Vec> expected_log_sticks(const Vec& eta1, const Vec& eta2);

// E[log|Lambda_k|] = sum_i psi((nu+1-i)/2) + D log 2 + log|W_k|.
double expected_log_det_precision(const ClusterPosterior& c);

// Soft assignment of each row of z under the current posterior, normalized by
// log-sum-exp. Entries are floored at 1e-12 and rows renormalized so later
// entropy terms stay finite. Rows are independent; `workers` > 1 splits them
// across threads with bitwise-identical results.
Responsibilities local_update(const Matrix& z, const DpmmModel& model, unsigned workers = 1);

SuffStats compute_suffstats(const Matrix& z, const Responsibilities& gamma, unsigned workers = 1);

// Conjugate Normal-Wishart and stick refresh from the given statistics. Each
// cluster with zero weight is an exact copy of its prior.
DpmmModel global_update(const DpmmModel& model, const SuffStats& stats);

// All ELBO terms except the reconstruction and encoder-entropy pieces (those
// belong to the codec objective).
double elbo_dpmm(const DpmmModel& model, const Matrix& z, const Responsibilities& gamma);

// Expected stick weights with the final stick forced to 1 so they close to a
// distribution over the T live clusters.
Vec expected_weights(const DpmmModel& model);

// Ancestral draws in latent space: cluster from expected_weights, then a
// Gaussian with mean m_k and covariance (nu_k W_k)^{-1}.
std::pair<Matrix, std::vector<std::size_t>> sample_latents(const DpmmModel& model,
                                                           std::size_t n, Rng& rng);

// Latent draws pushed through the decoder mean; reproducible given the seed.
Matrix sample_generative(const DpmmModel& model, const vae::LatentCodec& codec,
                         std::size_t n, std::uint64_t seed);

// Log marginal likelihood of weighted statistics under a cluster prior
// (the Normal-Wishart evidence). Used to rank merge candidates.
double log_marginal_evidence(const ClusterPrior& prior, const ClusterStats& stats);

} // namespace vbs::dpmm
