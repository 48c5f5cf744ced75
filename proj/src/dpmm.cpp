#include "vbstream/dpmm.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <thread>

#include "vbstream/special.hpp"

namespace vbs::dpmm {

namespace {

constexpr double kGammaFloor = 1e-12;
constexpr double kLog2Pi = 1.8378770664093453; // log(2*pi)

double log_beta_fn(double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Splits [0, n) into near-equal chunks and runs fn(begin, end) on each,
// chunk 0 on the calling thread. Deterministic partition.
void run_row_chunks(std::size_t n, unsigned workers,
                    const std::function<void(std::size_t, std::size_t)>& fn) {
    if (workers <= 1 || n < 2 * workers) {
        fn(0, n);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    for (std::size_t begin = chunk; begin < n; begin += chunk)
        pool.emplace_back(fn, begin, std::min(begin + chunk, n));
    fn(0, std::min(chunk, n));
    for (auto& t : pool) t.join();
}

} // namespace

NWPrior NWPrior::default_for_dim(std::size_t d) {
    NWPrior p;
    p.m0.assign(d, 0.0);
    p.beta0 = 0.2;
    p.nu0 = static_cast<double>(d) + 2.0;
    p.w0 = Matrix::identity(d);
    return p;
}

void NWPrior::validate() const {
    const auto d = static_cast<double>(dim());
    if (!(beta0 > 0.0)) throw std::domain_error("NWPrior: beta0 must be positive");
    if (!(nu0 > d - 1.0)) throw std::domain_error("NWPrior: nu0 must exceed D - 1");
    if (w0.rows() != dim() || w0.cols() != dim()) throw ShapeError("NWPrior: w0 shape mismatch");
    CholeskyFactor probe(w0); // PSD check
}

ClusterPrior ClusterPrior::fresh(const NWPrior& base, double alpha0) {
    base.validate();
    if (!(alpha0 > 0.0)) throw std::domain_error("ClusterPrior: alpha0 must be positive");
    ClusterPrior cp;
    cp.m0 = base.m0;
    cp.beta0 = base.beta0;
    cp.nu0 = base.nu0;
    cp.w0_chol = CholeskyFactor(base.w0);
    cp.stick_a1 = 1.0;
    cp.stick_a2 = alpha0;
    return cp;
}

DpmmModel DpmmModel::init(NWPrior base, double alpha0, std::size_t truncation_max) {
    if (truncation_max < 1) throw std::domain_error("DpmmModel: truncation_max must be >= 1");
    DpmmModel m;
    m.alpha0 = alpha0;
    m.prior = std::move(base);
    m.truncation_max = truncation_max;

    ClusterPrior cp = ClusterPrior::fresh(m.prior, alpha0);
    ClusterPosterior post;
    post.m = cp.m0;
    post.beta = cp.beta0;
    post.nu = cp.nu0;
    post.w_chol = cp.w0_chol;
    post.eta1 = cp.stick_a1;
    post.eta2 = cp.stick_a2;
    m.cluster_priors.push_back(std::move(cp));
    m.clusters.push_back(std::move(post));
    return m;
}

void DpmmModel::append_cluster(ClusterPrior cp, ClusterPosterior post) {
    if (clusters.size() >= truncation_max)
        throw StateError("DpmmModel: truncation cap reached");
    if (cp.dim() != dim() || post.dim() != dim())
        throw ShapeError("DpmmModel: cluster dimension mismatch");
    cluster_priors.push_back(std::move(cp));
    clusters.push_back(std::move(post));
}

void DpmmModel::remove_cluster(std::size_t k) {
    if (k >= clusters.size()) throw ShapeError("DpmmModel: cluster index out of range");
    if (clusters.size() == 1) throw StateError("DpmmModel: cannot remove the last cluster");
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(k));
    cluster_priors.erase(cluster_priors.begin() + static_cast<std::ptrdiff_t>(k));
}

SuffStats SuffStats::zeros(std::size_t clusters, std::size_t dim) {
    SuffStats s;
    s.per_cluster.resize(clusters);
    for (auto& c : s.per_cluster) {
        c.n = 0.0;
        c.sum_z.assign(dim, 0.0);
        c.sum_zz = Matrix(dim, dim);
    }
    return s;
}

SuffStats& SuffStats::operator+=(const SuffStats& o) {
    if (clusters() != o.clusters()) throw ShapeError("SuffStats add: cluster count mismatch");
    for (std::size_t k = 0; k < per_cluster.size(); ++k) {
        per_cluster[k].n += o.per_cluster[k].n;
        axpy(1.0, o.per_cluster[k].sum_z, per_cluster[k].sum_z);
        per_cluster[k].sum_zz += o.per_cluster[k].sum_zz;
    }
    return *this;
}

SuffStats& SuffStats::operator-=(const SuffStats& o) {
    if (clusters() != o.clusters()) throw ShapeError("SuffStats subtract: cluster count mismatch");
    for (std::size_t k = 0; k < per_cluster.size(); ++k) {
        per_cluster[k].n -= o.per_cluster[k].n;
        axpy(-1.0, o.per_cluster[k].sum_z, per_cluster[k].sum_z);
        per_cluster[k].sum_zz -= o.per_cluster[k].sum_zz;
    }
    return *this;
}

Vec SuffStats::mean(std::size_t k) const {
    const auto& c = per_cluster.at(k);
    Vec m(c.sum_z.size(), 0.0);
    if (c.n > 0.0)
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = c.sum_z[i] / c.n;
    return m;
}

Matrix SuffStats::scatter(std::size_t k) const {
    const auto& c = per_cluster.at(k);
    const std::size_t d = c.sum_z.size();
    Matrix s(d, d);
    if (c.n > 0.0) {
        const Vec zbar = mean(k);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                s(i, j) = c.sum_zz(i, j) / c.n - zbar[i] * zbar[j];
        s.symmetrize();
    }
    return s;
}

void SuffStats::append_clusters(std::size_t count, std::size_t dim) {
    for (std::size_t i = 0; i < count; ++i) {
        ClusterStats c;
        c.sum_z.assign(dim, 0.0);
        c.sum_zz = Matrix(dim, dim);
        per_cluster.push_back(std::move(c));
    }
}

void SuffStats::remove_cluster(std::size_t k) {
    if (k >= per_cluster.size()) throw ShapeError("SuffStats: cluster index out of range");
    per_cluster.erase(per_cluster.begin() + static_cast<std::ptrdiff_t>(k));
}

void SuffStats::merge_into(std::size_t dst, std::size_t src) {
    if (dst == src) throw ShapeError("SuffStats::merge_into: identical indices");
    auto& a = per_cluster.at(dst);
    auto& b = per_cluster.at(src);
    a.n += b.n;
    axpy(1.0, b.sum_z, a.sum_z);
    a.sum_zz += b.sum_zz;
    remove_cluster(src);
}

void SuffStats::clamp_nonnegative(double tol) {
    for (auto& c : per_cluster) {
        if (c.n < 0.0) {
            if (c.n < -tol) throw StateError("SuffStats: count went negative beyond rounding");
            c.n = 0.0;
            std::fill(c.sum_z.begin(), c.sum_z.end(), 0.0);
            c.sum_zz = Matrix(c.sum_z.size(), c.sum_z.size());
        }
    }
}

Vec stick_weights(const Vec& v) {
    if (v.empty()) throw std::domain_error("stick_weights: empty input");
    Vec pi(v.size(), 0.0);
    double remaining = 1.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
        if (!(v[k] > 0.0) || v[k] > 1.0)
            throw std::domain_error("stick_weights: entries must lie in (0, 1]");
        pi[k] = v[k] * remaining;
        remaining *= 1.0 - v[k];
    }
    return pi;
}

std::pair<Vec, Vec> expected_log_sticks(const Vec& eta1, const Vec& eta2) {
    if (eta1.size() != eta2.size()) throw ShapeError("expected_log_sticks: length mismatch");
    Vec log_v(eta1.size()), log_1mv(eta1.size());
    for (std::size_t i = 0; i < eta1.size(); ++i) {
        if (!(eta1[i] > 0.0) || !(eta2[i] > 0.0))
            throw std::domain_error("expected_log_sticks: parameters must be positive");
        const double psi_sum = digamma(eta1[i] + eta2[i]);
        log_v[i] = digamma(eta1[i]) - psi_sum;
        log_1mv[i] = digamma(eta2[i]) - psi_sum;
    }
    return {std::move(log_v), std::move(log_1mv)};
}

double expected_log_det_precision(const ClusterPosterior& c) {
    const std::size_t d = c.dim();
    double psi_sum = 0.0;
    for (std::size_t i = 1; i <= d; ++i)
        psi_sum += digamma(0.5 * (c.nu + 1.0 - static_cast<double>(i)));
    return psi_sum + static_cast<double>(d) * std::log(2.0) + c.w_chol.log_det();
}

namespace {

// Per-cluster quantities reused across rows of a local update.
struct ClusterScore {
    double constant; // stick score + 0.5 log-det term - D/(2 beta)
    double half_nu;
    const ClusterPosterior* post;
};

std::vector<ClusterScore> score_table(const DpmmModel& model) {
    const std::size_t t = model.cluster_count();
    Vec eta1(t), eta2(t);
    for (std::size_t k = 0; k < t; ++k) {
        eta1[k] = model.clusters[k].eta1;
        eta2[k] = model.clusters[k].eta2;
    }
    auto [log_v, log_1mv] = expected_log_sticks(eta1, eta2);

    std::vector<ClusterScore> table(t);
    double tail = 0.0; // sum_{i<k} E[log(1 - V_i)]
    const double d = static_cast<double>(model.dim());
    for (std::size_t k = 0; k < t; ++k) {
        const auto& c = model.clusters[k];
        table[k].constant = log_v[k] + tail
                          + 0.5 * expected_log_det_precision(c)
                          - d / (2.0 * c.beta);
        table[k].half_nu = 0.5 * c.nu;
        table[k].post = &c;
        tail += log_1mv[k];
    }
    return table;
}

} // namespace

Responsibilities local_update(const Matrix& z, const DpmmModel& model, unsigned workers) {
    const std::size_t d = model.dim();
    if (z.cols() != d) throw ShapeError("local_update: latent dimension mismatch");
    if (!z.all_finite()) throw std::domain_error("local_update: non-finite input");

    const std::size_t n = z.rows();
    const std::size_t t = model.cluster_count();
    const auto table = score_table(model);

    Responsibilities resp;
    resp.gamma = Matrix(n, t);
    Matrix& gamma = resp.gamma;

    auto work = [&](std::size_t begin, std::size_t end) {
        Vec diff(d), score(t);
        for (std::size_t row = begin; row < end; ++row) {
            const auto zr = z.row(row);
            for (std::size_t k = 0; k < t; ++k) {
                const auto& m = table[k].post->m;
                for (std::size_t j = 0; j < d; ++j) diff[j] = zr[j] - m[j];
                score[k] = table[k].constant
                         - table[k].half_nu * table[k].post->w_chol.quad_form(diff);
            }
            const double lse = log_sum_exp(score);
            double total = 0.0;
            for (std::size_t k = 0; k < t; ++k) {
                double g = std::exp(score[k] - lse);
                if (g < kGammaFloor) g = kGammaFloor;
                gamma(row, k) = g;
                total += g;
            }
            for (std::size_t k = 0; k < t; ++k) gamma(row, k) /= total;
        }
    };
    run_row_chunks(n, workers, work);
    return resp;
}

SuffStats compute_suffstats(const Matrix& z, const Responsibilities& gamma, unsigned workers) {
    if (z.rows() != gamma.gamma.rows()) throw ShapeError("compute_suffstats: row count mismatch");
    const std::size_t d = z.cols();
    const std::size_t t = gamma.clusters();
    const std::size_t n = z.rows();

    const unsigned used = (workers <= 1 || n < 2 * workers) ? 1 : workers;
    std::vector<SuffStats> partial(used, SuffStats::zeros(t, d));

    const std::size_t chunk = used == 1 ? n : (n + used - 1) / used;
    auto work = [&](unsigned w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(begin + chunk, n);
        SuffStats& s = partial[w];
        for (std::size_t row = begin; row < end; ++row) {
            const auto zr = z.row(row);
            for (std::size_t k = 0; k < t; ++k) {
                const double g = gamma.gamma(row, k);
                if (g == 0.0) continue;
                auto& c = s.per_cluster[k];
                c.n += g;
                for (std::size_t i = 0; i < d; ++i) {
                    c.sum_z[i] += g * zr[i];
                    for (std::size_t j = 0; j < d; ++j) c.sum_zz(i, j) += g * zr[i] * zr[j];
                }
            }
        }
    };
    if (used == 1) {
        work(0);
        return std::move(partial[0]);
    }
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < used; ++w) pool.emplace_back(work, w);
    work(0);
    for (auto& th : pool) th.join();
    // Fixed-order reduction keeps multi-worker runs within rounding of serial.
    for (unsigned w = 1; w < used; ++w) partial[0] += partial[w];
    return std::move(partial[0]);
}

DpmmModel global_update(const DpmmModel& model, const SuffStats& stats) {
    if (stats.clusters() != model.cluster_count())
        throw ShapeError("global_update: statistics do not match cluster count");
    const std::size_t t = model.cluster_count();
    const std::size_t d = model.dim();

    // Tail masses for the stick updates.
    Vec tail(t, 0.0);
    for (std::size_t k = t; k-- > 1;)
        tail[k - 1] = tail[k] + stats.per_cluster[k].n;

    DpmmModel out = model;
    for (std::size_t k = 0; k < t; ++k) {
        const ClusterPrior& prior = model.cluster_priors[k];
        const ClusterStats& cs = stats.per_cluster[k];
        ClusterPosterior& post = out.clusters[k];

        post.eta1 = prior.stick_a1 + cs.n;
        post.eta2 = prior.stick_a2 + tail[k];

        if (cs.n == 0.0) {
            // Exact identity on the prior.
            post.m = prior.m0;
            post.beta = prior.beta0;
            post.nu = prior.nu0;
            post.w_chol = prior.w0_chol;
            continue;
        }

        const double n_k = cs.n;
        post.beta = prior.beta0 + n_k;
        post.nu = prior.nu0 + n_k;

        const Vec zbar = stats.mean(k);
        post.m.assign(d, 0.0);
        for (std::size_t i = 0; i < d; ++i)
            post.m[i] = (prior.beta0 * prior.m0[i] + n_k * zbar[i]) / post.beta;

        // W_k^{-1} = W_0^{-1} + N S + (beta0 N / (beta0 + N)) (zbar - m0)(zbar - m0)^T
        // with N S taken from the raw moments: N S = sum_zz - N zbar zbar^T.
        Matrix w_inv = prior.w0_chol.inverse();
        const double shrink = prior.beta0 * n_k / post.beta;
        Vec dm(d);
        for (std::size_t i = 0; i < d; ++i) dm[i] = zbar[i] - prior.m0[i];
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                w_inv(i, j) += cs.sum_zz(i, j) - n_k * zbar[i] * zbar[j] + shrink * dm[i] * dm[j];
        w_inv.symmetrize();

        const CholeskyFactor w_inv_chol(w_inv); // throws on corrupted statistics
        Matrix w = w_inv_chol.inverse();
        post.w_chol = CholeskyFactor(w);
    }
    return out;
}

double elbo_dpmm(const DpmmModel& model, const Matrix& z, const Responsibilities& gamma) {
    const std::size_t t = model.cluster_count();
    const std::size_t d = model.dim();
    const std::size_t n = z.rows();
    if (z.cols() != d) throw ShapeError("elbo_dpmm: latent dimension mismatch");
    if (gamma.gamma.rows() != n || gamma.clusters() != t)
        throw ShapeError("elbo_dpmm: responsibility shape mismatch");

    const SuffStats stats = compute_suffstats(z, gamma);

    Vec eta1(t), eta2(t);
    for (std::size_t k = 0; k < t; ++k) {
        eta1[k] = model.clusters[k].eta1;
        eta2[k] = model.clusters[k].eta2;
    }
    const auto [log_v, log_1mv] = expected_log_sticks(eta1, eta2);

    double elbo = 0.0;
    double tail = 0.0;
    const double dd = static_cast<double>(d);

    for (std::size_t k = 0; k < t; ++k) {
        const auto& post = model.clusters[k];
        const auto& prior = model.cluster_priors[k];
        const double n_k = stats.per_cluster[k].n;
        const double log_det_tilde = expected_log_det_precision(post);
        const Matrix w = post.w_chol.reconstruct();

        // E[log p(z | y, phi)]
        if (n_k > 0.0) {
            const Vec zbar = stats.mean(k);
            const Matrix scat = stats.scatter(k);
            double tr_sw = 0.0;
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) tr_sw += scat(i, j) * w(i, j);
            Vec diff(d);
            for (std::size_t i = 0; i < d; ++i) diff[i] = zbar[i] - post.m[i];
            const double quad = post.w_chol.quad_form(diff);
            elbo += 0.5 * n_k * (log_det_tilde - dd / post.beta
                                 - post.nu * tr_sw - post.nu * quad - dd * kLog2Pi);
        }

        // E[log p(y | v)]
        elbo += n_k * (log_v[k] + tail);

        // E[log p(v)] - E[log q(v)]
        elbo += -log_beta_fn(prior.stick_a1, prior.stick_a2)
                + (prior.stick_a1 - 1.0) * log_v[k] + (prior.stick_a2 - 1.0) * log_1mv[k];
        elbo -= -log_beta_fn(post.eta1, post.eta2)
                + (post.eta1 - 1.0) * log_v[k] + (post.eta2 - 1.0) * log_1mv[k];

        // E[log p(phi)]
        {
            Vec dm(d);
            for (std::size_t i = 0; i < d; ++i) dm[i] = post.m[i] - prior.m0[i];
            const double quad0 = post.w_chol.quad_form(dm);
            const Matrix w0_inv = prior.w0_chol.inverse();
            double tr_w0inv_w = 0.0;
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) tr_w0inv_w += w0_inv(i, j) * w(i, j);
            const double log_b0 =
                log_wishart_normalizer_logdet(prior.w0_chol.log_det(), d, prior.nu0);
            elbo += 0.5 * (dd * std::log(prior.beta0 / (2.0 * M_PI)) + log_det_tilde)
                  - 0.5 * (dd * prior.beta0 / post.beta + prior.beta0 * post.nu * quad0)
                  + log_b0 + 0.5 * (prior.nu0 - dd - 1.0) * log_det_tilde
                  - 0.5 * post.nu * tr_w0inv_w;
        }

        // E[log q(phi)] via the Wishart entropy.
        {
            const double log_b =
                log_wishart_normalizer_logdet(post.w_chol.log_det(), d, post.nu);
            const double wishart_entropy =
                -log_b - 0.5 * (post.nu - dd - 1.0) * log_det_tilde + 0.5 * post.nu * dd;
            elbo -= 0.5 * log_det_tilde + 0.5 * dd * std::log(post.beta / (2.0 * M_PI))
                  - 0.5 * dd - wishart_entropy;
        }

        tail += log_1mv[k];
    }

    // -E[log q(y)]: assignment entropy, with 0 log 0 = 0.
    for (std::size_t row = 0; row < n; ++row)
        for (std::size_t k = 0; k < t; ++k) {
            const double g = gamma.gamma(row, k);
            if (g > 0.0) elbo -= g * std::log(g);
        }

    return elbo;
}

Vec expected_weights(const DpmmModel& model) {
    const std::size_t t = model.cluster_count();
    Vec v(t, 1.0);
    for (std::size_t k = 0; k + 1 < t; ++k) {
        const auto& c = model.clusters[k];
        v[k] = c.eta1 / (c.eta1 + c.eta2);
    }
    return stick_weights(v);
}

std::pair<Matrix, std::vector<std::size_t>> sample_latents(const DpmmModel& model,
                                                           std::size_t n, Rng& rng) {
    const std::size_t d = model.dim();
    const Vec pi = expected_weights(model);
    Vec cumulative(pi.size(), 0.0);
    double acc = 0.0;
    for (std::size_t k = 0; k < pi.size(); ++k) {
        acc += pi[k];
        cumulative[k] = acc;
    }

    Matrix z(n, d);
    std::vector<std::size_t> labels(n, 0);
    const std::size_t t = model.cluster_count();
    Vec eps(d), x(d);
    for (std::size_t row = 0; row < n; ++row) {
        const double u = rng.uniform() * acc;
        std::size_t k = 0;
        while (k + 1 < t && u > cumulative[k]) ++k;
        labels[row] = k;

        const auto& post = model.clusters[k];
        for (std::size_t i = 0; i < d; ++i) eps[i] = rng.normal();
        // Covariance (nu W)^{-1}: with nu W = M M^T and M = sqrt(nu) L,
        // x = m + M^{-T} eps has exactly that covariance.
        const double root_nu = std::sqrt(post.nu);
        const Matrix& lower = post.w_chol.lower();
        for (std::size_t ii = d; ii-- > 0;) {
            double s = eps[ii];
            for (std::size_t j = ii + 1; j < d; ++j) s -= root_nu * lower(j, ii) * x[j];
            x[ii] = s / (root_nu * lower(ii, ii));
        }
        for (std::size_t i = 0; i < d; ++i) z(row, i) = post.m[i] + x[i];
    }
    return {std::move(z), std::move(labels)};
}

double log_marginal_evidence(const ClusterPrior& prior, const ClusterStats& stats) {
    const std::size_t d = prior.dim();
    const double dd = static_cast<double>(d);
    const double n = stats.n;
    if (n <= 0.0) return 0.0;

    const double beta_n = prior.beta0 + n;
    const double nu_n = prior.nu0 + n;
    Vec zbar(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) zbar[i] = stats.sum_z[i] / n;

    Matrix w_inv = prior.w0_chol.inverse();
    const double shrink = prior.beta0 * n / beta_n;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            w_inv(i, j) += stats.sum_zz(i, j) - n * zbar[i] * zbar[j]
                         + shrink * (zbar[i] - prior.m0[i]) * (zbar[j] - prior.m0[j]);
    w_inv.symmetrize();
    const CholeskyFactor w_inv_chol(w_inv);

    const double log_b0 = log_wishart_normalizer_logdet(prior.w0_chol.log_det(), d, prior.nu0);
    // B(W_n, nu_n) expressed through log|W_n| = -log|W_n^{-1}|.
    const double log_bn = log_wishart_normalizer_logdet(-w_inv_chol.log_det(), d, nu_n);
    return -0.5 * n * dd * kLog2Pi + 0.5 * dd * (std::log(prior.beta0) - std::log(beta_n))
           + log_b0 - log_bn;
}

} // namespace vbs::dpmm
