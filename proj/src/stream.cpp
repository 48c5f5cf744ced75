#include "vbstream/stream.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "vbstream/special.hpp"

namespace vbs::stream {

using dpmm::DpmmModel;
using dpmm::Responsibilities;
using dpmm::SuffStats;

void StatScope::begin_stream(std::size_t j, std::size_t minibatches, std::size_t clusters,
                             std::size_t dim) {
    if (stream_active) throw StateError("begin_stream: previous stream not finalized");
    if (minibatches == 0) throw StateError("begin_stream: need at least one mini-batch slot");
    if (!ever_started && overall.clusters() == 0)
        overall = SuffStats::zeros(clusters, dim);
    if (overall.clusters() != clusters)
        throw StateError("begin_stream: overall statistics out of sync with the model");
    stream_id = j;
    stream_active = true;
    ever_started = true;
    minibatch.assign(minibatches, SuffStats::zeros(clusters, dim));
    stream = SuffStats::zeros(clusters, dim);
}

void StatScope::append_clusters(std::size_t count, std::size_t dim) {
    for (auto& slot : minibatch) slot.append_clusters(count, dim);
    stream.append_clusters(count, dim);
    overall.append_clusters(count, dim);
}

void StatScope::remove_cluster(std::size_t k) {
    for (auto& slot : minibatch) slot.remove_cluster(k);
    stream.remove_cluster(k);
    overall.remove_cluster(k);
}

void StatScope::merge_clusters(std::size_t dst, std::size_t src) {
    for (auto& slot : minibatch) slot.merge_into(dst, src);
    stream.merge_into(dst, src);
    overall.merge_into(dst, src);
}

double StatScope::conservation_error() const {
    if (!stream_active) return 0.0;
    SuffStats sum = SuffStats::zeros(stream.clusters(), stream.dim());
    for (const auto& slot : minibatch) sum += slot;
    double err = 0.0;
    for (std::size_t k = 0; k < sum.clusters(); ++k) {
        err = std::max(err, std::fabs(sum.per_cluster[k].n - stream.per_cluster[k].n));
        for (std::size_t i = 0; i < sum.dim(); ++i)
            err = std::max(err, std::fabs(sum.per_cluster[k].sum_z[i] -
                                          stream.per_cluster[k].sum_z[i]));
        for (std::size_t i = 0; i < sum.per_cluster[k].sum_zz.data().size(); ++i)
            err = std::max(err, std::fabs(sum.per_cluster[k].sum_zz.data()[i] -
                                          stream.per_cluster[k].sum_zz.data()[i]));
    }
    return err;
}

void stats_cycle(StatScope& scope, std::size_t j, std::size_t i, SuffStats new_batch_stats) {
    if (!scope.stream_active || scope.stream_id != j)
        throw StateError("stats_cycle: unknown stream id " + std::to_string(j));
    if (i >= scope.minibatch.size())
        throw StateError("stats_cycle: unknown mini-batch slot " + std::to_string(i));
    if (new_batch_stats.clusters() != scope.stream.clusters())
        throw ShapeError("stats_cycle: cluster count mismatch");
    scope.stream -= scope.minibatch[i];
    scope.minibatch[i] = std::move(new_batch_stats);
    scope.stream += scope.minibatch[i];
    scope.stream.clamp_nonnegative();
}

void finalize_stream(StatScope& scope) {
    if (!scope.stream_active)
        throw StateError("finalize_stream: no active stream (double finalize?)");
    scope.overall += scope.stream;
    scope.minibatch.clear();
    scope.stream = SuffStats::zeros(scope.overall.clusters(), scope.overall.dim());
    scope.stream_active = false;
}

bool StreamWork::staged() const {
    return !z.empty() && z.size() == gamma.size();
}

Matrix StreamWork::concat_z() const {
    Matrix all;
    for (const auto& m : z) all.append_rows(m);
    return all;
}

Responsibilities StreamWork::concat_gamma() const {
    Responsibilities all;
    for (const auto& g : gamma) all.gamma.append_rows(g.gamma);
    return all;
}

StreamLedger StreamLedger::init(DpmmModel model, vae::LatentCodec codec, vae::AdamState opt,
                                std::uint64_t seed) {
    if (model.dim() != codec.latent_dim)
        throw ShapeError("StreamLedger: model and codec latent dimensions differ");
    StreamLedger ledger;
    ledger.scope.overall = SuffStats::zeros(model.cluster_count(), model.dim());
    ledger.scope.ever_started = true;
    ledger.model = std::move(model);
    ledger.codec = std::move(codec);
    ledger.opt = std::move(opt);
    ledger.rng = Rng(seed);
    return ledger;
}

void absorb_posterior_as_prior(StreamLedger& ledger) {
    if (ledger.scope.stream_active)
        throw StateError("absorb_posterior_as_prior: stream not finalized");
    for (std::size_t k = 0; k < ledger.model.cluster_count(); ++k) {
        const auto& post = ledger.model.clusters[k];
        auto& prior = ledger.model.cluster_priors[k];
        prior.m0 = post.m;
        prior.beta0 = post.beta;
        prior.nu0 = post.nu;
        prior.w0_chol = post.w_chol;
        prior.stick_a1 = post.eta1;
        prior.stick_a2 = post.eta2;
    }
    ledger.stream_index += 1;
}

namespace {

std::vector<Matrix> split_rows(const Matrix& x, std::size_t parts) {
    std::vector<Matrix> out;
    const std::size_t n = x.rows();
    const std::size_t base = n / parts;
    std::size_t extra = n % parts;
    std::size_t row = 0;
    for (std::size_t p = 0; p < parts; ++p) {
        const std::size_t take = base + (extra > 0 ? 1 : 0);
        if (extra > 0) --extra;
        Matrix chunk(take, x.cols());
        for (std::size_t r = 0; r < take; ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) chunk(r, c) = x(row + r, c);
        row += take;
        out.push_back(std::move(chunk));
    }
    return out;
}

// One local/global sweep over the staged mini-batches.
void resweep_staged(StreamLedger& ledger, unsigned workers) {
    auto& scope = ledger.scope;
    for (std::size_t i = 0; i < ledger.work.z.size(); ++i) {
        ledger.work.gamma[i] = dpmm::local_update(ledger.work.z[i], ledger.model, workers);
        stats_cycle(scope, scope.stream_id, i,
                    dpmm::compute_suffstats(ledger.work.z[i], ledger.work.gamma[i], workers));
    }
    ledger.model = dpmm::global_update(ledger.model, scope.stream);
}

Matrix drop_gamma_column(const Matrix& g, std::size_t k) {
    Matrix out(g.rows(), g.cols() - 1);
    for (std::size_t r = 0; r < g.rows(); ++r) {
        double total = 0.0;
        std::size_t cc = 0;
        for (std::size_t c = 0; c < g.cols(); ++c) {
            if (c == k) continue;
            out(r, cc++) = g(r, c);
            total += g(r, c);
        }
        if (total > 0.0)
            for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) /= total;
    }
    return out;
}

Matrix merge_gamma_columns(const Matrix& g, std::size_t dst, std::size_t src) {
    Matrix out(g.rows(), g.cols() - 1);
    for (std::size_t r = 0; r < g.rows(); ++r) {
        std::size_t cc = 0;
        for (std::size_t c = 0; c < g.cols(); ++c) {
            if (c == src) continue;
            out(r, cc) = g(r, c) + (c == dst ? g(r, src) : 0.0);
            ++cc;
        }
    }
    return out;
}

// Pseudo-count composition of two absorbed priors over the shared base
// measure, in the natural parametrization of the Normal-Wishart family.
dpmm::ClusterPrior combine_priors(const dpmm::ClusterPrior& a, const dpmm::ClusterPrior& b,
                                  const dpmm::NWPrior& base) {
    const std::size_t d = a.dim();
    dpmm::ClusterPrior out;
    out.beta0 = a.beta0 + b.beta0 - base.beta0;
    out.nu0 = a.nu0 + b.nu0 - base.nu0;
    out.m0.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        out.m0[i] = (a.beta0 * a.m0[i] + b.beta0 * b.m0[i] - base.beta0 * base.m0[i]) / out.beta0;

    auto canonical = [d](const Matrix& w_inv, double beta, const Vec& m) {
        Matrix c = w_inv;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) c(i, j) += beta * m[i] * m[j];
        return c;
    };
    const Matrix base_inv = CholeskyFactor(base.w0).inverse();
    Matrix canon = canonical(a.w0_chol.inverse(), a.beta0, a.m0);
    canon += canonical(b.w0_chol.inverse(), b.beta0, b.m0);
    canon -= canonical(base_inv, base.beta0, base.m0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) canon(i, j) -= out.beta0 * out.m0[i] * out.m0[j];
    canon.symmetrize();
    const CholeskyFactor w0_inv_chol(canon);
    out.w0_chol = CholeskyFactor(w0_inv_chol.inverse());

    out.stick_a1 = a.stick_a1 + b.stick_a1 - 1.0;
    out.stick_a2 = a.stick_a2;
    return out;
}

} // namespace

void stage_stream_latents(StreamLedger& ledger, const Matrix& z, std::size_t minibatches,
                          unsigned workers) {
    if (z.cols() != ledger.model.dim())
        throw ShapeError("stage_stream_latents: latent dimension mismatch");
    if (z.rows() == 0) throw StateError("stage_stream_latents: empty stream");
    const std::size_t m = std::max<std::size_t>(1, std::min(minibatches, z.rows()));
    ledger.scope.begin_stream(ledger.stream_index, m, ledger.model.cluster_count(),
                              ledger.model.dim());
    ledger.work.clear();
    ledger.work.z = split_rows(z, m);
    ledger.work.gamma.resize(m);
    resweep_staged(ledger, workers);
}

DpmmModel fit_fresh_dpmm(const Matrix& z, std::size_t components, std::size_t iters,
                         const dpmm::NWPrior& base, double alpha0, Rng& rng) {
    if (z.rows() == 0) throw StateError("fit_fresh_dpmm: empty data");
    DpmmModel model = DpmmModel::init(base, alpha0, std::max<std::size_t>(components, 1));
    model.clusters[0].m = z.row_vec(rng.below(z.rows()));
    for (std::size_t c = 1; c < components; ++c) {
        dpmm::ClusterPosterior post = model.clusters[0];
        post.m = z.row_vec(rng.below(z.rows()));
        model.append_cluster(dpmm::ClusterPrior::fresh(base, alpha0), std::move(post));
    }
    for (std::size_t it = 0; it < iters; ++it) {
        const Responsibilities gamma = dpmm::local_update(z, model);
        model = dpmm::global_update(model, dpmm::compute_suffstats(z, gamma));
    }
    return model;
}

std::size_t birth_move(StreamLedger& ledger, const BirthConfig& cfg, unsigned workers) {
    if (!ledger.work.staged()) throw StateError("birth_move: no staged stream");
    auto& model = ledger.model;
    const std::size_t d = model.dim();
    const Matrix zall = ledger.work.concat_z();
    const Responsibilities gall = ledger.work.concat_gamma();
    const std::size_t k0 = model.cluster_count();

    // Surrogate per-cluster masses describing the proposed reallocation: the
    // collected soft mass leaves each target and lands on its newborn
    // components. Only the stick parameters see these numbers; the real
    // statistics move during the resweep below.
    Vec proposal_mass(k0, 0.0);
    for (std::size_t k = 0; k < k0; ++k)
        proposal_mass[k] = ledger.scope.stream.per_cluster[k].n;

    std::size_t added = 0;
    for (std::size_t k = 0; k < k0; ++k) {
        if (model.cluster_count() + cfg.k_prime > model.truncation_max) {
            ledger.notices.push_back("birth skipped: truncation cap reached at stream " +
                                     std::to_string(ledger.stream_index));
            break;
        }
        std::vector<std::size_t> idx;
        double collected_mass = 0.0;
        for (std::size_t n = 0; n < zall.rows(); ++n)
            if (gall.gamma(n, k) > cfg.collect_threshold) {
                idx.push_back(n);
                collected_mass += gall.gamma(n, k);
            }
        if (idx.size() < cfg.min_subsample) continue;

        // Strided cap keeps the subsample spread over the whole stream.
        std::vector<std::size_t> keep;
        if (idx.size() > cfg.subsample_cap) {
            keep.reserve(cfg.subsample_cap);
            for (std::size_t j = 0; j < cfg.subsample_cap; ++j)
                keep.push_back(idx[j * idx.size() / cfg.subsample_cap]);
        } else {
            keep = idx;
        }
        Matrix sub(keep.size(), d);
        for (std::size_t r = 0; r < keep.size(); ++r)
            for (std::size_t c = 0; c < d; ++c) sub(r, c) = zall(keep[r], c);

        const DpmmModel sprout =
            fit_fresh_dpmm(sub, cfg.k_prime, cfg.fit_iters, model.prior, model.alpha0, ledger.rng);
        const dpmm::Responsibilities sub_gamma = dpmm::local_update(sub, sprout);
        const dpmm::SuffStats sub_stats = dpmm::compute_suffstats(sub, sub_gamma);
        const double scale = collected_mass / static_cast<double>(keep.size());

        proposal_mass[k] = std::max(0.0, proposal_mass[k] - collected_mass);
        for (std::size_t c = 0; c < sprout.cluster_count(); ++c) {
            model.append_cluster(dpmm::ClusterPrior::fresh(model.prior, model.alpha0),
                                 sprout.clusters[c]);
            proposal_mass.push_back(scale * sub_stats.per_cluster[c].n);
            ++added;
        }
    }
    if (added > 0) {
        ledger.scope.append_clusters(added, d);
        // Sticks fitted before the expansion leave no tail mass for the
        // newcomers, which would starve them regardless of their fit. Rebuild
        // every stick from the surrogate masses so the first local pass sees
        // the proposed reallocation; the global update inside the resweep
        // replaces them with values fitted to the real statistics.
        double tail = 0.0;
        for (std::size_t k = model.cluster_count(); k-- > 0;) {
            model.clusters[k].eta1 = model.cluster_priors[k].stick_a1 + proposal_mass[k];
            model.clusters[k].eta2 = model.cluster_priors[k].stick_a2 + tail;
            tail += proposal_mass[k];
        }
        for (int sweep = 0; sweep < 5; ++sweep) resweep_staged(ledger, workers);
    }
    return added;
}

std::size_t merge_move(StreamLedger& ledger, const MergeConfig& cfg) {
    if (!ledger.work.staged()) throw StateError("merge_move: no staged stream");
    auto& model = ledger.model;
    if (model.cluster_count() < 2) return 0;

    Matrix zall = ledger.work.concat_z();
    Responsibilities gall = ledger.work.concat_gamma();
    double current = dpmm::elbo_dpmm(model, zall, gall);

    std::size_t accepted = 0;
    std::vector<std::pair<std::size_t, std::size_t>> rejected;
    for (std::size_t attempt = 0; attempt < cfg.max_pairs && model.cluster_count() >= 2;
         ++attempt) {
        // Rank pairs by the marginal-evidence gain of pooling their stream stats.
        double best_score = -std::numeric_limits<double>::infinity();
        std::size_t best_a = 0, best_b = 0;
        bool found = false;
        const auto& stats = ledger.scope.stream;
        for (std::size_t a = 0; a < model.cluster_count(); ++a) {
            for (std::size_t b = a + 1; b < model.cluster_count(); ++b) {
                // Clusters holding less than a point of mass are pruning's
                // business; pooling them with anything scores a meaningless
                // zero that would crowd out real candidates.
                if (stats.per_cluster[a].n < 1.0 || stats.per_cluster[b].n < 1.0) continue;
                bool skip = false;
                for (const auto& r : rejected)
                    if (r.first == a && r.second == b) skip = true;
                if (skip) continue;
                dpmm::ClusterStats pooled = stats.per_cluster[a];
                pooled.n += stats.per_cluster[b].n;
                axpy(1.0, stats.per_cluster[b].sum_z, pooled.sum_z);
                pooled.sum_zz += stats.per_cluster[b].sum_zz;
                double score;
                try {
                    const dpmm::ClusterPrior merged_prior = combine_priors(
                        model.cluster_priors[a], model.cluster_priors[b], model.prior);
                    score = dpmm::log_marginal_evidence(merged_prior, pooled) -
                            dpmm::log_marginal_evidence(model.cluster_priors[a],
                                                        stats.per_cluster[a]) -
                            dpmm::log_marginal_evidence(model.cluster_priors[b],
                                                        stats.per_cluster[b]);
                } catch (const NotPositiveDefinite&) {
                    continue;
                }
                if (score > best_score) {
                    best_score = score;
                    best_a = a;
                    best_b = b;
                    found = true;
                }
            }
        }
        if (!found) break;

        // Build the merged proposal and gate it on the exact ELBO.
        bool ok = true;
        DpmmModel proposal = model;
        try {
            proposal.cluster_priors[best_a] =
                combine_priors(model.cluster_priors[best_a], model.cluster_priors[best_b],
                               model.prior);
            proposal.remove_cluster(best_b);
            SuffStats merged_stats = ledger.scope.stream;
            merged_stats.merge_into(best_a, best_b);
            proposal = dpmm::global_update(proposal, merged_stats);
        } catch (const NotPositiveDefinite&) {
            ok = false;
        }
        if (ok) {
            Responsibilities merged_gamma;
            merged_gamma.gamma = merge_gamma_columns(gall.gamma, best_a, best_b);
            const double candidate = dpmm::elbo_dpmm(proposal, zall, merged_gamma);
            if (candidate > current) {
                model = std::move(proposal);
                ledger.scope.merge_clusters(best_a, best_b);
                for (auto& g : ledger.work.gamma)
                    g.gamma = merge_gamma_columns(g.gamma, best_a, best_b);
                gall = std::move(merged_gamma);
                current = candidate;
                ++accepted;
                rejected.clear(); // indices shifted
                continue;
            }
        }
        rejected.emplace_back(best_a, best_b);
    }
    return accepted;
}

std::size_t prune_degenerate(StreamLedger& ledger, double threshold) {
    auto& model = ledger.model;
    if (ledger.scope.stream.clusters() != model.cluster_count())
        throw StateError("prune_degenerate: statistics out of sync");
    std::size_t removed = 0;
    for (std::size_t k = model.cluster_count(); k-- > 0;) {
        if (model.cluster_count() == 1) break;
        const double absorbed = ledger.model.cluster_priors[k].beta0 - model.prior.beta0;
        const double eff = absorbed + ledger.scope.stream.per_cluster[k].n;
        if (eff < threshold) {
            model.remove_cluster(k);
            ledger.scope.remove_cluster(k);
            for (auto& g : ledger.work.gamma) g.gamma = drop_gamma_column(g.gamma, k);
            ++removed;
        }
    }
    if (removed > 0)
        model = dpmm::global_update(model, ledger.scope.stream);
    return removed;
}

void run_stream(StreamLedger& ledger, const Matrix& stream_x, const EngineConfig& cfg) {
    ledger.last_stream_events.clear();
    const std::size_t j = ledger.stream_index;
    if (stream_x.rows() == 0) {
        ledger.stream_index += 1;
        return;
    }
    if (stream_x.cols() != ledger.codec.data_dim)
        throw ShapeError("run_stream: data dimension mismatch");

    const Matrix x = replay::replay_augment(ledger, stream_x, cfg.replay, cfg.minibatches);
    const std::size_t m = std::max<std::size_t>(1, std::min(cfg.minibatches, x.rows()));
    const std::vector<Matrix> batches = split_rows(x, m);

    ledger.scope.begin_stream(j, m, ledger.model.cluster_count(), ledger.model.dim());
    ledger.work.clear();
    ledger.work.z.resize(m);
    ledger.work.gamma.resize(m);

    std::size_t sweep = 0;
    auto emit = [&](double elbo, std::size_t births, std::size_t merges) {
        ledger.last_stream_events.push_back(
            {++sweep, elbo, ledger.model.cluster_count(), births, merges});
    };
    auto staged_elbo = [&]() {
        return dpmm::elbo_dpmm(ledger.model, ledger.work.concat_z(), ledger.work.concat_gamma());
    };

    // One per-mini-batch round of the inner loop: encode with the current
    // codec, then local/global updates with statistics cycling until the ELBO
    // over the visited data settles.
    auto dpmm_fit_all = [&]() {
        for (std::size_t i = 0; i < m; ++i) {
            ledger.work.z[i] = vae::encode(ledger.codec, batches[i]).mu;
            double prev = std::numeric_limits<double>::quiet_NaN();
            for (std::size_t s = 0; s < cfg.max_sweeps; ++s) {
                ledger.work.gamma[i] =
                    dpmm::local_update(ledger.work.z[i], ledger.model, cfg.workers);
                stats_cycle(ledger.scope, j, i,
                            dpmm::compute_suffstats(ledger.work.z[i], ledger.work.gamma[i],
                                                    cfg.workers));
                ledger.model = dpmm::global_update(ledger.model, ledger.scope.stream);

                double elbo = 0.0;
                {
                    // Only the visited slots carry data this early in the pass.
                    Matrix zv;
                    Responsibilities gv;
                    for (std::size_t q = 0; q < m; ++q) {
                        if (ledger.work.z[q].rows() == 0 || ledger.work.gamma[q].gamma.rows() == 0)
                            continue;
                        zv.append_rows(ledger.work.z[q]);
                        gv.gamma.append_rows(ledger.work.gamma[q].gamma);
                    }
                    elbo = dpmm::elbo_dpmm(ledger.model, zv, gv);
                }
                if (!std::isfinite(elbo))
                    throw NumericError("run_stream: non-finite ELBO at stream " +
                                       std::to_string(j) + " mini-batch " + std::to_string(i) +
                                       " sweep " + std::to_string(s) + " clusters " +
                                       std::to_string(ledger.model.cluster_count()));
                emit(elbo, 0, 0);
                if (std::isfinite(prev) &&
                    std::fabs(elbo - prev) <= cfg.elbo_rel_tol * (std::fabs(prev) + 1e-12))
                    break;
                prev = elbo;
            }
        }
    };

    for (std::size_t pass = 0; pass < cfg.passes; ++pass) {
        // Cluster structure first: codec updates against a one-cluster model
        // would drag every latent toward a single mean.
        dpmm_fit_all();

        if (cfg.birth.enabled) {
            const std::size_t born = birth_move(ledger, cfg.birth, cfg.workers);
            if (born > 0) emit(staged_elbo(), born, 0);
        }
        if (cfg.merge.enabled) {
            // Merge rounds alternate with refinement sweeps until quiescent.
            for (std::size_t round = 0; round < cfg.max_sweeps; ++round) {
                const std::size_t merged = merge_move(ledger, cfg.merge);
                if (merged == 0) break;
                resweep_staged(ledger, cfg.workers);
                emit(staged_elbo(), 0, merged);
            }
        }
        if (cfg.prune_enabled) prune_degenerate(ledger, cfg.prune_threshold);

        // Codec ascent with the DPMM held fixed.
        if (cfg.vae_steps > 0) {
            for (std::size_t i = 0; i < m; ++i) {
                const Responsibilities& gamma0 = ledger.work.gamma[i];
                for (std::size_t t = 0; t < cfg.vae_steps; ++t) {
                    const Matrix eps =
                        ledger.rng.normal_matrix(batches[i].rows(), ledger.codec.latent_dim);
                    const vae::CodecGrads grads =
                        vae::grad_elbo_vae(ledger.codec, batches[i], gamma0, ledger.model, {eps});
                    vae::adam_step(ledger.opt, ledger.codec, grads);
                }
            }
        }

        ledger.opt.advance_epoch();
    }

    // The absorbed posterior must describe the final encoder's latents.
    if (cfg.vae_steps > 0) dpmm_fit_all();

    finalize_stream(ledger.scope);
    absorb_posterior_as_prior(ledger); // also advances stream_index
    ledger.work.clear();
}

} // namespace vbs::stream
