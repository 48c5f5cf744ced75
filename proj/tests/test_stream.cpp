#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "vbstream/dataset.hpp"
#include "vbstream/stream.hpp"

#include "oracles.hpp"

using namespace vbs;
using namespace vbs::stream;
using dpmm::DpmmModel;
using dpmm::NWPrior;
using dpmm::Responsibilities;
using dpmm::SuffStats;

namespace {

// Linear codec whose encoder mean is exactly the input (and decoder mean the
// latent), so stream tests operate directly in latent space.
vae::LatentCodec identity_codec(std::size_t d) {
    Rng rng(1);
    vae::LatentCodec codec = vae::LatentCodec::init(d, d, {}, vae::Activation::Tanh, rng);
    for (auto* mlp : {&codec.encoder, &codec.decoder}) {
        auto& layer = mlp->layers[0];
        layer.weights = Matrix(2 * d, d);
        for (std::size_t i = 0; i < d; ++i) layer.weights(i, i) = 1.0;
        layer.biases.assign(2 * d, 0.0);
    }
    return codec;
}

StreamLedger make_ledger(std::size_t d, std::size_t truncation_max = 50,
                         std::uint64_t seed = 7) {
    auto model = DpmmModel::init(NWPrior::default_for_dim(d), 1.0, truncation_max);
    auto codec = identity_codec(d);
    auto opt = vae::AdamState::init(codec);
    return StreamLedger::init(std::move(model), std::move(codec), std::move(opt), seed);
}

Matrix blob_pair(std::mt19937_64& gen, std::size_t per_blob, double offset) {
    std::normal_distribution<double> normal;
    Matrix z(2 * per_blob, 1);
    for (std::size_t i = 0; i < per_blob; ++i) {
        z(i, 0) = -offset + normal(gen);
        z(per_blob + i, 0) = offset + normal(gen);
    }
    return z;
}

// Frozen soft assignment used by the streaming-equals-batch checks.
Responsibilities frozen_gamma(const Matrix& z, std::size_t clusters) {
    Responsibilities g;
    g.gamma = Matrix(z.rows(), clusters);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        double total = 0.0;
        for (std::size_t k = 0; k < clusters; ++k) {
            const double v = 0.5 + 0.3 * std::sin(0.7 * static_cast<double>(r * clusters + k));
            g.gamma(r, k) = v;
            total += v;
        }
        for (std::size_t k = 0; k < clusters; ++k) g.gamma(r, k) /= total;
    }
    return g;
}

Matrix slice_rows(const Matrix& x, std::size_t begin, std::size_t end) {
    Matrix out(end - begin, x.cols());
    for (std::size_t r = begin; r < end; ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out(r - begin, c) = x(r, c);
    return out;
}

Responsibilities slice_gamma(const Responsibilities& g, std::size_t begin, std::size_t end) {
    Responsibilities out;
    out.gamma = slice_rows(g.gamma, begin, end);
    return out;
}

} // namespace

TEST_CASE("stats_cycle subtract-store-add identities") {
    StatScope scope;
    scope.begin_stream(0, 2, 1, 1);
    Matrix z = Matrix::from_rows({{1.0}, {2.0}, {3.0}});
    Responsibilities g = frozen_gamma(z, 1);
    const SuffStats s = dpmm::compute_suffstats(z, g);

    stats_cycle(scope, 0, 0, s);
    const double n_after_first = scope.stream.per_cluster[0].n;
    CHECK(n_after_first == doctest::Approx(3.0));

    // Cycling the identical summary leaves the stream stats unchanged.
    stats_cycle(scope, 0, 0, s);
    CHECK(scope.stream.per_cluster[0].n == doctest::Approx(n_after_first).epsilon(1e-15));
    CHECK(scope.conservation_error() <= 1e-12);

    // First visit of another slot adds on top.
    stats_cycle(scope, 0, 1, s);
    CHECK(scope.stream.per_cluster[0].n == doctest::Approx(2.0 * n_after_first));

    CHECK_THROWS_AS(stats_cycle(scope, 5, 0, s), StateError);
    CHECK_THROWS_AS(stats_cycle(scope, 0, 7, s), StateError);
}

TEST_CASE("stats_cycle with evolving responsibilities matches a fresh recompute") {
    std::mt19937_64 gen(3);
    const Matrix z = blob_pair(gen, 20, 3.0);
    DpmmModel model = DpmmModel::init(NWPrior::default_for_dim(1), 1.0, 8);
    model.clusters[0].m = {-3.0};
    {
        dpmm::ClusterPosterior post = model.clusters[0];
        post.m = {3.0};
        model.append_cluster(dpmm::ClusterPrior::fresh(model.prior, 1.0), std::move(post));
    }

    StatScope scope;
    scope.begin_stream(0, 2, 2, 1);
    const Matrix half0 = slice_rows(z, 0, 20);
    const Matrix half1 = slice_rows(z, 20, 40);

    Responsibilities g0, g1;
    for (int pass = 0; pass < 3; ++pass) {
        g0 = dpmm::local_update(half0, model);
        stats_cycle(scope, 0, 0, dpmm::compute_suffstats(half0, g0));
        model = dpmm::global_update(model, scope.stream);
        g1 = dpmm::local_update(half1, model);
        stats_cycle(scope, 0, 1, dpmm::compute_suffstats(half1, g1));
        model = dpmm::global_update(model, scope.stream);
    }

    // Stream stats equal the concatenated recompute with the final gammas.
    Matrix all = half0;
    all.append_rows(half1);
    Responsibilities gall;
    gall.gamma = g0.gamma;
    gall.gamma.append_rows(g1.gamma);
    const SuffStats expect = dpmm::compute_suffstats(all, gall);
    for (std::size_t k = 0; k < 2; ++k) {
        CHECK(std::fabs(scope.stream.per_cluster[k].n - expect.per_cluster[k].n) <= 1e-9);
        CHECK(std::fabs(scope.stream.per_cluster[k].sum_z[0] - expect.per_cluster[k].sum_z[0]) <=
              1e-9);
        CHECK(std::fabs(scope.stream.per_cluster[k].sum_zz(0, 0) -
                        expect.per_cluster[k].sum_zz(0, 0)) <= 1e-9);
    }
    CHECK(scope.conservation_error() <= 1e-9);
}

TEST_CASE("finalize_stream absorbs into the overall level") {
    StatScope scope;
    scope.begin_stream(0, 1, 1, 1);
    // Empty stream: overall unchanged.
    finalize_stream(scope);
    CHECK(scope.overall.per_cluster[0].n == 0.0);
    CHECK_THROWS_AS(finalize_stream(scope), StateError); // double finalize

    // A stream of n points fully in cluster 0.
    scope.begin_stream(1, 1, 1, 1);
    Matrix z = Matrix::from_rows({{1.0}, {2.0}, {3.0}, {4.0}});
    Responsibilities g;
    g.gamma = Matrix(4, 1, Vec(4, 1.0));
    stats_cycle(scope, 1, 0, dpmm::compute_suffstats(z, g));
    finalize_stream(scope);
    CHECK(scope.overall.per_cluster[0].n == doctest::Approx(4.0));

    // A second identical stream doubles the overall count.
    scope.begin_stream(2, 1, 1, 1);
    stats_cycle(scope, 2, 0, dpmm::compute_suffstats(z, g));
    finalize_stream(scope);
    CHECK(scope.overall.per_cluster[0].n == doctest::Approx(8.0));
}

TEST_CASE("one-pass streaming with frozen gamma reproduces batch statistics") {
    std::mt19937_64 gen(5);
    const Matrix all = blob_pair(gen, 30, 2.0); // 60 rows
    const Responsibilities gall = frozen_gamma(all, 2);

    StatScope scope;
    std::size_t row = 0;
    for (std::size_t j = 0; j < 2; ++j) { // 2 streams x 2 mini-batches of 15
        scope.begin_stream(j, 2, 2, 1);
        for (std::size_t i = 0; i < 2; ++i) {
            const Matrix part = slice_rows(all, row, row + 15);
            const Responsibilities gpart = slice_gamma(gall, row, row + 15);
            stats_cycle(scope, j, i, dpmm::compute_suffstats(part, gpart));
            row += 15;
        }
        finalize_stream(scope);
    }
    const SuffStats batch = dpmm::compute_suffstats(all, gall);
    for (std::size_t k = 0; k < 2; ++k) {
        CHECK(std::fabs(scope.overall.per_cluster[k].n - batch.per_cluster[k].n) <= 1e-9);
        CHECK(std::fabs(scope.overall.per_cluster[k].sum_z[0] - batch.per_cluster[k].sum_z[0]) <=
              1e-9);
        CHECK(std::fabs(scope.overall.per_cluster[k].sum_zz(0, 0) -
                        batch.per_cluster[k].sum_zz(0, 0)) <= 1e-9);
    }
}

TEST_CASE("absorb_posterior_as_prior is an exact fixed point under zero data") {
    std::mt19937_64 gen(9);
    StreamLedger ledger = make_ledger(1);
    const Matrix z = blob_pair(gen, 25, 2.5);
    stage_stream_latents(ledger, z, 2);
    finalize_stream(ledger.scope);
    absorb_posterior_as_prior(ledger);
    CHECK(ledger.stream_index == 1);

    const DpmmModel updated =
        dpmm::global_update(ledger.model, SuffStats::zeros(ledger.model.cluster_count(), 1));
    for (std::size_t k = 0; k < ledger.model.cluster_count(); ++k) {
        const auto& a = ledger.model.clusters[k];
        const auto& b = updated.clusters[k];
        CHECK(a.beta == b.beta);
        CHECK(a.nu == b.nu);
        CHECK(a.eta1 == b.eta1);
        CHECK(a.eta2 == b.eta2);
        CHECK(a.m == b.m);
        for (std::size_t i = 0; i < a.w_chol.lower().data().size(); ++i)
            CHECK(a.w_chol.lower().data()[i] == b.w_chol.lower().data()[i]);
    }

    // A single new point raises beta by exactly one.
    const double beta_before = ledger.model.clusters[0].beta;
    SuffStats one = SuffStats::zeros(ledger.model.cluster_count(), 1);
    one.per_cluster[0].n = 1.0;
    one.per_cluster[0].sum_z = {0.5};
    one.per_cluster[0].sum_zz(0, 0) = 0.25;
    const DpmmModel bumped = dpmm::global_update(ledger.model, one);
    CHECK(bumped.clusters[0].beta == doctest::Approx(beta_before + 1.0).epsilon(1e-15));
}

TEST_CASE("two absorbed half-streams match the one-shot batch posterior") {
    std::mt19937_64 gen(11);
    const std::size_t d = 2;
    std::normal_distribution<double> normal;
    Matrix all(40, d);
    for (double& v : all.data()) v = 2.0 * normal(gen);
    const Responsibilities gall = frozen_gamma(all, 1);

    // One-shot batch posterior.
    DpmmModel batch_model = DpmmModel::init(NWPrior::default_for_dim(d), 1.0, 4);
    const DpmmModel one_shot =
        dpmm::global_update(batch_model, dpmm::compute_suffstats(all, gall));

    // Sequential: half, absorb, half.
    StreamLedger ledger = make_ledger(d);
    for (std::size_t half = 0; half < 2; ++half) {
        const Matrix part = slice_rows(all, half * 20, half * 20 + 20);
        const Responsibilities gpart = slice_gamma(gall, half * 20, half * 20 + 20);
        ledger.scope.begin_stream(ledger.stream_index, 1, 1, d);
        stats_cycle(ledger.scope, ledger.stream_index, 0,
                    dpmm::compute_suffstats(part, gpart));
        ledger.model = dpmm::global_update(ledger.model, ledger.scope.stream);
        finalize_stream(ledger.scope);
        absorb_posterior_as_prior(ledger);
    }

    const auto& sequential = ledger.model.clusters[0];
    const auto& reference = one_shot.clusters[0];
    CHECK(std::fabs(sequential.beta - reference.beta) <= 1e-9);
    CHECK(std::fabs(sequential.nu - reference.nu) <= 1e-9);
    for (std::size_t i = 0; i < d; ++i)
        CHECK(std::fabs(sequential.m[i] - reference.m[i]) <= 1e-9);
    const Matrix wa = sequential.w_chol.reconstruct();
    const Matrix wb = reference.w_chol.reconstruct();
    for (std::size_t i = 0; i < wa.data().size(); ++i)
        CHECK(std::fabs(wa.data()[i] - wb.data()[i]) <= 1e-9);
}

TEST_CASE("birth_move grows separated structure out of one cluster") {
    std::mt19937_64 gen(13);
    StreamLedger ledger = make_ledger(1);
    const Matrix z = blob_pair(gen, 100, 5.0); // two blobs 10 sigma apart
    stage_stream_latents(ledger, z, 2);

    BirthConfig cfg;
    const std::size_t added = birth_move(ledger, cfg);
    CHECK(added == cfg.k_prime);
    CHECK(ledger.scope.conservation_error() <= 1e-9);

    // After the post-birth resweep at least two clusters carry real mass.
    std::size_t heavy = 0;
    for (const auto& c : ledger.scope.stream.per_cluster)
        if (c.n >= 0.05 * static_cast<double>(z.rows())) ++heavy;
    CHECK(heavy >= 2);
}

TEST_CASE("birth_move skips a too-small subsample") {
    std::mt19937_64 gen(17);
    StreamLedger ledger = make_ledger(1);
    std::normal_distribution<double> normal;
    Matrix z(30, 1); // below the 50-point minimum
    for (double& v : z.data()) v = normal(gen);
    stage_stream_latents(ledger, z, 1);
    BirthConfig cfg;
    CHECK(birth_move(ledger, cfg) == 0);
    CHECK(ledger.model.cluster_count() == 1);
}

TEST_CASE("birth_move respects the truncation cap") {
    std::mt19937_64 gen(19);
    StreamLedger ledger = make_ledger(1, 3); // cap below k_prime
    const Matrix z = blob_pair(gen, 60, 4.0);
    stage_stream_latents(ledger, z, 1);
    BirthConfig cfg;
    CHECK(birth_move(ledger, cfg) == 0);
    CHECK(ledger.model.cluster_count() == 1);
    CHECK(!ledger.notices.empty());
}

TEST_CASE("merge_move accepts redundant clusters and rejects separated ones") {
    std::mt19937_64 gen(23);
    std::normal_distribution<double> normal;

    // Redundant: one blob explained twice.
    {
        StreamLedger ledger = make_ledger(1);
        dpmm::ClusterPosterior post = ledger.model.clusters[0];
        post.m = {0.4};
        ledger.model.clusters[0].m = {-0.4};
        ledger.model.append_cluster(dpmm::ClusterPrior::fresh(ledger.model.prior, 1.0),
                                    std::move(post));
        ledger.scope.overall.append_clusters(1, 1);

        Matrix z(120, 1);
        for (double& v : z.data()) v = normal(gen);
        stage_stream_latents(ledger, z, 2);
        // Let the two clusters settle onto the blob before proposing.
        for (int sweep = 0; sweep < 5; ++sweep) {
            for (std::size_t i = 0; i < ledger.work.z.size(); ++i) {
                ledger.work.gamma[i] = dpmm::local_update(ledger.work.z[i], ledger.model);
                stats_cycle(ledger.scope, ledger.scope.stream_id, i,
                            dpmm::compute_suffstats(ledger.work.z[i], ledger.work.gamma[i]));
            }
            ledger.model = dpmm::global_update(ledger.model, ledger.scope.stream);
        }
        const double before = dpmm::elbo_dpmm(ledger.model, ledger.work.concat_z(),
                                              ledger.work.concat_gamma());
        MergeConfig cfg;
        const std::size_t accepted = merge_move(ledger, cfg);
        CHECK(accepted >= 1);
        CHECK(ledger.model.cluster_count() == 1);
        const double after = dpmm::elbo_dpmm(ledger.model, ledger.work.concat_z(),
                                             ledger.work.concat_gamma());
        CHECK(after > before);
        CHECK(ledger.scope.conservation_error() <= 1e-9);
    }

    // Separated: two blobs 20 sigma apart fit by two clusters.
    {
        StreamLedger ledger = make_ledger(1);
        dpmm::ClusterPosterior post = ledger.model.clusters[0];
        post.m = {10.0};
        ledger.model.clusters[0].m = {-10.0};
        ledger.model.append_cluster(dpmm::ClusterPrior::fresh(ledger.model.prior, 1.0),
                                    std::move(post));
        ledger.scope.overall.append_clusters(1, 1);

        const Matrix z = blob_pair(gen, 60, 10.0);
        stage_stream_latents(ledger, z, 2);
        MergeConfig cfg;
        CHECK(merge_move(ledger, cfg) == 0);
        CHECK(ledger.model.cluster_count() == 2);
    }

    // Single cluster: no-op.
    {
        StreamLedger ledger = make_ledger(1);
        Matrix z(60, 1);
        for (double& v : z.data()) v = normal(gen);
        stage_stream_latents(ledger, z, 1);
        MergeConfig cfg;
        CHECK(merge_move(ledger, cfg) == 0);
    }
}

TEST_CASE("run_stream on an empty stream only advances the index") {
    StreamLedger ledger = make_ledger(2);
    const DpmmModel before = ledger.model;
    EngineConfig cfg;
    run_stream(ledger, Matrix(0, 2), cfg);
    CHECK(ledger.stream_index == 1);
    CHECK(ledger.model.cluster_count() == before.cluster_count());
    CHECK(ledger.model.clusters[0].beta == before.clusters[0].beta);
}

TEST_CASE("run_stream is stationary on repeated data with moves disabled") {
    std::mt19937_64 gen(29);
    std::normal_distribution<double> normal;
    Matrix x(80, 1);
    for (double& v : x.data()) v = normal(gen);

    StreamLedger ledger = make_ledger(1);
    EngineConfig cfg;
    cfg.minibatches = 1;
    cfg.vae_steps = 0;
    cfg.birth.enabled = false;
    cfg.merge.enabled = false;
    cfg.replay.enabled = false;

    run_stream(ledger, x, cfg);
    const std::size_t clusters_after_first = ledger.model.cluster_count();

    run_stream(ledger, x, cfg);
    CHECK(ledger.model.cluster_count() == clusters_after_first);
    // Single mini-batch: the event trace is one inner loop, so the ELBO must
    // be non-decreasing along it.
    double prev = -std::numeric_limits<double>::infinity();
    for (const auto& e : ledger.last_stream_events) {
        CHECK(e.elbo - prev >= -1e-8 * std::fabs(prev));
        prev = e.elbo;
        CHECK(std::isfinite(e.elbo));
    }
}

TEST_CASE("run_stream recovers three separated clusters from one") {
    const io::GmmSample sample = io::make_gmm(77, 3, 2, 600, 10.0);
    StreamLedger ledger = make_ledger(2);
    EngineConfig cfg;
    cfg.minibatches = 2;
    cfg.vae_steps = 0; // identity codec held fixed
    cfg.replay.enabled = false;

    run_stream(ledger, sample.x, cfg);
    std::size_t heavy = 0;
    double total = 0.0;
    for (std::size_t k = 0; k < ledger.model.cluster_count(); ++k)
        total += ledger.model.cluster_priors[k].beta0 - ledger.model.prior.beta0;
    for (std::size_t k = 0; k < ledger.model.cluster_count(); ++k) {
        const double mass = (ledger.model.cluster_priors[k].beta0 -
                             ledger.model.prior.beta0) / total;
        if (mass >= 0.05) ++heavy;
    }
    CHECK(heavy == 3);
}

TEST_CASE("prune_degenerate removes weightless clusters") {
    std::mt19937_64 gen(31);
    StreamLedger ledger = make_ledger(1);
    // A far-away cluster that will attract nothing.
    dpmm::ClusterPosterior post = ledger.model.clusters[0];
    post.m = {500.0};
    ledger.model.append_cluster(dpmm::ClusterPrior::fresh(ledger.model.prior, 1.0),
                                std::move(post));
    ledger.scope.overall.append_clusters(1, 1);

    std::normal_distribution<double> normal;
    Matrix z(50, 1);
    for (double& v : z.data()) v = normal(gen);
    stage_stream_latents(ledger, z, 1);
    CHECK(ledger.model.cluster_count() == 2);
    const std::size_t removed = prune_degenerate(ledger, 0.01);
    CHECK(removed == 1);
    CHECK(ledger.model.cluster_count() == 1);
    CHECK(ledger.scope.stream.clusters() == 1);
    CHECK(ledger.work.gamma[0].gamma.cols() == 1);
}
