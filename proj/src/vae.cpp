#include "vbstream/vae.hpp"

#include <cmath>
#include <string>

namespace vbs::vae {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double activate(double x, Activation act) {
    switch (act) {
        case Activation::Tanh: return std::tanh(x);
        case Activation::Softplus: return x > 30.0 ? x : std::log1p(std::exp(x));
    }
    return x;
}

// Derivative expressed from the pre-activation value.
double activate_grad(double pre, Activation act) {
    switch (act) {
        case Activation::Tanh: {
            const double t = std::tanh(pre);
            return 1.0 - t * t;
        }
        case Activation::Softplus: return 1.0 / (1.0 + std::exp(-pre));
    }
    return 1.0;
}

double clamp_log_var(double v) {
    return v < kLogVarClampLo ? kLogVarClampLo : (v > kLogVarClampHi ? kLogVarClampHi : v);
}

bool clamp_open(double v) { return v > kLogVarClampLo && v < kLogVarClampHi; }

GaussianHeads split_heads(const Matrix& out, std::size_t width) {
    GaussianHeads h;
    h.mu = Matrix(out.rows(), width);
    h.log_var = Matrix(out.rows(), width);
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < width; ++c) {
            h.mu(r, c) = out(r, c);
            h.log_var(r, c) = clamp_log_var(out(r, c + width));
        }
    return h;
}

} // namespace

void MlpParams::validate() const {
    if (layers.empty()) throw ShapeError("MlpParams: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.biases.size() != l.weights.rows())
            throw ShapeError("MlpParams: bias length mismatch at layer " + std::to_string(i));
        if (i > 0 && l.weights.cols() != layers[i - 1].weights.rows())
            throw ShapeError("MlpParams: layer dimensions do not chain at layer " +
                             std::to_string(i));
        if (!l.weights.all_finite())
            throw NumericError("MlpParams: non-finite weight at layer " + std::to_string(i));
    }
}

LatentCodec LatentCodec::init(std::size_t data_dim, std::size_t latent_dim,
                              const std::vector<std::size_t>& hidden, Activation act, Rng& rng) {
    if (data_dim == 0 || latent_dim == 0)
        throw std::domain_error("LatentCodec: dimensions must be positive");

    auto make_layer = [&rng](std::size_t out, std::size_t in) {
        Layer l;
        l.weights = Matrix(out, in);
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        for (double& w : l.weights.data()) w = (2.0 * rng.uniform() - 1.0) * bound;
        l.biases.assign(out, 0.0);
        return l;
    };
    auto make_mlp = [&](std::size_t in, const std::vector<std::size_t>& widths, std::size_t out) {
        MlpParams mlp;
        mlp.activation = act;
        std::size_t prev = in;
        for (std::size_t w : widths) {
            mlp.layers.push_back(make_layer(w, prev));
            prev = w;
        }
        mlp.layers.push_back(make_layer(out, prev));
        return mlp;
    };

    LatentCodec codec;
    codec.data_dim = data_dim;
    codec.latent_dim = latent_dim;
    codec.encoder = make_mlp(data_dim, hidden, 2 * latent_dim);
    std::vector<std::size_t> mirrored(hidden.rbegin(), hidden.rend());
    codec.decoder = make_mlp(latent_dim, mirrored, 2 * data_dim);
    codec.validate();
    return codec;
}

void LatentCodec::validate() const {
    encoder.validate();
    decoder.validate();
    if (encoder.input_dim() != data_dim || encoder.output_dim() != 2 * latent_dim)
        throw ShapeError("LatentCodec: encoder shape mismatch");
    if (decoder.input_dim() != latent_dim || decoder.output_dim() != 2 * data_dim)
        throw ShapeError("LatentCodec: decoder shape mismatch");
}

CodecGrads CodecGrads::zeros_like(const LatentCodec& codec) {
    CodecGrads g;
    auto zero_of = [](const MlpParams& mlp) {
        std::vector<Layer> out;
        out.reserve(mlp.layers.size());
        for (const auto& l : mlp.layers) {
            Layer z;
            z.weights = Matrix(l.weights.rows(), l.weights.cols());
            z.biases.assign(l.biases.size(), 0.0);
            out.push_back(std::move(z));
        }
        return out;
    };
    g.encoder = zero_of(codec.encoder);
    g.decoder = zero_of(codec.decoder);
    return g;
}

CodecGrads& CodecGrads::operator+=(const CodecGrads& o) {
    auto add = [](std::vector<Layer>& a, const std::vector<Layer>& b) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i].weights += b[i].weights;
            axpy(1.0, b[i].biases, a[i].biases);
        }
    };
    add(encoder, o.encoder);
    add(decoder, o.decoder);
    return *this;
}

CodecGrads& CodecGrads::operator*=(double s) {
    for (auto* block : {&encoder, &decoder})
        for (auto& l : *block) {
            l.weights *= s;
            for (double& b : l.biases) b *= s;
        }
    return *this;
}

double CodecGrads::max_abs() const {
    double m = 0.0;
    for (const auto* block : {&encoder, &decoder})
        for (const auto& l : *block) {
            for (double w : l.weights.data()) m = std::max(m, std::fabs(w));
            for (double b : l.biases) m = std::max(m, std::fabs(b));
        }
    return m;
}

AdamState AdamState::init(const LatentCodec& codec, double lr, double decay) {
    AdamState s;
    s.first_moment = CodecGrads::zeros_like(codec);
    s.second_moment = CodecGrads::zeros_like(codec);
    s.learning_rate = lr;
    s.lr_decay = decay;
    return s;
}

Matrix mlp_forward(const MlpParams& mlp, const Matrix& x, ForwardCache* cache) {
    if (x.cols() != mlp.input_dim()) throw ShapeError("mlp_forward: input width mismatch");
    Matrix a = x;
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
    }
    const std::size_t last = mlp.layers.size() - 1;
    for (std::size_t i = 0; i <= last; ++i) {
        const Layer& l = mlp.layers[i];
        if (cache) cache->inputs.push_back(a);
        const std::size_t out = l.weights.rows();
        Matrix pre(a.rows(), out);
        for (std::size_t r = 0; r < a.rows(); ++r) {
            const auto ar = a.row(r);
            for (std::size_t o = 0; o < out; ++o) {
                double s = l.biases[o];
                const auto wr = l.weights.row(o);
                for (std::size_t c = 0; c < wr.size(); ++c) s += wr[c] * ar[c];
                pre(r, o) = s;
            }
        }
        if (!pre.all_finite())
            throw NumericError("mlp_forward: non-finite activation at layer " + std::to_string(i));
        if (cache) cache->pre.push_back(pre);
        if (i == last) {
            a = std::move(pre);
        } else {
            Matrix act(pre.rows(), pre.cols());
            for (std::size_t j = 0; j < pre.data().size(); ++j)
                act.data()[j] = activate(pre.data()[j], mlp.activation);
            a = std::move(act);
        }
    }
    if (cache) cache->output = a;
    return a;
}

Matrix mlp_backward(const MlpParams& mlp, const ForwardCache& cache, const Matrix& grad_out,
                    std::vector<Layer>& grads) {
    Matrix delta = grad_out;
    for (std::size_t i = mlp.layers.size(); i-- > 0;) {
        const Layer& l = mlp.layers[i];
        const Matrix& input = cache.inputs[i];
        // Hidden layers saw an activation after their pre-image.
        if (i + 1 < mlp.layers.size()) {
            const Matrix& pre = cache.pre[i];
            for (std::size_t j = 0; j < delta.data().size(); ++j)
                delta.data()[j] *= activate_grad(pre.data()[j], mlp.activation);
        }
        Layer& g = grads[i];
        for (std::size_t r = 0; r < delta.rows(); ++r) {
            const auto dr = delta.row(r);
            const auto ir = input.row(r);
            for (std::size_t o = 0; o < dr.size(); ++o) {
                g.biases[o] += dr[o];
                auto gw = g.weights.row(o);
                for (std::size_t c = 0; c < ir.size(); ++c) gw[c] += dr[o] * ir[c];
            }
        }
        if (i == 0) break;
        Matrix next(delta.rows(), l.weights.cols());
        for (std::size_t r = 0; r < delta.rows(); ++r) {
            const auto dr = delta.row(r);
            auto nr = next.row(r);
            for (std::size_t o = 0; o < dr.size(); ++o) {
                const auto wr = l.weights.row(o);
                for (std::size_t c = 0; c < wr.size(); ++c) nr[c] += dr[o] * wr[c];
            }
        }
        delta = std::move(next);
    }
    // Gradient with respect to the first layer's input.
    Matrix gin(delta.rows(), mlp.layers.front().weights.cols());
    {
        const Layer& l0 = mlp.layers.front();
        // delta here already includes activation gating of layer 0 applied above
        // only when layer 0 is hidden; for a single linear layer it is the raw delta.
        for (std::size_t r = 0; r < delta.rows(); ++r) {
            const auto dr = delta.row(r);
            auto gr = gin.row(r);
            for (std::size_t o = 0; o < dr.size(); ++o) {
                const auto wr = l0.weights.row(o);
                for (std::size_t c = 0; c < wr.size(); ++c) gr[c] += dr[o] * wr[c];
            }
        }
    }
    return gin;
}

GaussianHeads encode(const LatentCodec& codec, const Matrix& x) {
    if (x.cols() != codec.data_dim) throw ShapeError("encode: data dimension mismatch");
    return split_heads(mlp_forward(codec.encoder, x), codec.latent_dim);
}

GaussianHeads decode(const LatentCodec& codec, const Matrix& z) {
    if (z.cols() != codec.latent_dim) throw ShapeError("decode: latent dimension mismatch");
    return split_heads(mlp_forward(codec.decoder, z), codec.data_dim);
}

Matrix reparameterize(const Matrix& mu, const Matrix& log_var, const Matrix& eps) {
    if (!mu.same_shape(log_var) || !mu.same_shape(eps))
        throw ShapeError("reparameterize: shape mismatch");
    Matrix z = mu;
    for (std::size_t i = 0; i < z.data().size(); ++i)
        z.data()[i] += eps.data()[i] * std::exp(0.5 * log_var.data()[i]);
    return z;
}

namespace {

struct DpmmCoupling {
    std::vector<Matrix> w;  // materialized W_k
    std::vector<double> nu;
    std::vector<const Vec*> mean;
};

DpmmCoupling coupling_table(const dpmm::DpmmModel& model) {
    DpmmCoupling c;
    for (const auto& cl : model.clusters) {
        c.w.push_back(cl.w_chol.reconstruct());
        c.nu.push_back(cl.nu);
        c.mean.push_back(&cl.m);
    }
    return c;
}

// The two statistics-coupling summands of the objective, evaluated at the
// encoder means: -1/2 sum_k N_k nu_k [ Tr(S_k W_k) + (zbar_k - m_k)^T W_k (zbar_k - m_k) ].
double coupling_terms(const Matrix& zhat, const dpmm::Responsibilities& gamma,
                      const dpmm::DpmmModel& model) {
    const dpmm::SuffStats stats = dpmm::compute_suffstats(zhat, gamma);
    const std::size_t d = zhat.cols();
    double total = 0.0;
    for (std::size_t k = 0; k < model.cluster_count(); ++k) {
        const double n_k = stats.per_cluster[k].n;
        if (n_k <= 0.0) continue;
        const auto& post = model.clusters[k];
        const Matrix w = post.w_chol.reconstruct();
        const Matrix scat = stats.scatter(k);
        const Vec zbar = stats.mean(k);
        double tr = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) tr += scat(i, j) * w(i, j);
        Vec diff(d);
        for (std::size_t i = 0; i < d; ++i) diff[i] = zbar[i] - post.m[i];
        total += -0.5 * n_k * post.nu * (tr + post.w_chol.quad_form(diff));
    }
    return total;
}

void check_vae_shapes(const LatentCodec& codec, const Matrix& x,
                      const dpmm::Responsibilities& gamma, const dpmm::DpmmModel& model,
                      const std::vector<Matrix>& eps) {
    codec.validate();
    if (x.cols() != codec.data_dim) throw ShapeError("elbo_vae: data dimension mismatch");
    if (gamma.gamma.rows() != x.rows()) throw ShapeError("elbo_vae: responsibility rows mismatch");
    if (gamma.clusters() != model.cluster_count())
        throw ShapeError("elbo_vae: responsibility clusters mismatch");
    if (model.dim() != codec.latent_dim) throw ShapeError("elbo_vae: latent dimension mismatch");
    if (eps.empty()) throw ShapeError("elbo_vae: need at least one eps draw");
    for (const auto& e : eps)
        if (e.rows() != x.rows() || e.cols() != codec.latent_dim)
            throw ShapeError("elbo_vae: eps shape mismatch");
}

} // namespace

double elbo_vae(const LatentCodec& codec, const Matrix& x, const dpmm::Responsibilities& gamma,
                const dpmm::DpmmModel& model, const std::vector<Matrix>& eps) {
    check_vae_shapes(codec, x, gamma, model, eps);
    const GaussianHeads enc = encode(codec, x);
    const double draws = static_cast<double>(eps.size());

    double total = coupling_terms(enc.mu, gamma, model);

    double recon = 0.0;
    for (const Matrix& e : eps) {
        const Matrix z = reparameterize(enc.mu, enc.log_var, e);
        const GaussianHeads dec = decode(codec, z);
        for (std::size_t i = 0; i < x.data().size(); ++i) {
            const double lv = dec.log_var.data()[i];
            const double r = x.data()[i] - dec.mu.data()[i];
            recon += -0.5 * (lv + r * r * std::exp(-lv));
        }
    }
    total += recon / draws;

    // Encoder entropy: 1/2 log det(2 pi e Sigma_n), summed over rows.
    for (double lv : enc.log_var.data()) total += 0.5 * (kLog2Pi + 1.0 + lv);

    if (!std::isfinite(total)) throw NumericError("elbo_vae: non-finite objective");
    return total;
}

CodecGrads grad_elbo_vae(const LatentCodec& codec, const Matrix& x,
                         const dpmm::Responsibilities& gamma, const dpmm::DpmmModel& model,
                         const std::vector<Matrix>& eps) {
    check_vae_shapes(codec, x, gamma, model, eps);
    const std::size_t n = x.rows();
    const std::size_t d_lat = codec.latent_dim;
    const double draws = static_cast<double>(eps.size());

    ForwardCache enc_cache;
    const Matrix enc_raw = mlp_forward(codec.encoder, x, &enc_cache);
    const GaussianHeads enc = split_heads(enc_raw, d_lat);

    CodecGrads grads = CodecGrads::zeros_like(codec);
    Matrix g_mu(n, d_lat);
    Matrix g_lv(n, d_lat);

    // Coupling terms. Writing the two summands around one weighted quadratic
    // form, their gradient in each encoder mean is
    //   -sum_k gamma_nk nu_k W_k (zhat_n - m_k).
    const DpmmCoupling table = coupling_table(model);
    Vec diff(d_lat), wd(d_lat);
    for (std::size_t row = 0; row < n; ++row) {
        for (std::size_t k = 0; k < table.w.size(); ++k) {
            const double g = gamma.gamma(row, k);
            if (g == 0.0) continue;
            const Vec& m = *table.mean[k];
            for (std::size_t i = 0; i < d_lat; ++i) diff[i] = enc.mu(row, i) - m[i];
            const Matrix& w = table.w[k];
            for (std::size_t i = 0; i < d_lat; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < d_lat; ++j) s += w(i, j) * diff[j];
                g_mu(row, i) -= g * table.nu[k] * s;
            }
        }
    }

    // Entropy term.
    for (std::size_t row = 0; row < n; ++row)
        for (std::size_t i = 0; i < d_lat; ++i)
            if (clamp_open(enc_raw(row, i + d_lat))) g_lv(row, i) += 0.5;

    // Reconstruction, per draw.
    for (const Matrix& e : eps) {
        const Matrix z = reparameterize(enc.mu, enc.log_var, e);
        ForwardCache dec_cache;
        const Matrix dec_raw = mlp_forward(codec.decoder, z, &dec_cache);
        const GaussianHeads dec = split_heads(dec_raw, codec.data_dim);

        Matrix dec_head(n, 2 * codec.data_dim);
        for (std::size_t row = 0; row < n; ++row)
            for (std::size_t j = 0; j < codec.data_dim; ++j) {
                const double lv = dec.log_var(row, j);
                const double r = x(row, j) - dec.mu(row, j);
                dec_head(row, j) = r * std::exp(-lv) / draws;
                if (clamp_open(dec_raw(row, j + codec.data_dim)))
                    dec_head(row, j + codec.data_dim) =
                        -0.5 / draws * (1.0 - r * r * std::exp(-lv));
            }

        const Matrix dz = mlp_backward(codec.decoder, dec_cache, dec_head, grads.decoder);
        for (std::size_t row = 0; row < n; ++row)
            for (std::size_t i = 0; i < d_lat; ++i) {
                g_mu(row, i) += dz(row, i);
                if (clamp_open(enc_raw(row, i + d_lat)))
                    g_lv(row, i) += dz(row, i) * e(row, i)
                                  * 0.5 * std::exp(0.5 * enc.log_var(row, i));
            }
    }

    Matrix enc_head(n, 2 * d_lat);
    for (std::size_t row = 0; row < n; ++row)
        for (std::size_t i = 0; i < d_lat; ++i) {
            enc_head(row, i) = g_mu(row, i);
            enc_head(row, i + d_lat) = g_lv(row, i);
        }
    mlp_backward(codec.encoder, enc_cache, enc_head, grads.encoder);
    return grads;
}

void adam_step(AdamState& state, LatentCodec& codec, const CodecGrads& grads) {
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double corr1 = 1.0 - std::pow(state.beta1, t);
    const double corr2 = 1.0 - std::pow(state.beta2, t);

    auto update_block = [&](std::vector<Layer>& params, const std::vector<Layer>& g,
                            std::vector<Layer>& m, std::vector<Layer>& v) {
        if (params.size() != g.size()) throw ShapeError("adam_step: gradient shape mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i].weights.same_shape(g[i].weights) ||
                params[i].biases.size() != g[i].biases.size())
                throw ShapeError("adam_step: gradient shape mismatch at layer " +
                                 std::to_string(i));
            auto scalar_step = [&](double& p, double& mi, double& vi, double gi) {
                mi = state.beta1 * mi + (1.0 - state.beta1) * gi;
                vi = state.beta2 * vi + (1.0 - state.beta2) * gi * gi;
                const double mhat = mi / corr1;
                const double vhat = vi / corr2;
                p += state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
            };
            auto& wp = params[i].weights.data();
            const auto& wg = g[i].weights.data();
            auto& wm = m[i].weights.data();
            auto& wv = v[i].weights.data();
            for (std::size_t j = 0; j < wp.size(); ++j) scalar_step(wp[j], wm[j], wv[j], wg[j]);
            for (std::size_t j = 0; j < params[i].biases.size(); ++j)
                scalar_step(params[i].biases[j], m[i].biases[j], v[i].biases[j], g[i].biases[j]);
        }
    };
    update_block(codec.encoder.layers, grads.encoder, state.first_moment.encoder,
                 state.second_moment.encoder);
    update_block(codec.decoder.layers, grads.decoder, state.first_moment.decoder,
                 state.second_moment.decoder);
}

} // namespace vbs::vae

namespace vbs::dpmm {

Matrix sample_generative(const DpmmModel& model, const vae::LatentCodec& codec, std::size_t n,
                         std::uint64_t seed) {
    if (model.dim() != codec.latent_dim)
        throw ShapeError("sample_generative: latent dimension mismatch");
    if (n == 0) return Matrix(0, codec.data_dim);
    Rng rng(seed);
    auto [z, labels] = sample_latents(model, n, rng);
    (void)labels;
    return vae::decode(codec, z).mu;
}

} // namespace vbs::dpmm
