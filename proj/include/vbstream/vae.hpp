#pragma once

#include <cstdint>
#include <vector>

#include "vbstream/dpmm.hpp"
#include "vbstream/matrix.hpp"
#include "vbstream/rng.hpp"

namespace vbs::vae {

enum class Activation { Tanh, Softplus };

// One fully connected layer; weights are (out x in), row-major.
struct Layer {
    Matrix weights;
    Vec biases;
};

// Stack of layers with the chosen activation on hidden layers and a linear head.
struct MlpParams {
    std::vector<Layer> layers;
    Activation activation = Activation::Tanh;

    std::size_t input_dim() const { return layers.front().weights.cols(); }
    std::size_t output_dim() const { return layers.back().weights.rows(); }
    void validate() const;
};

// log-variance heads are clamped into this window so entropy and
// reconstruction terms cannot diverge.
constexpr double kLogVarClampLo = -10.0;
constexpr double kLogVarClampHi = 10.0;

struct LatentCodec {
    MlpParams encoder; // maps d -> 2D as (mu | log sigma^2)
    MlpParams decoder; // maps D -> 2d as (mu_x | log sigma_x^2)
    std::size_t latent_dim = 0;
    std::size_t data_dim = 0;

    // Fan-in scaled uniform init (+-sqrt(6/(fan_in+fan_out))); `hidden` lists the
    // encoder's hidden widths, the decoder mirrors them.
    static LatentCodec init(std::size_t data_dim, std::size_t latent_dim,
                            const std::vector<std::size_t>& hidden, Activation act, Rng& rng);
    void validate() const;
};

// Gradients (or any other accumulator) shaped exactly like a codec.
struct CodecGrads {
    std::vector<Layer> encoder;
    std::vector<Layer> decoder;

    static CodecGrads zeros_like(const LatentCodec& codec);
    CodecGrads& operator+=(const CodecGrads& o);
    CodecGrads& operator*=(double s);
    double max_abs() const;
};

struct AdamState {
    CodecGrads first_moment;
    CodecGrads second_moment;
    std::uint64_t step = 0;
    double learning_rate = 2e-3;
    double lr_decay = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState init(const LatentCodec& codec, double lr = 2e-3, double decay = 0.9);
    void advance_epoch() { learning_rate *= lr_decay; }
};

struct GaussianHeads {
    Matrix mu;
    Matrix log_var; // clamped
};

// Forward activations cached for the backward pass.
struct ForwardCache {
    std::vector<Matrix> inputs; // inputs[i] is what layer i consumed
    std::vector<Matrix> pre;    // pre-activation outputs per layer
    Matrix output;              // raw (unclamped) final output
};

Matrix mlp_forward(const MlpParams& mlp, const Matrix& x, ForwardCache* cache = nullptr);

// dL/d(input) given dL/d(output); accumulates per-layer gradients into `grads`.
Matrix mlp_backward(const MlpParams& mlp, const ForwardCache& cache, const Matrix& grad_out,
                    std::vector<Layer>& grads);

GaussianHeads encode(const LatentCodec& codec, const Matrix& x);
GaussianHeads decode(const LatentCodec& codec, const Matrix& z);

// mu + eps .* exp(log_var / 2), elementwise.
Matrix reparameterize(const Matrix& mu, const Matrix& log_var, const Matrix& eps);

// The codec-facing slice of the joint objective: the two DPMM coupling terms
// evaluated at the encoder means, the Gaussian reconstruction term averaged
// over the eps draws, and the encoder entropy. Maximized during training.
double elbo_vae(const LatentCodec& codec, const Matrix& x, const dpmm::Responsibilities& gamma,
                const dpmm::DpmmModel& model, const std::vector<Matrix>& eps);

// Reverse-mode gradients of elbo_vae with eps held fixed.
CodecGrads grad_elbo_vae(const LatentCodec& codec, const Matrix& x,
                         const dpmm::Responsibilities& gamma, const dpmm::DpmmModel& model,
                         const std::vector<Matrix>& eps);

// One Adam ascent step in place; bias-corrected, direction fixed as maximize.
void adam_step(AdamState& state, LatentCodec& codec, const CodecGrads& grads);

} // namespace vbs::vae
