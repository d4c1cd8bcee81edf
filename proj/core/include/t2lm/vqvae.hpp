#pragma once

// 1D-convolutional VQ-VAE: stride-2 conv encoder (downscale 4), product
// quantizer over K codebooks, nearest-upsampling decoder, straight-through
// training loss. The forward path is templated so composite blocks can run
// under the double-precision gradient checker.

#include <cstdint>
#include <string>
#include <vector>

#include "t2lm/config.hpp"
#include "t2lm/data.hpp"
#include "t2lm/motion.hpp"
#include "t2lm/nn.hpp"
#include "t2lm/rng.hpp"
#include "t2lm/tensor.hpp"

namespace t2lm::vq {

using ad::TensorPtr;

// Continuous latent stream: steps x dim, dim = K * code_dim.
struct LatentSequence {
    int steps = 0;
    int dim = 0;
    std::vector<float> values;

    float& at(int t, int c) { return values[static_cast<std::size_t>(t) * dim + c]; }
    const float& at(int t, int c) const {
        return values[static_cast<std::size_t>(t) * dim + c];
    }
};

// Discrete codes: steps x books, every entry in [0, C).
struct IndexSequence {
    int steps = 0;
    int books = 0;
    std::vector<int> indices;

    int& at(int t, int k) { return indices[static_cast<std::size_t>(t) * books + k]; }
    const int& at(int t, int k) const {
        return indices[static_cast<std::size_t>(t) * books + k];
    }
};

template <class Real>
struct VqvaeParams {
    struct DownStage {
        nn::Conv1dLayer<Real> down;
        std::vector<nn::ResBlock1d<Real>> blocks;
    };
    struct UpStage {
        nn::Conv1dLayer<Real> conv;
        std::vector<nn::ResBlock1d<Real>> blocks;
    };

    nn::Conv1dLayer<Real> enc_in;   // d -> w
    std::vector<DownStage> enc_stages;  // exactly two stride-2 stages
    nn::Conv1dLayer<Real> enc_out;  // w -> d_V
    nn::Conv1dLayer<Real> dec_in;   // d_V -> w
    std::vector<UpStage> dec_stages;    // exactly two x2 upsamplings
    nn::Conv1dLayer<Real> dec_out;  // w -> d
    std::vector<TensorPtr<Real>> books;  // K tensors [C x code_dim]
    TensorPtr<Real> trans;               // [n_trans x d_V], null when n_trans = 0
    // Per-channel standardization constants, not trained.
    TensorPtr<Real> norm_mean;  // [d]
    TensorPtr<Real> norm_std;   // [d]

    std::vector<TensorPtr<Real>> parameters() const {
        std::vector<TensorPtr<Real>> out;
        enc_in.collect(out);
        for (const auto& s : enc_stages) {
            s.down.collect(out);
            for (const auto& b : s.blocks) b.collect(out);
        }
        enc_out.collect(out);
        dec_in.collect(out);
        for (const auto& s : dec_stages) {
            s.conv.collect(out);
            for (const auto& b : s.blocks) b.collect(out);
        }
        dec_out.collect(out);
        for (const auto& b : books) out.push_back(b);
        if (trans) out.push_back(trans);
        return out;
    }
};

template <class Real>
VqvaeParams<Real> init_vqvae_params(const VqvaeConfig& cfg, int input_dim, Rng& rng) {
    VqvaeParams<Real> p;
    const int w = cfg.width;
    const int dv = cfg.latent_dim();
    p.enc_in = nn::Conv1dLayer<Real>::init(input_dim, w, 3, 1, 1, rng);
    for (int s = 0; s < 2; ++s) {
        typename VqvaeParams<Real>::DownStage st;
        st.down = nn::Conv1dLayer<Real>::init(w, w, 3, 2, 1, rng);
        for (int b = 0; b < cfg.res_blocks; ++b)
            st.blocks.push_back(nn::ResBlock1d<Real>::init(w, rng));
        p.enc_stages.push_back(std::move(st));
    }
    p.enc_out = nn::Conv1dLayer<Real>::init(w, dv, 3, 1, 1, rng);
    p.dec_in = nn::Conv1dLayer<Real>::init(dv, w, 3, 1, 1, rng);
    for (int s = 0; s < 2; ++s) {
        typename VqvaeParams<Real>::UpStage st;
        st.conv = nn::Conv1dLayer<Real>::init(w, w, 3, 1, 1, rng);
        for (int b = 0; b < cfg.res_blocks; ++b)
            st.blocks.push_back(nn::ResBlock1d<Real>::init(w, rng));
        p.dec_stages.push_back(std::move(st));
    }
    p.dec_out = nn::Conv1dLayer<Real>::init(w, input_dim, 3, 1, 1, rng);
    for (int k = 0; k < cfg.codebooks; ++k)
        p.books.push_back(ad::randn<Real>({cfg.codebook_size, cfg.code_dim}, Real(1), rng));
    if (cfg.n_trans > 0)
        p.trans = ad::randn<Real>({cfg.n_trans, dv}, Real(0.02), rng);
    p.norm_mean = ad::zeros<Real>({input_dim});
    p.norm_std = ad::full<Real>({input_dim}, Real(1));
    return p;
}

// x: standardized motion as [d x T] with T a multiple of the downscale.
// Returns the latent stream as [T_z x d_V] (rows = time).
template <class Real>
TensorPtr<Real> encoder_forward(const VqvaeParams<Real>& p, const TensorPtr<Real>& x) {
    auto h = ad::relu(p.enc_in.forward(x));
    for (const auto& s : p.enc_stages) {
        h = ad::relu(s.down.forward(h));
        for (const auto& b : s.blocks) h = b.forward(h);
    }
    return ad::transpose(p.enc_out.forward(h));
}

// zq: [T_z x d_V]; returns standardized motion [d x (l * T_z)].
template <class Real>
TensorPtr<Real> decoder_forward(const VqvaeParams<Real>& p, const TensorPtr<Real>& zq) {
    auto h = ad::relu(p.dec_in.forward(ad::transpose(zq)));
    for (const auto& s : p.dec_stages) {
        h = ad::upsample_nearest2(h);
        h = ad::relu(s.conv.forward(h));
        for (const auto& b : s.blocks) h = b.forward(h);
    }
    return p.dec_out.forward(h);
}

// Nearest codebook entry per chunk by squared Euclidean distance, ties broken
// by the lowest index.
template <class Real>
IndexSequence nearest_indices(const std::vector<TensorPtr<Real>>& books,
                              const ad::Tensor<Real>& z) {
    const int K = static_cast<int>(books.size());
    if (K < 1) throw ValueError("quantize: no codebooks");
    const int dc = books[0]->shape.at(1);
    if (z.ndim() != 2 || z.shape[1] != K * dc)
        throw ShapeError("quantize: latent channel dim must equal K * code_dim");
    const int tz = z.shape[0];
    IndexSequence out;
    out.steps = tz;
    out.books = K;
    out.indices.assign(static_cast<std::size_t>(tz) * K, 0);
    for (int t = 0; t < tz; ++t) {
        for (int k = 0; k < K; ++k) {
            const Real* chunk = &z.data[static_cast<std::size_t>(t) * z.shape[1] + k * dc];
            const auto& book = *books[static_cast<std::size_t>(k)];
            const int C = book.shape[0];
            Real best = Real(0);
            int best_i = 0;
            for (int c = 0; c < C; ++c) {
                const Real* row = &book.data[static_cast<std::size_t>(c) * dc];
                Real dist = Real(0);
#pragma omp simd reduction(+ : dist)
                for (int j = 0; j < dc; ++j) {
                    const Real diff = chunk[j] - row[j];
                    dist += diff * diff;
                }
                if (c == 0 || dist < best) {
                    best = dist;
                    best_i = c;
                }
            }
            out.at(t, k) = best_i;
        }
    }
    return out;
}

template <class Real>
struct QuantizeOut {
    IndexSequence indices;
    TensorPtr<Real> zq_live;  // codebook rows; gradients reach the books
    TensorPtr<Real> zq_st;    // forward = zq, backward copies to the encoder
};

template <class Real>
QuantizeOut<Real> quantize_st(const std::vector<TensorPtr<Real>>& books,
                              const TensorPtr<Real>& z) {
    QuantizeOut<Real> out;
    out.indices = nearest_indices(books, *z);
    const int K = out.indices.books;
    std::vector<TensorPtr<Real>> chunks;
    chunks.reserve(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        std::vector<int> idx(static_cast<std::size_t>(out.indices.steps));
        for (int t = 0; t < out.indices.steps; ++t) idx[static_cast<std::size_t>(t)] = out.indices.at(t, k);
        chunks.push_back(ad::take_rows(books[static_cast<std::size_t>(k)], idx));
    }
    out.zq_live = K == 1 ? chunks[0] : ad::concat_cols(chunks);
    out.zq_st = ad::add(z, ad::detach(ad::sub(out.zq_live, z)));
    return out;
}

template <class Real>
struct VqLossParts {
    TensorPtr<Real> total;
    TensorPtr<Real> recon;
    TensorPtr<Real> codebook;
    TensorPtr<Real> commit;
    IndexSequence indices;
};

template <class Real>
TensorPtr<Real> mse(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
    auto d = ad::sub(a, b);
    return ad::mean(ad::mul(d, d));
}

// L1 on positions plus L1 on frame-difference velocities; both operands in
// [d x T] layout.
template <class Real>
TensorPtr<Real> recon_loss(const TensorPtr<Real>& xhat, const TensorPtr<Real>& x) {
    auto pos = ad::mean(ad::abs_val(ad::sub(xhat, x)));
    const int T = x->shape.at(1);
    if (T < 2) return pos;
    auto vel_hat = ad::sub(ad::slice_cols(xhat, 1, T), ad::slice_cols(xhat, 0, T - 1));
    auto vel = ad::sub(ad::slice_cols(x, 1, T), ad::slice_cols(x, 0, T - 1));
    return ad::add(pos, ad::mean(ad::abs_val(ad::sub(vel_hat, vel))));
}

// Full straight-through training loss for one motion (already cropped to a
// multiple of the downscale). Optionally substitutes a contiguous span of
// latent steps with the learned transition vectors before decoding.
template <class Real>
VqLossParts<Real> vq_loss_on_tensor(const VqvaeParams<Real>& p, Real beta,
                                    const TensorPtr<Real>& x_raw, int subst_at = -1) {
    const int d = x_raw->shape.at(0);
    std::vector<Real> inv_std(static_cast<std::size_t>(d));
    for (int c = 0; c < d; ++c) inv_std[static_cast<std::size_t>(c)] = Real(1) / p.norm_std->data[c];
    auto x_norm = ad::mul_colvec(ad::add_colvec(x_raw, ad::scale(p.norm_mean, Real(-1))),
                                 ad::make_tensor<Real>({d}, inv_std));
    auto z = encoder_forward(p, x_norm);
    auto q = quantize_st(p.books, z);

    TensorPtr<Real> dec_input = q.zq_st;
    if (subst_at >= 0) {
        if (!p.trans) throw ConfigError("transition substitution without transition vectors");
        const int n_trans = p.trans->shape[0];
        const int tz = z->shape[0];
        if (subst_at + n_trans > tz) throw ValueError("transition span out of range");
        std::vector<TensorPtr<Real>> parts;
        if (subst_at > 0) parts.push_back(ad::slice_rows(q.zq_st, 0, subst_at));
        parts.push_back(p.trans);
        if (subst_at + n_trans < tz)
            parts.push_back(ad::slice_rows(q.zq_st, subst_at + n_trans, tz));
        dec_input = parts.size() == 1 ? parts[0] : ad::concat_rows(parts);
    }

    auto y_norm = decoder_forward(p, dec_input);
    auto xhat = ad::add_colvec(ad::mul_colvec(y_norm, p.norm_std), p.norm_mean);

    VqLossParts<Real> out;
    out.indices = std::move(q.indices);
    out.recon = recon_loss(xhat, x_raw);
    out.codebook = mse(ad::detach(z), q.zq_live);
    out.commit = ad::scale(mse(z, ad::detach(q.zq_live)), beta);
    out.total = ad::add(ad::add(out.recon, out.codebook), out.commit);
    return out;
}

// ---------------------------------------------------------------------------
// trained model (float) and its operations

struct Vqvae {
    VqvaeConfig config;
    int input_dim = 0;
    int fps = 20;
    VqvaeParams<float> params;
};

Vqvae make_vqvae(const VqvaeConfig& cfg, int input_dim, int fps, Rng& rng);

// Crops to l*floor(T/l) frames; T < l is an error.
LatentSequence encode(const Vqvae& model, const Motion& x);
std::pair<IndexSequence, LatentSequence> quantize(const Vqvae& model,
                                                  const LatentSequence& z);
Motion decode(const Vqvae& model, const LatentSequence& zq);
// Codebook lookup for sampled index grids.
LatentSequence dereference(const Vqvae& model, const IndexSequence& idx);
// Rows of the learned transition matrix, n_trans x d_V.
LatentSequence transition_latents(const Vqvae& model);

struct VqLossValues {
    float total = 0, recon = 0, codebook = 0, commit = 0;
};
VqLossValues vq_loss(const Vqvae& model, const Motion& x);

struct TrainOptions {
    int steps = 1000;
    int batch = 8;
    double lr = 2e-4;
    int scheduler_step = 0;  // steps per lr decay; 0 disables
    double scheduler_decay = 0.5;
    double p_aug = 0.5;
    double p_trans_subst = 0.3;  // transition substitution rate (n_trans > 0)
    int dead_code_steps = 256;
    int log_every = 0;
};

struct TrainStepRecord {
    int step = 0;
    float total = 0, recon = 0, codebook = 0, commit = 0;
};

Vqvae train_vqvae(const VqvaeConfig& cfg, const std::vector<data::LabeledSample>& corpus,
                  const TrainOptions& opt, Rng rng,
                  std::vector<TrainStepRecord>* history = nullptr);

struct CodebookHealth {
    std::vector<std::vector<long>> usage;  // [K][C] index frequencies
    int dead_codes = 0;                    // never-used entries across books
    long total_steps = 0;                  // latent steps encoded
};
CodebookHealth codebook_health(const Vqvae& model,
                               const std::vector<data::LabeledSample>& corpus);

// Latent-step radius of the decoder's receptive field: perturbing latent
// step j can change output frames only inside [l*(j-R), l*(j+R+1)).
int decoder_receptive_radius(const VqvaeConfig& cfg);

void save_vqvae(const std::string& path, const Vqvae& model);
Vqvae load_vqvae(const std::string& path);

}  // namespace t2lm::vq
