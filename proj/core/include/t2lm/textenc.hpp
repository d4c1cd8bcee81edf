#pragma once

// Two-stage autoregressive text encoder. H1 injects pooled text and length
// embeddings into T_z positional slots; H2 runs causally over
// [conditioning || index embedding] pairs and predicts the next latent index
// for each of the K codebooks.

#include <cstdint>
#include <string>
#include <vector>

#include "t2lm/config.hpp"
#include "t2lm/data.hpp"
#include "t2lm/nn.hpp"
#include "t2lm/rng.hpp"
#include "t2lm/tensor.hpp"
#include "t2lm/vqvae.hpp"

namespace t2lm::text {

using ad::TensorPtr;

// Lowercased alphanumeric runs; everything else separates tokens.
std::vector<std::string> tokenize(const std::string& text);

// Token id 0 is reserved for out-of-vocabulary words.
struct Vocab {
    std::vector<std::string> tokens;  // id = position + 1

    int id_of(const std::string& token) const;
    int size_with_oov() const { return static_cast<int>(tokens.size()) + 1; }
    static Vocab build(const std::vector<std::string>& texts);
};

template <class Real>
struct TextencParams {
    TensorPtr<Real> tok_emb;             // [vocab+1 x d_H]
    nn::Linear<Real> text_proj;          // d_H -> d_H after mean pooling
    TensorPtr<Real> len_emb;             // [T_max+1 x d_H]
    std::vector<TensorPtr<Real>> idx_emb;  // K x [C+1 x d_H]; row C = start token
    TensorPtr<Real> pe1;                 // [T_z_max x d_H]
    TensorPtr<Real> pe2;                 // [T_z_max x 2 d_H]
    std::vector<nn::TransformerLayer<Real>> h1;
    std::vector<nn::TransformerLayer<Real>> h2;
    nn::LayerNorm<Real> ln_f1;           // final norms of the pre-norm stacks
    nn::LayerNorm<Real> ln_f2;
    std::vector<nn::Linear<Real>> heads;  // K x (2 d_H -> C)

    std::vector<TensorPtr<Real>> parameters() const {
        std::vector<TensorPtr<Real>> out;
        out.push_back(tok_emb);
        text_proj.collect(out);
        out.push_back(len_emb);
        for (const auto& e : idx_emb) out.push_back(e);
        out.push_back(pe1);
        out.push_back(pe2);
        for (const auto& l : h1) l.collect(out);
        for (const auto& l : h2) l.collect(out);
        ln_f1.collect(out);
        ln_f2.collect(out);
        for (const auto& h : heads) h.collect(out);
        return out;
    }
};

inline int latent_steps_ceil(int frames, int downscale) {
    return (frames + downscale - 1) / downscale;
}

template <class Real>
TextencParams<Real> init_textenc_params(const TextencConfig& cfg, int codebooks,
                                        int codebook_size, int downscale, int vocab_size,
                                        Rng& rng) {
    TextencParams<Real> p;
    const int dh = cfg.d_model;
    const int tz_max = latent_steps_ceil(cfg.t_max, downscale);
    const Real s = Real(0.02);
    p.tok_emb = ad::randn<Real>({vocab_size + 1, dh}, s, rng);
    p.text_proj = nn::Linear<Real>::init(dh, dh, s, rng);
    p.len_emb = ad::randn<Real>({cfg.t_max + 1, dh}, s, rng);
    for (int k = 0; k < codebooks; ++k)
        p.idx_emb.push_back(ad::randn<Real>({codebook_size + 1, dh}, s, rng));
    p.pe1 = ad::randn<Real>({tz_max, dh}, s, rng);
    p.pe2 = ad::randn<Real>({tz_max, 2 * dh}, s, rng);
    for (int i = 0; i < cfg.layers; ++i) {
        p.h1.push_back(nn::TransformerLayer<Real>::init(dh, cfg.heads, cfg.inner, rng));
        p.h2.push_back(nn::TransformerLayer<Real>::init(2 * dh, cfg.heads, cfg.inner, rng));
    }
    p.ln_f1 = nn::LayerNorm<Real>::init(dh);
    p.ln_f2 = nn::LayerNorm<Real>::init(2 * dh);
    for (int k = 0; k < codebooks; ++k)
        p.heads.push_back(nn::Linear<Real>::init(2 * dh, codebook_size, s, rng));
    return p;
}

// Pooled token embedding projected to d_H; a [1 x d_H] tensor.
template <class Real>
TensorPtr<Real> text_embedding(const TextencParams<Real>& p, const std::vector<int>& token_ids) {
    std::vector<int> ids = token_ids.empty() ? std::vector<int>{0} : token_ids;
    auto pooled = ad::mean_rows(ad::take_rows(p.tok_emb, ids));
    return p.text_proj.forward(pooled);
}

// H1 over [e_text, e_len, PE1[0..t_z)]; keeps output positions 2..t_z+2.
template <class Real>
TensorPtr<Real> condition_forward(const TextencParams<Real>& p, const TensorPtr<Real>& e_text,
                                  int frames, int t_z) {
    if (frames < 0 || frames >= p.len_emb->shape[0])
        throw ValueError("condition_forward: length outside the embedding table");
    if (t_z < 1 || t_z > p.pe1->shape[0])
        throw ValueError("condition_forward: latent step count out of range");
    auto e_len = ad::take_rows(p.len_emb, {frames});
    auto slots = ad::slice_rows(p.pe1, 0, t_z);
    auto h = ad::concat_rows<Real>({e_text, e_len, slots});
    for (const auto& layer : p.h1) h = layer.forward(h, /*causal=*/false);
    h = p.ln_f1.forward(h);
    return ad::slice_rows(h, 2, t_z + 2);
}

// Causal H2 over `steps` positions. Step i consumes [cond_i || e_idx_i] where
// e_idx_0 is the start embedding and e_idx_i sums the K book embeddings of
// prefix step i. Returns the trunk output [steps x 2 d_H].
template <class Real>
TensorPtr<Real> h2_forward(const TextencParams<Real>& p, const TensorPtr<Real>& cond,
                           const vq::IndexSequence& prefix, int steps) {
    const int K = static_cast<int>(p.idx_emb.size());
    if (steps < 1) throw ValueError("h2_forward: needs at least one step");
    if (cond->shape[0] < steps) throw ValueError("h2_forward: prefix longer than conditioning");
    if (steps > p.pe2->shape[0]) throw ValueError("h2_forward: exceeds positional table");
    if (prefix.steps + 1 < steps) throw ValueError("h2_forward: prefix too short");

    const int start_row = p.idx_emb[0]->shape[0] - 1;  // row C
    TensorPtr<Real> e_idx;
    for (int k = 0; k < K; ++k) {
        std::vector<int> rows(static_cast<std::size_t>(steps));
        rows[0] = start_row;
        for (int i = 1; i < steps; ++i) rows[static_cast<std::size_t>(i)] = prefix.at(i - 1, k);
        auto e = ad::take_rows(p.idx_emb[static_cast<std::size_t>(k)], rows);
        e_idx = e_idx ? ad::add(e_idx, e) : e;
    }
    auto x = ad::concat_cols<Real>({ad::slice_rows(cond, 0, steps), e_idx});
    x = ad::add(x, ad::slice_rows(p.pe2, 0, steps));
    for (const auto& layer : p.h2) x = layer.forward(x, /*causal=*/true);
    return p.ln_f2.forward(x);
}

// ---------------------------------------------------------------------------
// trained model (float)

// Plain row-major matrix for conditioning sequences handed across the API.
struct Embedding {
    int rows = 0;
    int dim = 0;
    std::vector<float> values;
};

struct SamplingStrategy {
    enum class Kind { greedy, topk };
    Kind kind = Kind::greedy;
    int k = 10;
    double temperature = 1.0;

    static SamplingStrategy greedy() { return {}; }
    static SamplingStrategy topk(int k, double temperature) {
        return {Kind::topk, k, temperature};
    }
};

struct TextEncoder {
    TextencConfig config;
    int codebooks = 0;
    int codebook_size = 0;
    int downscale = 4;
    Vocab vocab;
    std::string codebook_hash;  // pairs the model with its vqvae
    TextencParams<float> params;
};

TextEncoder make_text_encoder(const TextencConfig& cfg, int codebooks, int codebook_size,
                              int downscale, const Vocab& vocab, Rng& rng);

std::vector<float> text_embedding_values(const TextEncoder& model, const std::string& text);

// Conditioning for a requested length T: t_z = ceil(T / l) slots.
Embedding embed_condition(const TextEncoder& model, const std::string& text, int frames);
Embedding condition_from_etext(const TextEncoder& model, const std::vector<float>& e_text,
                               int frames, int t_z);

// K logit rows over C for the step following `prefix`.
std::vector<std::vector<float>> next_index_logits(const TextEncoder& model,
                                                  const Embedding& cond,
                                                  const vq::IndexSequence& prefix);

vq::IndexSequence sample_from_condition(const TextEncoder& model, const Embedding& cond,
                                        const SamplingStrategy& strategy, Rng& rng);
vq::IndexSequence sample_indices(const TextEncoder& model, const std::string& text,
                                 int frames, const SamplingStrategy& strategy, Rng& rng);

struct TrainOptions {
    int steps = 1000;
    int batch = 8;
    double lr = 3e-4;
    int scheduler_step = 0;
    double scheduler_decay = 0.5;
    double p_corrupt = 0.5;
    int log_every = 0;
};

struct TrainStepRecord {
    int step = 0;
    float nll = 0;
};

TextEncoder train_text_encoder(const TextencConfig& cfg, const vq::Vqvae& vqvae,
                               const std::vector<data::LabeledSample>& corpus,
                               const TrainOptions& opt, Rng rng,
                               std::vector<TrainStepRecord>* history = nullptr);

void save_text_encoder(const std::string& path, const TextEncoder& model);
TextEncoder load_text_encoder(const std::string& path);

}  // namespace t2lm::text
