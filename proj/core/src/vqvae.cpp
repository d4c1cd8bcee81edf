#include "t2lm/vqvae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "t2lm/checkpoint.hpp"
#include "t2lm/errors.hpp"
#include "t2lm/optim.hpp"

namespace t2lm::vq {

using ad::make_tensor;
using nlohmann::json;

namespace {

// Motion rows are time-major; conv tensors are [channels x time].
ad::TensorPtr<float> motion_to_ct(const Motion& m, int frames) {
    std::vector<float> data(static_cast<std::size_t>(m.dim) * frames);
    for (int c = 0; c < m.dim; ++c)
        for (int t = 0; t < frames; ++t)
            data[static_cast<std::size_t>(c) * frames + t] = m.at(t, c);
    return make_tensor<float>({m.dim, frames}, std::move(data));
}

Motion ct_to_motion(const ad::Tensor<float>& x, int fps) {
    Motion m = Motion::empty(x.shape[1], x.shape[0], fps);
    for (int c = 0; c < m.dim; ++c)
        for (int t = 0; t < m.frames; ++t) m.at(t, c) = x.at(c, t);
    return m;
}

ad::TensorPtr<float> latent_tensor(const LatentSequence& z) {
    return make_tensor<float>({z.steps, z.dim}, z.values);
}

LatentSequence tensor_to_latent(const ad::Tensor<float>& t) {
    LatentSequence z;
    z.steps = t.shape[0];
    z.dim = t.shape[1];
    z.values = t.data;
    return z;
}

int cropped_frames(const Motion& x, int l) {
    if (x.frames < l)
        throw ValueError("encode: motion shorter than the downscale factor");
    return l * (x.frames / l);
}

void standardize_inplace(const Vqvae& model, ad::TensorPtr<float>& x_ct) {
    const int d = x_ct->shape[0], T = x_ct->shape[1];
    for (int c = 0; c < d; ++c) {
        const float mu = model.params.norm_mean->data[c];
        const float inv = 1.0f / model.params.norm_std->data[c];
        float* row = &x_ct->data[static_cast<std::size_t>(c) * T];
        for (int t = 0; t < T; ++t) row[t] = (row[t] - mu) * inv;
    }
}

}  // namespace

Vqvae make_vqvae(const VqvaeConfig& cfg, int input_dim, int fps, Rng& rng) {
    Vqvae m;
    m.config = cfg;
    m.input_dim = input_dim;
    m.fps = fps;
    m.params = init_vqvae_params<float>(cfg, input_dim, rng);
    return m;
}

LatentSequence encode(const Vqvae& model, const Motion& x) {
    if (x.dim != model.input_dim) throw ShapeError("encode: motion dimension mismatch");
    const int T = cropped_frames(x, model.config.downscale);
    auto x_ct = motion_to_ct(x, T);
    standardize_inplace(model, x_ct);
    auto z = encoder_forward(model.params, x_ct);
    return tensor_to_latent(*z);
}

std::pair<IndexSequence, LatentSequence> quantize(const Vqvae& model,
                                                  const LatentSequence& z) {
    auto zt = latent_tensor(z);
    IndexSequence idx = nearest_indices(model.params.books, *zt);
    return {idx, dereference(model, idx)};
}

LatentSequence dereference(const Vqvae& model, const IndexSequence& idx) {
    const int K = model.config.codebooks;
    if (idx.books != K) throw ConfigError("dereference: book count mismatch");
    const int dc = model.config.code_dim;
    LatentSequence z;
    z.steps = idx.steps;
    z.dim = K * dc;
    z.values.assign(static_cast<std::size_t>(z.steps) * z.dim, 0.0f);
    for (int t = 0; t < idx.steps; ++t) {
        for (int k = 0; k < K; ++k) {
            const int c = idx.at(t, k);
            if (c < 0 || c >= model.config.codebook_size)
                throw ValueError("dereference: index out of range");
            const float* row =
                &model.params.books[static_cast<std::size_t>(k)]->data[static_cast<std::size_t>(c) * dc];
            std::copy(row, row + dc, &z.values[static_cast<std::size_t>(t) * z.dim + k * dc]);
        }
    }
    return z;
}

LatentSequence transition_latents(const Vqvae& model) {
    if (!model.params.trans) throw ConfigError("model has no transition vectors");
    return tensor_to_latent(*model.params.trans);
}

Motion decode(const Vqvae& model, const LatentSequence& zq) {
    if (zq.steps < 1) throw ValueError("decode: empty latent sequence");
    if (zq.dim != model.config.latent_dim())
        throw ShapeError("decode: latent dimension mismatch");
    auto y = decoder_forward(model.params, latent_tensor(zq));
    Motion m = ct_to_motion(*y, model.fps);
    for (int c = 0; c < m.dim; ++c) {
        const float mu = model.params.norm_mean->data[c];
        const float sd = model.params.norm_std->data[c];
        for (int t = 0; t < m.frames; ++t) m.at(t, c) = m.at(t, c) * sd + mu;
    }
    return m;
}

VqLossValues vq_loss(const Vqvae& model, const Motion& x) {
    if (x.dim != model.input_dim) throw ShapeError("vq_loss: motion dimension mismatch");
    const int T = cropped_frames(x, model.config.downscale);
    auto parts = vq_loss_on_tensor(model.params, static_cast<float>(model.config.beta),
                                   motion_to_ct(x, T));
    VqLossValues v;
    v.total = parts.total->data[0];
    v.recon = parts.recon->data[0];
    v.codebook = parts.codebook->data[0];
    v.commit = parts.commit->data[0];
    if (!std::isfinite(v.total)) throw ValueError("vq_loss: non-finite loss");
    return v;
}

Vqvae train_vqvae(const VqvaeConfig& cfg, const std::vector<data::LabeledSample>& corpus,
                  const TrainOptions& opt, Rng rng,
                  std::vector<TrainStepRecord>* history) {
    if (corpus.empty()) throw ValueError("train_vqvae: empty corpus");
    const int d = corpus[0].motion.dim;
    const int fps = corpus[0].motion.fps;
    for (const auto& s : corpus) {
        if (s.motion.dim != d) throw ShapeError("train_vqvae: inconsistent motion dims");
        if (s.motion.frames < cfg.downscale)
            throw ValueError("train_vqvae: sample shorter than the downscale factor");
    }

    Rng init_rng = rng.child(1);
    Vqvae model = make_vqvae(cfg, d, fps, init_rng);

    // Channel statistics over the whole corpus drive the internal
    // standardization; stored with the weights.
    {
        std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
        std::vector<double> sq(static_cast<std::size_t>(d), 0.0);
        long total = 0;
        for (const auto& s : corpus) {
            for (int t = 0; t < s.motion.frames; ++t)
                for (int c = 0; c < d; ++c) {
                    mean[static_cast<std::size_t>(c)] += s.motion.at(t, c);
                    sq[static_cast<std::size_t>(c)] +=
                        static_cast<double>(s.motion.at(t, c)) * s.motion.at(t, c);
                }
            total += s.motion.frames;
        }
        for (int c = 0; c < d; ++c) {
            const double mu = mean[static_cast<std::size_t>(c)] / total;
            const double var = sq[static_cast<std::size_t>(c)] / total - mu * mu;
            model.params.norm_mean->data[c] = static_cast<float>(mu);
            model.params.norm_std->data[c] =
                static_cast<float>(std::sqrt(std::max(var, 1e-8)) + 1e-4);
        }
    }

    // Codebook init: zero-mean Gaussian scaled to the encoder-output std of a
    // warmup batch, so the first quantization round is not degenerate.
    {
        Rng warm_rng = rng.child(2);
        const int warm = static_cast<int>(std::min<std::size_t>(corpus.size(), 8));
        double sq = 0.0;
        long n = 0;
        for (int i = 0; i < warm; ++i) {
            const auto& m = corpus[static_cast<std::size_t>(i)].motion;
            auto x = motion_to_ct(m, cropped_frames(m, cfg.downscale));
            standardize_inplace(model, x);
            auto z = encoder_forward(model.params, x);
            for (float v : z->data) sq += static_cast<double>(v) * v;
            n += static_cast<long>(z->numel());
        }
        const float z_std = static_cast<float>(std::sqrt(std::max(sq / std::max(n, 1L), 1e-8)));
        for (auto& book : model.params.books)
            for (auto& v : book->data)
                v = static_cast<float>(warm_rng.normal(0.0, z_std));
    }

    auto params = model.params.parameters();
    AdamW<float>::Options aopt;
    aopt.lr = static_cast<float>(opt.lr);
    AdamW<float> optim(params, aopt);

    const int K = cfg.codebooks;
    const int C = cfg.codebook_size;
    std::vector<std::vector<int>> last_used(static_cast<std::size_t>(K),
                                            std::vector<int>(static_cast<std::size_t>(C), 0));

    Rng order_rng = rng.child(3);
    Rng aug_rng = rng.child(4);
    Rng reseed_rng = rng.child(5);
    std::vector<int> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();  // forces a shuffle on the first step

    for (int step = 1; step <= opt.steps; ++step) {
        if (opt.scheduler_step > 0) {
            StepLr sched{opt.lr, opt.scheduler_step, opt.scheduler_decay};
            optim.set_lr(static_cast<float>(sched.at(step - 1)));
        }
        optim.zero_grad();

        TrainStepRecord rec;
        rec.step = step;
        const int batch = static_cast<int>(std::min<std::size_t>(opt.batch, corpus.size()));
        for (int b = 0; b < batch; ++b) {
            if (cursor >= order.size()) {
                Rng shuffle_rng = order_rng.child(static_cast<std::uint64_t>(step));
                for (std::size_t i = order.size(); i > 1; --i)
                    std::swap(order[i - 1],
                              order[static_cast<std::size_t>(shuffle_rng.uniform_int(
                                  static_cast<std::int64_t>(i)))]);
                cursor = 0;
            }
            const auto& sample = corpus[static_cast<std::size_t>(order[cursor++])];

            Rng srng = aug_rng.child(static_cast<std::uint64_t>(step) * 1024 + b);
            Motion m = sample.motion;
            if (opt.p_aug > 0 && srng.uniform() < opt.p_aug && m.frames >= 2) {
                const int lo = std::min(m.frames, data::kMinSampleFrames);
                const int new_len =
                    lo + static_cast<int>(srng.uniform_int(data::kMaxSampleFrames - lo + 1));
                m = data::interp_resample(m, new_len);
            }
            auto x = motion_to_ct(m, cropped_frames(m, cfg.downscale));
            int subst_at = -1;
            if (cfg.n_trans > 0) {
                const int tz = x->shape[1] / cfg.downscale;
                if (tz > cfg.n_trans && srng.uniform() < opt.p_trans_subst)
                    subst_at = static_cast<int>(srng.uniform_int(tz - cfg.n_trans + 1));
            }
            auto parts = vq_loss_on_tensor(model.params, static_cast<float>(cfg.beta), x,
                                           subst_at);
            auto scaled = ad::scale(parts.total, 1.0f / batch);
            ad::backward(scaled);

            rec.total += parts.total->data[0] / batch;
            rec.recon += parts.recon->data[0] / batch;
            rec.codebook += parts.codebook->data[0] / batch;
            rec.commit += parts.commit->data[0] / batch;

            const auto& idx = parts.indices;
            for (int t = 0; t < idx.steps; ++t)
                for (int k = 0; k < K; ++k)
                    last_used[static_cast<std::size_t>(k)][static_cast<std::size_t>(idx.at(t, k))] = step;
        }
        if (!std::isfinite(rec.total))
            throw ValueError("train_vqvae: loss diverged at step " + std::to_string(step));
        optim.step();

        // Re-seed codebook entries that have been idle too long from fresh
        // encoder outputs of a random sample.
        if (opt.dead_code_steps > 0 && step % opt.dead_code_steps == 0) {
            std::vector<std::pair<int, int>> dead;
            for (int k = 0; k < K; ++k)
                for (int c = 0; c < C; ++c)
                    if (step - last_used[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)] >=
                        opt.dead_code_steps)
                        dead.emplace_back(k, c);
            if (!dead.empty()) {
                Rng r = reseed_rng.child(static_cast<std::uint64_t>(step));
                const auto& sample =
                    corpus[static_cast<std::size_t>(r.uniform_int(
                        static_cast<std::int64_t>(corpus.size())))];
                auto z = encode(model, sample.motion);
                const int dc = cfg.code_dim;
                for (auto [k, c] : dead) {
                    const int t = static_cast<int>(r.uniform_int(z.steps));
                    float* dst =
                        &model.params.books[static_cast<std::size_t>(k)]->data[static_cast<std::size_t>(c) * dc];
                    const float* src = &z.values[static_cast<std::size_t>(t) * z.dim + k * dc];
                    for (int j = 0; j < dc; ++j)
                        dst[j] = src[j] + static_cast<float>(r.normal(0.0, 1e-3));
                    last_used[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)] = step;
                }
            }
        }

        if (history) history->push_back(rec);
        if (opt.log_every > 0 && step % opt.log_every == 0)
            std::fprintf(stderr, "[train-vqvae] step %d/%d total %.5f recon %.5f code %.5f commit %.5f\n",
                         step, opt.steps, rec.total, rec.recon, rec.codebook, rec.commit);
    }
    return model;
}

CodebookHealth codebook_health(const Vqvae& model,
                               const std::vector<data::LabeledSample>& corpus) {
    CodebookHealth h;
    const int K = model.config.codebooks;
    const int C = model.config.codebook_size;
    h.usage.assign(static_cast<std::size_t>(K), std::vector<long>(static_cast<std::size_t>(C), 0));
    for (const auto& s : corpus) {
        auto z = encode(model, s.motion);
        auto [idx, zq] = quantize(model, z);
        for (int t = 0; t < idx.steps; ++t)
            for (int k = 0; k < K; ++k)
                ++h.usage[static_cast<std::size_t>(k)][static_cast<std::size_t>(idx.at(t, k))];
        h.total_steps += idx.steps;
    }
    for (const auto& book : h.usage)
        for (long n : book)
            if (n == 0) ++h.dead_codes;
    return h;
}

int decoder_receptive_radius(const VqvaeConfig& cfg) {
    // Influence interval of one latent step, propagated through the decoder.
    long lo = 0, hi = 0;
    const auto conv3 = [&] { --lo; ++hi; };
    conv3();  // dec_in
    for (int s = 0; s < 2; ++s) {
        lo = 2 * lo;
        hi = 2 * hi + 1;
        conv3();
        for (int b = 0; b < cfg.res_blocks; ++b) {
            conv3();
            conv3();
        }
    }
    conv3();  // dec_out
    const long l = cfg.downscale;
    const long left = (-lo + l - 1) / l;            // ceil(-lo / l)
    const long right = (hi + 1 + l - 1) / l - 1;    // ceil((hi+1)/l) - 1
    return static_cast<int>(std::max(left, right));
}

// ---------------------------------------------------------------------------
// persistence

namespace {

void push(std::vector<NamedTensor>& out, const std::string& name,
          const ad::TensorPtr<float>& t) {
    out.push_back({name, t->shape, t->data});
}

void pull(const std::vector<NamedTensor>& in, std::size_t& pos, const std::string& name,
          ad::TensorPtr<float>& t) {
    if (pos >= in.size()) throw IoError("checkpoint: missing tensor " + name);
    const auto& nt = in[pos++];
    if (nt.name != name) throw IoError("checkpoint: expected tensor " + name + ", found " + nt.name);
    if (nt.shape != t->shape) throw IoError("checkpoint: shape mismatch for " + name);
    t->data = nt.data;
}

template <class Fn>
void walk_vqvae(VqvaeParams<float>& p, const VqvaeConfig& cfg, Fn&& fn) {
    fn("norm.mean", p.norm_mean);
    fn("norm.std", p.norm_std);
    fn("enc.in.w", p.enc_in.w);
    fn("enc.in.b", p.enc_in.b);
    for (std::size_t s = 0; s < p.enc_stages.size(); ++s) {
        const std::string pre = "enc.s" + std::to_string(s);
        fn(pre + ".down.w", p.enc_stages[s].down.w);
        fn(pre + ".down.b", p.enc_stages[s].down.b);
        for (std::size_t b = 0; b < p.enc_stages[s].blocks.size(); ++b) {
            const std::string bp = pre + ".r" + std::to_string(b);
            fn(bp + ".c1.w", p.enc_stages[s].blocks[b].c1.w);
            fn(bp + ".c1.b", p.enc_stages[s].blocks[b].c1.b);
            fn(bp + ".c2.w", p.enc_stages[s].blocks[b].c2.w);
            fn(bp + ".c2.b", p.enc_stages[s].blocks[b].c2.b);
        }
    }
    fn("enc.out.w", p.enc_out.w);
    fn("enc.out.b", p.enc_out.b);
    fn("dec.in.w", p.dec_in.w);
    fn("dec.in.b", p.dec_in.b);
    for (std::size_t s = 0; s < p.dec_stages.size(); ++s) {
        const std::string pre = "dec.s" + std::to_string(s);
        fn(pre + ".conv.w", p.dec_stages[s].conv.w);
        fn(pre + ".conv.b", p.dec_stages[s].conv.b);
        for (std::size_t b = 0; b < p.dec_stages[s].blocks.size(); ++b) {
            const std::string bp = pre + ".r" + std::to_string(b);
            fn(bp + ".c1.w", p.dec_stages[s].blocks[b].c1.w);
            fn(bp + ".c1.b", p.dec_stages[s].blocks[b].c1.b);
            fn(bp + ".c2.w", p.dec_stages[s].blocks[b].c2.w);
            fn(bp + ".c2.b", p.dec_stages[s].blocks[b].c2.b);
        }
    }
    fn("dec.out.w", p.dec_out.w);
    fn("dec.out.b", p.dec_out.b);
    for (int k = 0; k < cfg.codebooks; ++k)
        fn("book." + std::to_string(k), p.books[static_cast<std::size_t>(k)]);
    if (cfg.n_trans > 0) fn("trans", p.trans);
}

json vqvae_config_json(const VqvaeConfig& c) {
    return json{{"codebooks", c.codebooks}, {"codebook_size", c.codebook_size},
                {"code_dim", c.code_dim},   {"width", c.width},
                {"beta", c.beta},           {"downscale", c.downscale},
                {"res_blocks", c.res_blocks}, {"n_trans", c.n_trans}};
}

VqvaeConfig vqvae_config_from_json(const json& j) {
    VqvaeConfig c;
    c.codebooks = j.at("codebooks").get<int>();
    c.codebook_size = j.at("codebook_size").get<int>();
    c.code_dim = j.at("code_dim").get<int>();
    c.width = j.at("width").get<int>();
    c.beta = j.at("beta").get<double>();
    c.downscale = j.at("downscale").get<int>();
    c.res_blocks = j.at("res_blocks").get<int>();
    c.n_trans = j.at("n_trans").get<int>();
    return c;
}

}  // namespace

void save_vqvae(const std::string& path, const Vqvae& model) {
    std::vector<NamedTensor> tensors;
    auto& p = const_cast<VqvaeParams<float>&>(model.params);
    walk_vqvae(p, model.config,
               [&](const std::string& name, ad::TensorPtr<float>& t) { push(tensors, name, t); });
    write_checkpoint(path, tensors);
    json side;
    side["kind"] = "vqvae";
    side["input_dim"] = model.input_dim;
    side["fps"] = model.fps;
    side["config"] = vqvae_config_json(model.config);
    side["codebook_hash"] = config_hash(codebook_signature(model.config));
    write_sidecar(path, side.dump(2));
}

Vqvae load_vqvae(const std::string& path) {
    json side;
    try {
        side = json::parse(read_sidecar(path));
    } catch (const json::exception& e) {
        throw IoError("vqvae sidecar is not valid JSON: " + std::string(e.what()));
    }
    if (side.value("kind", "") != "vqvae") throw ConfigError("checkpoint is not a vqvae");
    const VqvaeConfig cfg = vqvae_config_from_json(side.at("config"));
    Rng dummy(0);
    Vqvae model = make_vqvae(cfg, side.at("input_dim").get<int>(),
                             side.value("fps", 20), dummy);
    const auto tensors = read_checkpoint(path);
    std::size_t pos = 0;
    walk_vqvae(model.params, cfg, [&](const std::string& name, ad::TensorPtr<float>& t) {
        pull(tensors, pos, name, t);
    });
    if (pos != tensors.size()) throw IoError("vqvae checkpoint has trailing tensors");
    return model;
}

}  // namespace t2lm::vq
