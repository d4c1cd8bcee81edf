#include "t2lm/textenc.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include <json.hpp>

#include "t2lm/checkpoint.hpp"
#include "t2lm/errors.hpp"
#include "t2lm/optim.hpp"

namespace t2lm::text {

using ad::make_tensor;
using nlohmann::json;

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

int Vocab::id_of(const std::string& token) const {
    auto it = std::lower_bound(tokens.begin(), tokens.end(), token);
    if (it != tokens.end() && *it == token)
        return static_cast<int>(it - tokens.begin()) + 1;
    return 0;  // OOV
}

Vocab Vocab::build(const std::vector<std::string>& texts) {
    std::set<std::string> uniq;
    for (const auto& t : texts)
        for (const auto& tok : tokenize(t)) uniq.insert(tok);
    Vocab v;
    v.tokens.assign(uniq.begin(), uniq.end());
    return v;
}

namespace {

std::vector<int> token_ids(const Vocab& vocab, const std::string& text) {
    std::vector<int> ids;
    for (const auto& tok : tokenize(text)) ids.push_back(vocab.id_of(tok));
    return ids;
}

ad::TensorPtr<float> cond_tensor(const Embedding& e) {
    return make_tensor<float>({e.rows, e.dim}, e.values);
}

Embedding to_embedding(const ad::Tensor<float>& t) {
    Embedding e;
    e.rows = t.shape[0];
    e.dim = t.shape[1];
    e.values = t.data;
    return e;
}

}  // namespace

TextEncoder make_text_encoder(const TextencConfig& cfg, int codebooks, int codebook_size,
                              int downscale, const Vocab& vocab, Rng& rng) {
    TextEncoder m;
    m.config = cfg;
    m.codebooks = codebooks;
    m.codebook_size = codebook_size;
    m.downscale = downscale;
    m.vocab = vocab;
    m.params = init_textenc_params<float>(cfg, codebooks, codebook_size, downscale,
                                          static_cast<int>(vocab.tokens.size()), rng);
    return m;
}

std::vector<float> text_embedding_values(const TextEncoder& model, const std::string& text) {
    auto e = text_embedding(model.params, token_ids(model.vocab, text));
    return e->data;
}

Embedding condition_from_etext(const TextEncoder& model, const std::vector<float>& e_text,
                               int frames, int t_z) {
    if (static_cast<int>(e_text.size()) != model.config.d_model)
        throw ShapeError("condition_from_etext: embedding dimension mismatch");
    if (frames > model.config.t_max)
        throw ValueError("requested length exceeds t_max (" +
                         std::to_string(model.config.t_max) + ")");
    auto et = make_tensor<float>({1, model.config.d_model}, e_text);
    auto cond = condition_forward(model.params, et, frames, t_z);
    return to_embedding(*cond);
}

Embedding embed_condition(const TextEncoder& model, const std::string& text, int frames) {
    if (frames < 1) throw ValueError("embed_condition: frames must be >= 1");
    if (frames > model.config.t_max)
        throw ValueError("requested length exceeds t_max (" +
                         std::to_string(model.config.t_max) + ")");
    const int t_z = latent_steps_ceil(frames, model.downscale);
    return condition_from_etext(model, text_embedding_values(model, text), frames, t_z);
}

std::vector<std::vector<float>> next_index_logits(const TextEncoder& model,
                                                  const Embedding& cond,
                                                  const vq::IndexSequence& prefix) {
    const int t = prefix.steps + 1;  // position being predicted, 1-based
    if (cond.rows < t) throw ValueError("next_index_logits: prefix longer than conditioning");
    auto trunk = h2_forward(model.params, cond_tensor(cond), prefix, t);
    auto last = ad::slice_rows(trunk, t - 1, t);
    std::vector<std::vector<float>> out;
    out.reserve(static_cast<std::size_t>(model.codebooks));
    for (int k = 0; k < model.codebooks; ++k)
        out.push_back(model.params.heads[static_cast<std::size_t>(k)].forward(last)->data);
    return out;
}

namespace {

int pick_index(const std::vector<float>& logits, const SamplingStrategy& s, Rng& rng) {
    const int C = static_cast<int>(logits.size());
    if (s.kind == SamplingStrategy::Kind::greedy || s.k <= 1) {
        int best = 0;
        for (int i = 1; i < C; ++i)
            if (logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(best)]) best = i;
        return best;
    }
    const int k = std::min(s.k, C);
    std::vector<int> ord(static_cast<std::size_t>(C));
    std::iota(ord.begin(), ord.end(), 0);
    std::partial_sort(ord.begin(), ord.begin() + k, ord.end(), [&](int a, int b) {
        if (logits[static_cast<std::size_t>(a)] != logits[static_cast<std::size_t>(b)])
            return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)];
        return a < b;
    });
    const double temp = s.temperature > 0 ? s.temperature : 1.0;
    std::vector<double> p(static_cast<std::size_t>(k));
    const double m = logits[static_cast<std::size_t>(ord[0])];
    double denom = 0;
    for (int i = 0; i < k; ++i) {
        p[static_cast<std::size_t>(i)] =
            std::exp((logits[static_cast<std::size_t>(ord[static_cast<std::size_t>(i)])] - m) / temp);
        denom += p[static_cast<std::size_t>(i)];
    }
    double u = rng.uniform() * denom;
    for (int i = 0; i < k; ++i) {
        u -= p[static_cast<std::size_t>(i)];
        if (u <= 0) return ord[static_cast<std::size_t>(i)];
    }
    return ord[static_cast<std::size_t>(k - 1)];
}

}  // namespace

vq::IndexSequence sample_from_condition(const TextEncoder& model, const Embedding& cond,
                                        const SamplingStrategy& strategy, Rng& rng) {
    vq::IndexSequence seq;
    seq.steps = 0;
    seq.books = model.codebooks;
    for (int t = 0; t < cond.rows; ++t) {
        auto logits = next_index_logits(model, cond, seq);
        for (int k = 0; k < model.codebooks; ++k)
            seq.indices.push_back(pick_index(logits[static_cast<std::size_t>(k)], strategy, rng));
        ++seq.steps;
    }
    return seq;
}

vq::IndexSequence sample_indices(const TextEncoder& model, const std::string& text,
                                 int frames, const SamplingStrategy& strategy, Rng& rng) {
    auto cond = embed_condition(model, text, frames);
    return sample_from_condition(model, cond, strategy, rng);
}

TextEncoder train_text_encoder(const TextencConfig& cfg, const vq::Vqvae& vqvae,
                               const std::vector<data::LabeledSample>& corpus,
                               const TrainOptions& opt, Rng rng,
                               std::vector<TrainStepRecord>* history) {
    if (corpus.empty()) throw ValueError("train_text_encoder: empty corpus");
    std::vector<std::string> texts;
    texts.reserve(corpus.size());
    for (const auto& s : corpus) texts.push_back(s.text);
    const Vocab vocab = Vocab::build(texts);

    Rng init_rng = rng.child(1);
    TextEncoder model = make_text_encoder(cfg, vqvae.config.codebooks,
                                          vqvae.config.codebook_size, vqvae.config.downscale,
                                          vocab, init_rng);
    model.codebook_hash = config_hash(codebook_signature(vqvae.config));

    // Teacher-forcing targets: the frozen vqvae's index grids. Conditioning
    // uses the original stated length; slot count follows the cropped grid.
    struct Item {
        std::vector<int> tok_ids;
        int frames = 0;
        vq::IndexSequence targets;
    };
    std::vector<Item> items;
    items.reserve(corpus.size());
    for (const auto& s : corpus) {
        if (s.motion.frames < vqvae.config.downscale)
            throw ValueError("train_text_encoder: sample shorter than the downscale factor");
        if (s.motion.frames > cfg.t_max)
            throw ValueError("train_text_encoder: sample longer than t_max");
        Item it;
        it.tok_ids = token_ids(vocab, s.text);
        it.frames = s.motion.frames;
        auto z = vq::encode(vqvae, s.motion);
        it.targets = vq::quantize(vqvae, z).first;
        items.push_back(std::move(it));
    }

    auto params = model.params.parameters();
    AdamW<float>::Options aopt;
    aopt.lr = static_cast<float>(opt.lr);
    AdamW<float> optim(params, aopt);

    Rng order_rng = rng.child(2);
    Rng corrupt_rng = rng.child(3);
    std::vector<int> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    const int K = model.codebooks;
    const int C = model.codebook_size;

    for (int step = 1; step <= opt.steps; ++step) {
        if (opt.scheduler_step > 0) {
            StepLr sched{opt.lr, opt.scheduler_step, opt.scheduler_decay};
            optim.set_lr(static_cast<float>(sched.at(step - 1)));
        }
        optim.zero_grad();
        float nll_sum = 0;
        const int batch = static_cast<int>(std::min<std::size_t>(opt.batch, items.size()));
        for (int b = 0; b < batch; ++b) {
            if (cursor >= order.size()) {
                Rng shuffle_rng = order_rng.child(static_cast<std::uint64_t>(step));
                for (std::size_t i = order.size(); i > 1; --i)
                    std::swap(order[i - 1],
                              order[static_cast<std::size_t>(shuffle_rng.uniform_int(
                                  static_cast<std::int64_t>(i)))]);
                cursor = 0;
            }
            const auto& item = items[static_cast<std::size_t>(order[cursor++])];
            const int tz = item.targets.steps;

            // Input-side corruption: each conditioning index is replaced by a
            // uniform random one with probability p_corrupt; targets stay.
            vq::IndexSequence inputs = item.targets;
            if (opt.p_corrupt > 0) {
                Rng r = corrupt_rng.child(static_cast<std::uint64_t>(step) * 4096 + b);
                for (auto& v : inputs.indices)
                    if (r.uniform() < opt.p_corrupt) v = static_cast<int>(r.uniform_int(C));
            }

            auto e_text = text_embedding(model.params, item.tok_ids);
            auto cond = condition_forward(model.params, e_text, item.frames, tz);
            auto trunk = h2_forward(model.params, cond, inputs, tz);

            ad::TensorPtr<float> loss;
            for (int k = 0; k < K; ++k) {
                std::vector<int> tgt(static_cast<std::size_t>(tz));
                for (int t = 0; t < tz; ++t) tgt[static_cast<std::size_t>(t)] = item.targets.at(t, k);
                auto logits = model.params.heads[static_cast<std::size_t>(k)].forward(trunk);
                auto l = ad::softmax_cross_entropy(logits, tgt);
                loss = loss ? ad::add(loss, l) : l;
            }
            loss = ad::scale(loss, 1.0f / K);
            nll_sum += loss->data[0];
            ad::backward(ad::scale(loss, 1.0f / batch));
        }
        const float nll = nll_sum / batch;
        if (!std::isfinite(nll))
            throw ValueError("train_text_encoder: loss diverged at step " + std::to_string(step));
        optim.step();
        if (history) history->push_back({step, nll});
        if (opt.log_every > 0 && step % opt.log_every == 0)
            std::fprintf(stderr, "[train-textenc] step %d/%d nll %.5f\n", step, opt.steps, nll);
    }
    return model;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

template <class Fn>
void walk_textenc(TextencParams<float>& p, int codebooks, Fn&& fn) {
    fn("tok_emb", p.tok_emb);
    fn("text_proj.w", p.text_proj.w);
    fn("text_proj.b", p.text_proj.b);
    fn("len_emb", p.len_emb);
    for (int k = 0; k < codebooks; ++k)
        fn("idx_emb." + std::to_string(k), p.idx_emb[static_cast<std::size_t>(k)]);
    fn("pe1", p.pe1);
    fn("pe2", p.pe2);
    const auto layer = [&](const std::string& pre, nn::TransformerLayer<float>& l) {
        fn(pre + ".ln1.g", l.ln1.gain);
        fn(pre + ".ln1.b", l.ln1.bias);
        fn(pre + ".attn.q.w", l.attn.wq.w);
        fn(pre + ".attn.q.b", l.attn.wq.b);
        fn(pre + ".attn.k.w", l.attn.wk.w);
        fn(pre + ".attn.k.b", l.attn.wk.b);
        fn(pre + ".attn.v.w", l.attn.wv.w);
        fn(pre + ".attn.v.b", l.attn.wv.b);
        fn(pre + ".attn.o.w", l.attn.wo.w);
        fn(pre + ".attn.o.b", l.attn.wo.b);
        fn(pre + ".ln2.g", l.ln2.gain);
        fn(pre + ".ln2.b", l.ln2.bias);
        fn(pre + ".fc1.w", l.fc1.w);
        fn(pre + ".fc1.b", l.fc1.b);
        fn(pre + ".fc2.w", l.fc2.w);
        fn(pre + ".fc2.b", l.fc2.b);
    };
    for (std::size_t i = 0; i < p.h1.size(); ++i) layer("h1." + std::to_string(i), p.h1[i]);
    for (std::size_t i = 0; i < p.h2.size(); ++i) layer("h2." + std::to_string(i), p.h2[i]);
    fn("ln_f1.g", p.ln_f1.gain);
    fn("ln_f1.b", p.ln_f1.bias);
    fn("ln_f2.g", p.ln_f2.gain);
    fn("ln_f2.b", p.ln_f2.bias);
    for (int k = 0; k < codebooks; ++k) {
        fn("head." + std::to_string(k) + ".w", p.heads[static_cast<std::size_t>(k)].w);
        fn("head." + std::to_string(k) + ".b", p.heads[static_cast<std::size_t>(k)].b);
    }
}

}  // namespace

void save_text_encoder(const std::string& path, const TextEncoder& model) {
    std::vector<NamedTensor> tensors;
    auto& p = const_cast<TextencParams<float>&>(model.params);
    walk_textenc(p, model.codebooks, [&](const std::string& name, ad::TensorPtr<float>& t) {
        tensors.push_back({name, t->shape, t->data});
    });
    write_checkpoint(path, tensors);
    json side;
    side["kind"] = "textenc";
    side["codebooks"] = model.codebooks;
    side["codebook_size"] = model.codebook_size;
    side["downscale"] = model.downscale;
    side["codebook_hash"] = model.codebook_hash;
    side["config"] = {{"layers", model.config.layers}, {"d_model", model.config.d_model},
                      {"heads", model.config.heads},   {"inner", model.config.inner},
                      {"t_max", model.config.t_max},   {"p_corrupt", model.config.p_corrupt}};
    side["vocab"] = model.vocab.tokens;
    write_sidecar(path, side.dump(2));
}

TextEncoder load_text_encoder(const std::string& path) {
    json side;
    try {
        side = json::parse(read_sidecar(path));
    } catch (const json::exception& e) {
        throw IoError("textenc sidecar is not valid JSON: " + std::string(e.what()));
    }
    if (side.value("kind", "") != "textenc") throw ConfigError("checkpoint is not a text encoder");
    TextencConfig cfg;
    const auto& jc = side.at("config");
    cfg.layers = jc.at("layers").get<int>();
    cfg.d_model = jc.at("d_model").get<int>();
    cfg.heads = jc.at("heads").get<int>();
    cfg.inner = jc.at("inner").get<int>();
    cfg.t_max = jc.at("t_max").get<int>();
    cfg.p_corrupt = jc.at("p_corrupt").get<double>();
    Vocab vocab;
    vocab.tokens = side.at("vocab").get<std::vector<std::string>>();
    Rng dummy(0);
    TextEncoder model = make_text_encoder(cfg, side.at("codebooks").get<int>(),
                                          side.at("codebook_size").get<int>(),
                                          side.at("downscale").get<int>(), vocab, dummy);
    model.codebook_hash = side.value("codebook_hash", "");
    const auto tensors = read_checkpoint(path);
    std::size_t pos = 0;
    walk_textenc(model.params, model.codebooks,
                 [&](const std::string& name, ad::TensorPtr<float>& t) {
                     if (pos >= tensors.size()) throw IoError("checkpoint: missing tensor " + name);
                     const auto& nt = tensors[pos++];
                     if (nt.name != name)
                         throw IoError("checkpoint: expected " + name + ", found " + nt.name);
                     if (nt.shape != t->shape) throw IoError("checkpoint: shape mismatch for " + name);
                     t->data = nt.data;
                 });
    if (pos != tensors.size()) throw IoError("textenc checkpoint has trailing tensors");
    return model;
}

}  // namespace t2lm::text
