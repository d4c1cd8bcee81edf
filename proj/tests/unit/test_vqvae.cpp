#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "t2lm/errors.hpp"
#include "t2lm/gradcheck.hpp"
#include "t2lm/rng.hpp"
#include "t2lm/vqvae.hpp"
#include "test_util.hpp"

using namespace t2lm;
using namespace t2lm::vq;

namespace {

VqvaeConfig small_config() {
    VqvaeConfig cfg;
    cfg.codebooks = 2;
    cfg.codebook_size = 16;
    cfg.code_dim = 8;
    cfg.width = 16;
    cfg.res_blocks = 1;
    return cfg;
}

Motion random_motion(int frames, int dim, std::uint64_t seed) {
    Rng rng(seed);
    Motion m = Motion::empty(frames, dim);
    for (auto& v : m.values) v = static_cast<float>(rng.normal());
    return m;
}

}  // namespace

TEST_CASE("encode length contract") {
    Rng rng(1);
    auto model = make_vqvae(small_config(), 15, 20, rng);
    CHECK(encode(model, random_motion(196, 15, 2)).steps == 49);
    CHECK(encode(model, random_motion(43, 15, 3)).steps == 10);
    CHECK(encode(model, random_motion(4, 15, 4)).steps == 1);
    CHECK_THROWS_AS(encode(model, random_motion(3, 15, 5)), ValueError);
    CHECK(encode(model, random_motion(80, 15, 6)).dim == small_config().latent_dim());
}

TEST_CASE("quantize hand cases") {
    // one book of {[0,0],[1,1]}
    auto cfg = small_config();
    cfg.codebooks = 1;
    cfg.codebook_size = 2;
    cfg.code_dim = 2;
    Rng rng(2);
    auto model = make_vqvae(cfg, 15, 20, rng);
    model.params.books[0]->data = {0, 0, 1, 1};

    LatentSequence z;
    z.steps = 3;
    z.dim = 2;
    z.values = {0.9f, 1.2f,   // closest to [1,1]: 0.05 vs 2.25
                1.0f, 1.0f,   // exactly [1,1]
                0.5f, 0.5f};  // tie -> lowest index
    auto [idx, zq] = quantize(model, z);
    CHECK(idx.at(0, 0) == 1);
    CHECK(zq.at(0, 0) == 1.0f);
    CHECK(zq.at(0, 1) == 1.0f);
    CHECK(idx.at(1, 0) == 1);
    CHECK(idx.at(2, 0) == 0);  // tie-break rule
}

TEST_CASE("quantize matches the exhaustive oracle on random inputs") {
    Rng rng(7);
    for (int K : {1, 2, 4}) {
        for (int C : {2, 16}) {
            VqvaeConfig cfg = small_config();
            cfg.codebooks = K;
            cfg.codebook_size = C;
            cfg.code_dim = 6;
            Rng mr = rng.child(static_cast<std::uint64_t>(K) * 100 + C);
            auto model = make_vqvae(cfg, 15, 20, mr);

            std::vector<std::vector<float>> books;
            for (const auto& b : model.params.books) books.push_back(b->data);

            LatentSequence z;
            z.steps = 40;
            z.dim = cfg.latent_dim();
            z.values.resize(static_cast<std::size_t>(z.steps) * z.dim);
            for (auto& v : z.values) v = static_cast<float>(mr.normal());

            const auto got = quantize(model, z).first;
            const auto want = test_util::brute_force_quantize(books, C, cfg.code_dim, z);
            CHECK(got.indices == want.indices);
        }
    }
}

TEST_CASE("quantization is idempotent") {
    Rng rng(11);
    auto model = make_vqvae(small_config(), 15, 20, rng);
    LatentSequence z;
    z.steps = 12;
    z.dim = small_config().latent_dim();
    z.values.resize(static_cast<std::size_t>(z.steps) * z.dim);
    for (auto& v : z.values) v = static_cast<float>(rng.normal());
    auto [idx1, zq1] = quantize(model, z);
    auto [idx2, zq2] = quantize(model, zq1);
    CHECK(idx1.indices == idx2.indices);
    CHECK(zq1.values == zq2.values);
}

TEST_CASE("decode length contract and determinism") {
    Rng rng(13);
    auto model = make_vqvae(small_config(), 15, 20, rng);
    LatentSequence zq;
    zq.steps = 49;
    zq.dim = small_config().latent_dim();
    zq.values.assign(static_cast<std::size_t>(zq.steps) * zq.dim, 0.1f);
    const Motion out = decode(model, zq);
    CHECK(out.frames == 196);
    CHECK(out.dim == 15);

    zq.steps = 1;
    zq.values.assign(static_cast<std::size_t>(zq.dim), 0.1f);
    CHECK(decode(model, zq).frames == 4);

    const Motion a = decode(model, zq);
    const Motion b = decode(model, zq);
    CHECK(a.values == b.values);
}

TEST_CASE("encode-quantize-decode keeps l*floor(T/l) frames") {
    Rng rng(17);
    auto model = make_vqvae(small_config(), 15, 20, rng);
    for (int T : {4, 7, 40, 43, 81, 196}) {
        const Motion x = random_motion(T, 15, static_cast<std::uint64_t>(T));
        auto [idx, zq] = quantize(model, encode(model, x));
        CHECK(decode(model, zq).frames == 4 * (T / 4));
    }
}

TEST_CASE("vq_loss parts: toy scalar book and zero-distance case") {
    // scalar book {1, 5}, z = 2 => zq = 1, codebook term 1, commit beta * 1
    auto books = std::vector<ad::TensorPtr<float>>{
        ad::make_tensor<float>({2, 1}, {1.0f, 5.0f}, true)};
    auto z = ad::make_tensor<float>({1, 1}, {2.0f}, true);
    auto q = quantize_st(books, z);
    CHECK(q.indices.at(0, 0) == 0);
    auto code = mse(ad::detach(z), q.zq_live);
    auto commit = ad::scale(mse(z, ad::detach(q.zq_live)), 0.25f);
    CHECK(code->data[0] == doctest::Approx(1.0));
    CHECK(commit->data[0] == doctest::Approx(0.25));

    // encoder output exactly on codebook vectors: both terms vanish
    auto z2 = ad::make_tensor<float>({2, 1}, {5.0f, 1.0f}, true);
    auto q2 = quantize_st(books, z2);
    CHECK(mse(ad::detach(z2), q2.zq_live)->data[0] == doctest::Approx(0.0));
    CHECK(mse(z2, ad::detach(q2.zq_live))->data[0] == doctest::Approx(0.0));
}

TEST_CASE("straight-through estimator wiring") {
    // grad of total wrt encoder output equals dL_recon/d(zq) + commitment term
    Rng rng(23);
    auto books = std::vector<ad::TensorPtr<float>>{ad::randn<float>({4, 3}, 1.0f, rng)};
    auto z = ad::randn<float>({2, 3}, 1.0f, rng);
    auto w = ad::randn<float>({2, 3}, 1.0f, rng, false);
    const float beta = 0.25f;

    auto q = quantize_st(books, z);
    // downstream "decoder": recon = sum(w * zq_st)
    auto recon = ad::sum(ad::mul(q.zq_st, w));
    auto code = mse(ad::detach(z), q.zq_live);
    auto commit = ad::scale(mse(z, ad::detach(q.zq_live)), beta);
    auto total = ad::add(ad::add(recon, code), commit);
    ad::backward(total);

    // manual: dtotal/dz = w (straight-through) + 2*beta*(z - zq)/numel
    for (int i = 0; i < 6; ++i) {
        const float manual =
            w->data[i] + 2.0f * beta * (z->data[i] - q.zq_live->data[i]) / 6.0f;
        CHECK(z->grad[i] == doctest::Approx(manual).epsilon(1e-4));
    }
    // codebook receives gradient only through the dictionary term
    bool any = false;
    for (float g : books[0]->grad) any = any || g != 0.0f;
    CHECK(any);
}

TEST_CASE("vq_loss full path gradients reach the encoder") {
    Rng rng(29);
    VqvaeConfig cfg = small_config();
    auto params = init_vqvae_params<float>(cfg, 6, rng);
    auto x = ad::randn<float>({6, 8}, 1.0f, rng, false);
    auto parts = vq_loss_on_tensor(params, 0.25f, x);
    ad::backward(parts.total);
    double enc_grad = 0;
    for (float g : params.enc_in.w->grad) enc_grad += std::abs(g);
    CHECK(enc_grad > 0.0);
    CHECK(parts.total->data[0] ==
          doctest::Approx(parts.recon->data[0] + parts.codebook->data[0] +
                          parts.commit->data[0]));
}

TEST_CASE("encoder/decoder composites pass 64-bit gradient checks") {
    // The quantizer itself is intentionally non-differentiable (straight
    // through); the finite-difference suite covers the differentiable blocks
    // around it: the full autoencoder path and the commitment pull on z.
    Rng rng(31);
    VqvaeConfig cfg;
    cfg.codebooks = 1;
    cfg.codebook_size = 4;
    cfg.code_dim = 4;
    cfg.width = 6;
    cfg.res_blocks = 1;
    auto params = init_vqvae_params<double>(cfg, 3, rng);
    auto x0 = ad::randn<double>({3, 8}, 1.0, rng, false);

    // recon loss through encoder -> decoder, as a function of a deep weight
    std::function<ad::TensorPtr<double>(const ad::TensorPtr<double>&)> f =
        [&](const ad::TensorPtr<double>& t) {
            auto p = params;
            p.enc_in.w = t;
            auto z = encoder_forward(p, x0);
            auto y = decoder_forward(p, z);
            return recon_loss(y, x0);
        };
    CHECK(ad::grad_check<double>(f, params.enc_in.w, 1e-6) < 1e-5);

    // commitment term: beta * || sg[zq] - E(x) ||^2 with frozen zq values
    auto zq_fixed = ad::randn<double>({2, 4}, 1.0, rng, false);
    std::function<ad::TensorPtr<double>(const ad::TensorPtr<double>&)> g =
        [&](const ad::TensorPtr<double>& t) {
            auto p = params;
            p.enc_out.w = t;
            auto z = encoder_forward(p, x0);
            return ad::scale(mse(z, zq_fixed), 0.25);
        };
    CHECK(ad::grad_check<double>(g, params.enc_out.w, 1e-6) < 1e-5);

    // decoder block alone, as a function of an upsampling-stage weight
    auto zin = ad::randn<double>({2, 4}, 1.0, rng, false);
    auto wt = ad::randn<double>({3, 8}, 1.0, rng, false);
    std::function<ad::TensorPtr<double>(const ad::TensorPtr<double>&)> h =
        [&](const ad::TensorPtr<double>& t) {
            auto p = params;
            p.dec_stages[1].conv.w = t;
            return ad::sum(ad::mul(decoder_forward(p, zin), wt));
        };
    CHECK(ad::grad_check<double>(h, params.dec_stages[1].conv.w, 1e-6) < 1e-5);
}

TEST_CASE("training overfits a tiny corpus and stays deterministic") {
    auto corpus = test_util::one_per_template_corpus(48, 404);
    corpus.resize(4);
    VqvaeConfig cfg = small_config();
    TrainOptions opt;
    opt.steps = 220;
    opt.batch = 4;
    opt.lr = 2e-3;
    opt.p_aug = 0.0;

    std::vector<TrainStepRecord> h1, h2;
    auto m1 = train_vqvae(cfg, corpus, opt, Rng(5), &h1);
    auto m2 = train_vqvae(cfg, corpus, opt, Rng(5), &h2);

    REQUIRE(h1.size() == 220);
    CHECK(h1.back().total < h1.front().total);
    // determinism: identical histories and identical weights
    CHECK(h1.back().total == h2.back().total);
    CHECK(m1.params.enc_in.w->data == m2.params.enc_in.w->data);
    CHECK(m1.params.books[0]->data == m2.params.books[0]->data);

    test_util::TempDir dir("vqdet");
    save_vqvae(dir.file("a.ckpt"), m1);
    save_vqvae(dir.file("b.ckpt"), m2);
    CHECK(test_util::read_bytes(dir.file("a.ckpt")) == test_util::read_bytes(dir.file("b.ckpt")));

    CHECK_THROWS_AS(train_vqvae(cfg, {}, opt, Rng(5), nullptr), ValueError);
}

TEST_CASE("codebook_health counts usage and dead codes") {
    Rng rng(37);
    auto model = make_vqvae(small_config(), 15, 20, rng);
    const auto corpus = test_util::tiny_corpus(6, 38);
    const auto h = codebook_health(model, corpus);
    long total = 0;
    for (const auto& book : h.usage)
        for (long n : book) total += n;
    long steps = 0;
    for (const auto& s : corpus) steps += s.motion.frames / 4;
    CHECK(total == steps * small_config().codebooks);

    // rig a book where only index 0 is reachable
    auto cfg1 = small_config();
    cfg1.codebooks = 1;
    cfg1.codebook_size = 2;
    cfg1.code_dim = 16;
    Rng rng2(39);
    auto rigged = make_vqvae(cfg1, 15, 20, rng2);
    for (int j = 0; j < 16; ++j) {
        rigged.params.books[0]->data[static_cast<std::size_t>(j)] = 0.0f;          // row 0 near origin
        rigged.params.books[0]->data[static_cast<std::size_t>(16 + j)] = 1000.0f;  // row 1 far away
    }
    const auto h2 = codebook_health(rigged, corpus);
    CHECK(h2.usage[0][1] == 0);
    CHECK(h2.dead_codes == 1);
}

TEST_CASE("decoder receptive radius bounds latent influence exactly") {
    VqvaeConfig cfg = small_config();
    const int R = decoder_receptive_radius(cfg);
    CHECK(R >= 1);

    Rng rng(41);
    auto model = make_vqvae(cfg, 15, 20, rng);
    const int l = cfg.downscale;
    const int tz = 24;
    LatentSequence zq;
    zq.steps = tz;
    zq.dim = cfg.latent_dim();
    zq.values.resize(static_cast<std::size_t>(tz) * zq.dim);
    for (auto& v : zq.values) v = static_cast<float>(rng.normal());
    const Motion base = decode(model, zq);

    for (int rep = 0; rep < 10; ++rep) {
        const int j = static_cast<int>(rng.uniform_int(tz));
        LatentSequence pert = zq;
        for (int c = 0; c < zq.dim; ++c)
            pert.at(j, c) += static_cast<float>(rng.normal(0.0, 0.5));
        const Motion out = decode(model, pert);
        const int lo = std::max(0, l * (j - R));
        const int hi = std::min(base.frames, l * (j + R + 1));
        for (int t = 0; t < base.frames; ++t) {
            if (t >= lo && t < hi) continue;
            for (int c = 0; c < base.dim; ++c) {
                REQUIRE(out.at(t, c) == base.at(t, c));  // bitwise outside the window
            }
        }
    }
}

TEST_CASE("res_blocks=2 geometry gives radius 5") {
    VqvaeConfig cfg;
    cfg.res_blocks = 2;
    CHECK(decoder_receptive_radius(cfg) == 5);
}

TEST_CASE("checkpoint save/load round trips the model bitwise") {
    Rng rng(43);
    VqvaeConfig cfg = small_config();
    cfg.n_trans = 3;
    auto model = make_vqvae(cfg, 15, 20, rng);
    test_util::TempDir dir("vqckpt");
    const auto path = dir.file("m.ckpt");
    save_vqvae(path, model);
    const auto back = load_vqvae(path);
    CHECK(back.input_dim == 15);
    CHECK(back.config.n_trans == 3);
    CHECK(back.params.enc_in.w->data == model.params.enc_in.w->data);
    CHECK(back.params.books[1]->data == model.params.books[1]->data);
    CHECK(back.params.trans->data == model.params.trans->data);
    CHECK(back.params.norm_std->data == model.params.norm_std->data);

    const Motion x = random_motion(40, 15, 44);
    const auto za = encode(model, x);
    const auto zb = encode(back, x);
    CHECK(za.values == zb.values);
}

TEST_CASE("vq_loss reports finite parts on real data") {
    auto corpus = test_util::one_per_template_corpus(44, 51);
    VqvaeConfig cfg = small_config();
    TrainOptions opt;
    opt.steps = 20;
    opt.batch = 4;
    opt.lr = 1e-3;
    auto model = train_vqvae(cfg, corpus, opt, Rng(9), nullptr);
    const auto v = vq_loss(model, corpus[0].motion);
    CHECK(std::isfinite(v.total));
    CHECK(v.total == doctest::Approx(v.recon + v.codebook + v.commit).epsilon(1e-4));
    CHECK(v.codebook >= 0.0f);
    CHECK(v.commit >= 0.0f);
}
