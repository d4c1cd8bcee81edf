#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "t2lm/checkpoint.hpp"
#include "t2lm/config.hpp"
#include "t2lm/data.hpp"
#include "t2lm/errors.hpp"
#include "t2lm/motion.hpp"
#include "t2lm/rng.hpp"
#include "test_util.hpp"

using namespace t2lm;

TEST_CASE("mot round trip is bit exact") {
    test_util::TempDir dir("mot");
    Rng rng(1);
    Motion m = Motion::empty(13, 15);
    for (auto& v : m.values) v = static_cast<float>(rng.normal());
    const auto path = dir.file("a.mot");
    write_mot(path, m);
    const Motion back = read_mot(path);
    CHECK(back.frames == m.frames);
    CHECK(back.dim == m.dim);
    CHECK(std::equal(m.values.begin(), m.values.end(), back.values.begin()));

    // identical bytes when written twice
    const auto path2 = dir.file("b.mot");
    write_mot(path2, m);
    CHECK(test_util::read_bytes(path) == test_util::read_bytes(path2));
}

TEST_CASE("mot rejects malformed input") {
    test_util::TempDir dir("motbad");
    const auto path = dir.file("bad.mot");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTAMOTION";
    }
    CHECK_THROWS_AS(read_mot(path), IoError);
    CHECK_THROWS_AS(read_mot(dir.file("missing.mot")), IoError);

    {
        std::ofstream os(path, std::ios::binary);
        os << "MOT1";
        const unsigned char hdr[8] = {100, 0, 0, 0, 15, 0, 0, 0};
        os.write(reinterpret_cast<const char*>(hdr), 8);
        const float v = 1.0f;
        os.write(reinterpret_cast<const char*>(&v), 4);
    }
    CHECK_THROWS_AS(read_mot(path), IoError);
}

TEST_CASE("non-finite motion values are rejected") {
    Motion m = Motion::empty(2, 3);
    m.values[2] = std::numeric_limits<float>::infinity();
    test_util::TempDir dir("motinf");
    CHECK_THROWS_AS(write_mot(dir.file("x.mot"), m), ValueError);
}

TEST_CASE("checkpoint container round trips bit exactly") {
    test_util::TempDir dir("ckpt");
    Rng rng(7);
    std::vector<NamedTensor> tensors;
    tensors.push_back({"alpha", {2, 3}, {1, 2, 3, 4, 5, 6}});
    NamedTensor big;
    big.name = "conv.w";
    big.shape = {4, 3, 3};
    for (int i = 0; i < 36; ++i) big.data.push_back(static_cast<float>(rng.normal()));
    tensors.push_back(big);

    const auto path = dir.file("m.ckpt");
    write_checkpoint(path, tensors);
    const auto back = read_checkpoint(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].name == "alpha");
    CHECK(back[1].shape == std::vector<int>{4, 3, 3});
    CHECK(std::equal(big.data.begin(), big.data.end(), back[1].data.begin()));

    const auto path2 = dir.file("m2.ckpt");
    write_checkpoint(path2, tensors);
    CHECK(test_util::read_bytes(path) == test_util::read_bytes(path2));
}

TEST_CASE("checkpoint rejects corrupted headers") {
    test_util::TempDir dir("ckptbad");
    const auto path = dir.file("bad.ckpt");
    {
        std::ofstream os(path, std::ios::binary);
        os << "XXXX";
    }
    CHECK_THROWS_AS(read_checkpoint(path), IoError);
}

TEST_CASE("config parses, validates and echoes") {
    const char* json_text = R"({
        "seed": 42,
        "vqvae": {"codebooks": 2, "codebook_size": 64, "code_dim": 32},
        "training": {"batch": 4}
    })";
    RunConfig cfg = parse_config(json_text);
    CHECK(cfg.seed == 42);
    CHECK(cfg.vqvae.codebooks == 2);
    CHECK(cfg.training.batch == 4);
    CHECK(cfg.vqvae.latent_dim() == 64);

    RunConfig cfg2 = parse_config(config_to_json(cfg));
    CHECK(config_to_json(cfg) == config_to_json(cfg2));
}

TEST_CASE("config validation failures") {
    CHECK_THROWS_AS(parse_config("not json"), ConfigError);
    CHECK_THROWS_AS(parse_config("{}"), ConfigError);  // missing seed
    CHECK_THROWS_AS(parse_config(R"({"seed":1,"vqvae":{"downscale":8}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"seed":1,"textenc":{"d_model":30,"heads":4}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"seed":1,"training":{"vqvae_lr":0}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"seed":1,"training":{"p_aug":1.5}})"), ConfigError);
}

TEST_CASE("codebook signature distinguishes layouts") {
    VqvaeConfig a, b;
    b.codebook_size = 128;
    CHECK(codebook_signature(a) != codebook_signature(b));
    CHECK(config_hash(codebook_signature(a)) != config_hash(codebook_signature(b)));
    CHECK(config_hash(codebook_signature(a)) == config_hash(codebook_signature(a)));
}

TEST_CASE("manifest round trip with long-sequence fields") {
    test_util::TempDir dir("manifest");
    std::vector<data::ManifestEntry> entries;
    data::ManifestEntry e1;
    e1.id = "m0";
    e1.text = "a person walks forward";
    e1.length = 80;
    e1.motion_file = "motions/m0.mot";
    e1.template_name = "walk-forward";
    e1.split = "train";
    entries.push_back(e1);
    data::ManifestEntry e2;
    e2.id = "long0";
    e2.text = "a person walks forward";
    e2.length = 140;
    e2.motion_file = "motions/long0.mot";
    e2.boundaries = {0, 80};
    e2.script = {{"a person walks forward", 80}, {"someone jumps repeatedly", 60}};
    entries.push_back(e2);

    const auto path = dir.file("manifest.jsonl");
    data::write_manifest(path, entries);
    const auto back = data::read_manifest(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].template_name == "walk-forward");
    CHECK(back[0].split == "train");
    CHECK(back[1].boundaries == std::vector<int>{0, 80});
    REQUIRE(back[1].script.size() == 2);
    CHECK(back[1].script[1].first == "someone jumps repeatedly");
    CHECK(back[1].script[1].second == 60);
}

TEST_CASE("corpus write/read preserves samples") {
    test_util::TempDir dir("corpus");
    auto samples = test_util::tiny_corpus(6, 99);
    samples[0].split = "eval";
    data::write_corpus(dir.path(), samples);
    const auto all = data::read_corpus(dir.file("manifest.jsonl"));
    REQUIRE(all.size() == 6);
    CHECK(all[0].text == samples[0].text);
    CHECK(all[0].motion.frames == samples[0].motion.frames);
    CHECK(std::equal(samples[0].motion.values.begin(), samples[0].motion.values.end(),
                     all[0].motion.values.begin()));
    const auto train_only = data::read_corpus(dir.file("manifest.jsonl"), "train");
    CHECK(train_only.size() == 5);
}
