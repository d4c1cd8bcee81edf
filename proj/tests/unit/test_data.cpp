#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "t2lm/data.hpp"
#include "t2lm/errors.hpp"
#include "t2lm/rng.hpp"
#include "test_util.hpp"

using namespace t2lm;
using namespace t2lm::data;

TEST_CASE("builtin template set") {
    const auto all = builtin_templates();
    CHECK(all.size() == 8);
    for (const auto& t : all) CHECK(t.phrasings.size() >= 2);

    const auto two = builtin_templates({"jump", "squat"});
    REQUIRE(two.size() == 2);
    CHECK(two[0].name == "jump");
    CHECK_THROWS_AS(builtin_templates({"moonwalk"}), ConfigError);
}

TEST_CASE("generate_corpus count and preconditions") {
    const auto templates = builtin_templates();
    CHECK(generate_corpus(templates, 1, Rng(5)).size() == 1);
    CHECK_THROWS_AS(generate_corpus(templates, 0, Rng(5)), ValueError);
    CHECK_THROWS_AS(generate_corpus({}, 3, Rng(5)), ValueError);
}

TEST_CASE("corpus is a pure function of the seed") {
    const auto templates = builtin_templates();
    const auto a = generate_corpus(templates, 20, Rng(1234));
    const auto b = generate_corpus(templates, 20, Rng(1234));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].text == b[i].text);
        CHECK(a[i].length == b[i].length);
        CHECK(a[i].motion.values == b[i].motion.values);  // bit identical
    }
    const auto c = generate_corpus(templates, 20, Rng(1235));
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        any_diff = any_diff || a[i].motion.values != c[i].motion.values;
    CHECK(any_diff);
}

TEST_CASE("template counts stay within the binomial band") {
    const auto templates = builtin_templates();
    const auto corpus = generate_corpus(templates, 800, Rng(777));
    std::map<int, int> counts;
    for (const auto& s : corpus) ++counts[s.template_index];
    for (const auto& [tpl, n] : counts) {
        CHECK(n >= 60);   // 100 +/- 40 at p = 1/8
        CHECK(n <= 140);
    }
}

TEST_CASE("lengths and dims respect the contract") {
    const auto corpus = test_util::tiny_corpus(50, 31);
    for (const auto& s : corpus) {
        CHECK(s.length >= 40);
        CHECK(s.length <= 196);
        CHECK(s.motion.frames == s.length);
        CHECK(s.motion.dim == 15);
        for (float v : s.motion.values) CHECK(std::isfinite(v));
    }
}

TEST_CASE("per-frame velocity stays under the declared template bound") {
    const auto templates = builtin_templates();
    Rng rng(41);
    for (const auto& tpl : templates) {
        for (int rep = 0; rep < 5; ++rep) {
            Rng r = rng.child(static_cast<std::uint64_t>(rep) * 131 + tpl.kind);
            const auto params = tpl.draw_params(r);
            const Motion m = rollout(tpl, params, 120, 5, 20);
            INFO(tpl.name);
            CHECK(test_util::max_frame_jump(m) <= tpl.velocity_bound);
        }
    }
}

TEST_CASE("larger skeletons stay smooth and deterministic") {
    const auto templates = builtin_templates();
    const auto& tpl = templates[0];
    Rng r(9);
    const auto params = tpl.draw_params(r);
    const Motion m = rollout(tpl, params, 60, 45, 20);  // the 135-dim variant
    CHECK(m.dim == 135);
    CHECK(test_util::max_frame_jump(m) <= tpl.velocity_bound);
}

TEST_CASE("render_long_ground_truth degenerate cases") {
    const auto templates = builtin_templates();
    // single action == plain rollout for the same child rng
    {
        Rng rng(55);
        const Motion lone = render_long_ground_truth(templates, {{2, 60}}, 8, rng);
        Rng child = Rng(55).child(0);
        const auto params = templates[2].draw_params(child);
        const Motion plain = rollout(templates[2], params, 60, 5, 20);
        REQUIRE(lone.frames == 60);
        CHECK(lone.values == plain.values);
    }
    // hard concatenation at blend 0
    {
        const Motion m = render_long_ground_truth(templates, {{0, 50}, {4, 44}}, 0, Rng(66));
        CHECK(m.frames == 94);
    }
    CHECK_THROWS_AS(render_long_ground_truth(templates, {}, 4, Rng(1)), ValueError);
    CHECK_THROWS_AS(render_long_ground_truth(templates, {{0, 40}, {1, 10}}, 10, Rng(1)),
                    ValueError);
}

TEST_CASE("cross-fade interpolates linearly between constant poses") {
    // Two stand-still-like constant actions built from custom templates is
    // overkill; instead verify on real templates that the fade region moves
    // monotonically between the two endpoint poses per channel.
    const auto templates = builtin_templates();
    const int B = 4;
    std::vector<ScriptAction> script{{7, 40}, {7, 40}};  // stand-still twice
    const Motion m = render_long_ground_truth(templates, script, B, Rng(3));
    REQUIRE(m.frames == 80);
    // stand-still is nearly constant; the blend must not introduce jumps
    CHECK(test_util::seam_jump(m, 40) < 0.1);
}

TEST_CASE("cross-fade seam jump obeys the gap/(B+1) bound") {
    const auto templates = builtin_templates();
    Rng rng(81);
    for (int rep = 0; rep < 10; ++rep) {
        Rng r = rng.child(static_cast<std::uint64_t>(rep));
        const int a = static_cast<int>(r.uniform_int(8));
        const int b = static_cast<int>(r.uniform_int(8));
        const int la = 48 + static_cast<int>(r.uniform_int(60));
        const int lb = 48 + static_cast<int>(r.uniform_int(60));
        const int B = 8;
        const Motion m =
            render_long_ground_truth(templates, {{a, la}, {b, lb}}, B, r.child(1));
        REQUIRE(m.frames == la + lb);
        const double intra =
            std::max(test_util::max_frame_jump(m, 0, la - 1),
                     test_util::max_frame_jump(m, la + B, m.frames));
        // Worst-case pose gap between any two templates is bounded by the
        // skeleton extents (< 2.5); the fade spreads it over B+1 steps.
        const double eps = 2.5 / (B + 1);
        CHECK(test_util::max_frame_jump(m, la - 1, la + B + 1) <= intra + eps);
    }
}

TEST_CASE("interp_resample identity, midpoint and linear round trip") {
    Motion m = Motion::empty(2, 3);
    for (int c = 0; c < 3; ++c) {
        m.at(0, c) = static_cast<float>(c);
        m.at(1, c) = static_cast<float>(c) + 10.0f;
    }
    const Motion mid = interp_resample(m, 3);
    REQUIRE(mid.frames == 3);
    for (int c = 0; c < 3; ++c) CHECK(mid.at(1, c) == doctest::Approx(c + 5.0).epsilon(1e-6));

    // identity at equal length
    const auto corpus = test_util::tiny_corpus(3, 17);
    const Motion& sample = corpus[0].motion;
    const Motion same = interp_resample(sample, sample.frames);
    for (std::size_t i = 0; i < sample.values.size(); ++i)
        CHECK(same.values[i] == doctest::Approx(sample.values[i]).epsilon(1e-6));

    // linear data survives T -> 2T -> T within 1e-5
    Motion lin = Motion::empty(24, 4);
    for (int t = 0; t < 24; ++t)
        for (int c = 0; c < 4; ++c) lin.at(t, c) = 0.5f * t * (c + 1) - 3.0f;
    const Motion back = interp_resample(interp_resample(lin, 48), 24);
    for (std::size_t i = 0; i < lin.values.size(); ++i)
        CHECK(back.values[i] == doctest::Approx(lin.values[i]).epsilon(1e-5));

    CHECK_THROWS_AS(interp_resample(lin, 1), ValueError);
}

TEST_CASE("holdout assignment is seeded and approximate") {
    auto samples = test_util::tiny_corpus(200, 3);
    assign_holdout(samples, 0.25, Rng(42));
    int eval_count = 0;
    for (const auto& s : samples) eval_count += s.split == "eval" ? 1 : 0;
    CHECK(eval_count > 20);
    CHECK(eval_count < 80);
    auto again = test_util::tiny_corpus(200, 3);
    assign_holdout(again, 0.25, Rng(42));
    for (std::size_t i = 0; i < samples.size(); ++i) CHECK(samples[i].split == again[i].split);
}
