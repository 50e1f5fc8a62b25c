#include "doctest.h"

#include "harmony/backbone.hpp"
#include "harmony/errors.hpp"
#include "harmony/model.hpp"
#include "harmony/synthworld.hpp"
#include "support/gradcheck.hpp"
#include "support/suites.hpp"

using namespace harmony;

TEST_CASE("sequence likelihood factorizes over prefixes") {
    const auto rep = harmony::testing::factorization_oracle(11);
    CHECK(rep.sequences == 81);
    CHECK(rep.max_abs_err < 1e-10);
    CHECK(rep.mass_err < 1e-10);
}

TEST_CASE("later tokens never change earlier hidden states") {
    CHECK(harmony::testing::causality_violation(12, 12) == 0.0);
}

TEST_CASE("backbone config validation") {
    BackboneConfig c;
    c.patch = 5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.adapter_targets = {"q", "up"};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    CHECK_NOTHROW(c.validate());
    CHECK(c.patches_per_image() == 16);
}

TEST_CASE("resampler always yields K tokens") {
    ParamStore st;
    Rng rng(1);
    BackboneConfig cfg;
    Resampler r(st, cfg, rng);
    for (std::size_t n : {1, 3, 16, 40}) {
        auto out = r.resample(harmony::testing::random_tensor({n, cfg.width}, rng));
        CHECK(out.rows() == cfg.queries);
        CHECK(out.cols() == cfg.width);
    }
    for (const auto& w : r.first_block_attention(harmony::testing::random_tensor({5, cfg.width}, rng))) {
        CHECK(w.rows() == cfg.queries);
        CHECK(w.cols() == 5);
    }
}

TEST_CASE("vision encoder emits one token per patch") {
    ParamStore st;
    Rng rng(2);
    BackboneConfig cfg;
    VisionEncoder v(st, cfg, rng);
    auto t = v.encode(Image::black(16, 16), nullptr);
    CHECK(t.rows() == 16);
    CHECK(t.cols() == 64);
    CHECK_THROWS_AS(v.encode(Image::black(8, 8), nullptr), DimensionError);
}

TEST_CASE("sequence validation rejects broken layouts") {
    const auto vocab = Vocabulary::standard();
    Rng rng(3);
    auto s = format_sequence(make_sample(Task::perception, rng), vocab, 8, 4);
    CHECK_NOTHROW(validate_sequence(s, 8, 4));
    CHECK_THROWS_AS(validate_sequence(s, 7, 4), SequenceError);

    auto t = s;
    t.tokens[t.spans[0].first_slot()] = vocab.find("A").value();
    CHECK_THROWS_AS(validate_sequence(t, 8, 4), SequenceError);

    t = s;
    t.text_positions.push_back(t.spans[0].first_slot());
    CHECK_THROWS_AS(validate_sequence(t, 8, 4), SequenceError);

    t = s;
    t.input_image.reset();
    CHECK_THROWS_AS(validate_sequence(t, 8, 4), SequenceError);

    t = s;
    t.text_positions.push_back(0);
    CHECK_THROWS_AS(validate_sequence(t, 8, 4), SequenceError);

    t = s;
    t.tokens.push_back(tokens::eoi);
    CHECK_THROWS_AS(validate_sequence(t, 8, 4), SequenceError);
}

TEST_CASE("LM output shapes follow the index sets") {
    HarmonyModel m(ModelConfig{}, 4);
    const auto vocab = Vocabulary::standard();
    Rng rng(4);
    auto qa = format_sequence(make_sample(Task::comprehension, rng), vocab, 8, 4);
    auto out = m.forward(qa);
    CHECK(out.hidden.rows() == qa.tokens.size());
    CHECK(out.text_logits.rows() == qa.text_positions.size());
    CHECK(out.text_logits.cols() == vocab.size());
    CHECK_FALSE(out.image_conditions.defined());

    auto gen = format_sequence(make_sample(Task::generation, rng), vocab, 8, 4);
    auto g = m.forward(gen);
    CHECK(g.image_conditions.rows() == 4);
    CHECK(g.image_conditions.cols() == 32);
}

TEST_CASE("over-long sequences and unknown ids are refused") {
    HarmonyModel m(ModelConfig{}, 5);
    InterleavedSequence s;
    s.tokens.assign(65, tokens::bos);
    CHECK_THROWS_AS(m.forward(s), SequenceError);
    s.tokens.assign(3, 66);
    CHECK_THROWS_AS(m.forward(s), IndexError);
}
