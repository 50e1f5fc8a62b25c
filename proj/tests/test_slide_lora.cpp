#include "doctest.h"

#include "harmony/errors.hpp"
#include "harmony/model.hpp"
#include "harmony/slide_lora.hpp"
#include "support/gradcheck.hpp"
#include "support/suites.hpp"

using namespace harmony;
using harmony::testing::random_tensor;

TEST_CASE("Slide-LoRA algebra holds exhaustively at toy dims") {
    for (const auto& c : harmony::testing::slide_lora_algebra()) {
        INFO(c.name, " ", c.detail);
        CHECK(c.ok);
    }
}

TEST_CASE("param_overhead matches counted adapter tensors") {
    const auto grid = harmony::testing::param_overhead_grid();
    CHECK(grid.size() == 108);
    for (const auto& c : grid) {
        INFO(c.name, ": ", c.detail);
        CHECK(c.ok);
    }
}

TEST_CASE("default model overhead") {
    HarmonyModel m(ModelConfig{}, 1);
    const auto base = m.params.count();
    m.attach_slide_lora(SlideLoraConfig{}, 2);
    const auto oh = m.overhead();
    CHECK(oh.base == base);
    CHECK(oh.added == m.adapter_param_count());
    // 12 sites (q, v in 2 vision + 4 LM blocks) of 64→64 with s=1, r=4, h=16
    CHECK(oh.added == 12 * (3 * 4 * 128 + 64 * 16 + 2 * 16 + 1));
}

TEST_CASE("config validation") {
    SlideLoraConfig c;
    c.n = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.n = 6;
    c.s = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.s = 2;
    CHECK_NOTHROW(c.validate());
    c.rank = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(parse_placement("vision-encoder") == Placement::vision_encoder);
    CHECK_THROWS_AS(parse_placement("decoder"), ConfigError);
}

TEST_CASE("rank must stay below the layer width") {
    ParamStore st;
    Rng rng(1);
    CHECK_THROWS_AS(make_expert(st, "e", 4, 4, 4, 1.0, rng), ConfigError);
}

TEST_CASE("attaching twice is refused") {
    HarmonyModel m(ModelConfig{}, 1);
    m.attach_slide_lora(SlideLoraConfig{}, 2);
    CHECK_THROWS_AS(m.attach_slide_lora(SlideLoraConfig{}, 3), ConfigError);
}

TEST_CASE("placement selects the instrumented component") {
    for (auto pl : {Placement::vision_encoder, Placement::llm, Placement::both}) {
        HarmonyModel m(ModelConfig{}, 1);
        SlideLoraConfig c;
        c.placement = pl;
        const auto rep = m.attach_slide_lora(c, 2);
        std::size_t vis = 0, lm = 0;
        for (const auto& s : m.sites())
            if (s.projection->has_slide_lora()) (s.component == Component::llm ? lm : vis)++;
        CHECK(rep.layers == vis + lm);
        CHECK((vis > 0) == (pl != Placement::llm));
        CHECK((lm > 0) == (pl != Placement::vision_encoder));
    }
}

TEST_CASE("gate reads a detached input and pools a prefix") {
    ParamStore st;
    Rng rng(4);
    GatingNetwork g(st, "g", 3, 4, rng);
    for (auto& v : g.out.weight.mutable_data()) v = rng.normal();
    auto x = random_tensor({5, 3}, rng);
    x.set_requires_grad(true);
    sum(g.logit(x)).backward();
    for (double v : x.grad()) CHECK(v == 0.0);
    // Rows after the pooled prefix do not influence γ.
    auto y = x.clone();
    y.mutable_data()[4 * 3] += 10.0;
    CHECK(g.gamma(x, 2) == g.gamma(y, 2));
    CHECK(g.gamma(x) != g.gamma(y));
}

TEST_CASE("route trace records then replays") {
    ParamStore st;
    Rng rng(5);
    GatingNetwork g(st, "g", 3, 4, rng);
    for (auto& v : g.out.weight.mutable_data()) v = rng.normal();
    auto a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
    RouteTrace t;
    const double ga = t.resolve(g, a), gb = t.resolve(g, b);
    CHECK(t.gammas().size() == 2);
    CHECK(t.logits().size() == 2);
    t.freeze();
    CHECK(t.resolve(g, b) == ga);
    CHECK(t.resolve(g, a) == gb);
    CHECK_THROWS_AS(t.resolve(g, a), ContractError);
    t.freeze(1);
    CHECK(t.resolve(g, a) == gb);
    CHECK_THROWS_AS(t.freeze(3), ContractError);
    RouteTrace forced;
    forced.forced_gamma = 0.2;
    CHECK(forced.resolve(g, a) == 0.2);
    CHECK(forced.gammas().empty());
}
