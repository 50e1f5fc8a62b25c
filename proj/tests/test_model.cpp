#include "doctest.h"

#include "harmony/errors.hpp"
#include "harmony/model.hpp"
#include "harmony/synthworld.hpp"

using namespace harmony;

namespace {

InterleavedSequence prompt_of(const InterleavedSequence& full) {
    InterleavedSequence p = full;
    p.tokens.resize(full.prompt_len);
    p.text_positions.clear();
    p.image_positions.clear();
    p.target_image.reset();
    std::erase_if(p.spans, [](const ImageSpan& s) { return s.role == SpanRole::target; });
    return p;
}

}  // namespace

TEST_CASE("default model size") {
    HarmonyModel m(ModelConfig{}, 1);
    CHECK(m.params.count() == 517360);
    CHECK(m.sites().size() == 12);
}

TEST_CASE("construction is deterministic in the seed") {
    HarmonyModel a(ModelConfig{}, 7), b(ModelConfig{}, 7), c(ModelConfig{}, 8);
    bool same = true, differs = false;
    for (std::size_t i = 0; i < a.params.params().size(); ++i) {
        const auto x = a.params.params()[i].tensor.data(), y = b.params.params()[i].tensor.data(),
                   z = c.params.params()[i].tensor.data();
        same = same && std::equal(x.begin(), x.end(), y.begin());
        differs = differs || !std::equal(x.begin(), x.end(), z.begin());
    }
    CHECK(same);
    CHECK(differs);
}

TEST_CASE("fresh adapters leave the forward pass unchanged") {
    const auto vocab = Vocabulary::standard();
    Rng rng(2);
    auto s = format_sequence(make_sample(Task::perception, rng), vocab, 8, 4);
    HarmonyModel plain(ModelConfig{}, 3), slide(ModelConfig{}, 3), lora(ModelConfig{}, 3);
    slide.attach_slide_lora(SlideLoraConfig{}, 9);
    lora.attach_lora(Placement::both, 4, 8.0, 9);
    const auto ta = plain.forward(s).text_logits, tb = slide.forward(s).text_logits,
               tc = lora.forward(s).text_logits;
    const auto a = ta.data(), b = tb.data(), c = tc.data();
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
    CHECK(std::equal(a.begin(), a.end(), c.begin()));
}

TEST_CASE("freezing policy per stage") {
    HarmonyModel m(ModelConfig{}, 1);
    m.attach_slide_lora(SlideLoraConfig{}, 2);
    auto names = [&] {
        std::vector<std::string> out;
        for (const auto& p : m.trainable_params()) out.push_back(p.name);
        return out;
    };
    auto any_prefix = [](const std::vector<std::string>& v, const std::string& pre) {
        return std::any_of(v.begin(), v.end(), [&](const auto& n) { return n.rfind(pre, 0) == 0; });
    };
    m.apply_freezing(Stage::pretrain);
    auto pre = names();
    CHECK(any_prefix(pre, "resampler."));
    CHECK(any_prefix(pre, "diffusion."));
    CHECK_FALSE(any_prefix(pre, "lm."));
    CHECK_FALSE(any_prefix(pre, "vision."));

    m.apply_freezing(Stage::finetune);
    auto ft = names();
    CHECK(any_prefix(ft, "lm.block0.attn.q.slide.text0"));
    CHECK_FALSE(any_prefix(ft, "lm.token_embedding"));
    CHECK_FALSE(std::count(ft.begin(), ft.end(), "lm.block0.attn.q.weight"));
    CHECK_FALSE(std::count(ft.begin(), ft.end(), "vision.block0.attn.q.weight"));

    m.apply_freezing(Stage::finetune, {{"lm.", true}});
    auto ov = names();
    CHECK(any_prefix(ov, "lm.token_embedding"));
    // Instrumented base projections stay frozen even under an override.
    CHECK_FALSE(std::count(ov.begin(), ov.end(), "lm.block0.attn.q.weight"));
}

TEST_CASE("text generation is greedy, bounded and replays prompt routing") {
    const auto vocab = Vocabulary::standard();
    Rng rng(5);
    HarmonyModel m(ModelConfig{}, 6);
    SlideLoraConfig sl;
    m.attach_slide_lora(sl, 1);
    for (auto& p : m.params.params())
        if (p.name.find(".gate.out.weight") != std::string::npos)
            for (auto& v : Tensor(p.tensor).mutable_data()) v = rng.normal();
    auto full = format_sequence(make_sample(Task::comprehension, rng), vocab, 8, 4);
    auto prompt = prompt_of(full);
    Rng g(1);
    auto a = m.generate(prompt, GenerationMode::text, 5, g);
    auto b = m.generate(prompt, GenerationMode::text, 5, g);
    CHECK(a.generated == b.generated);
    CHECK(a.generated.size() <= 5);
    CHECK(a.gammas.size() == 12);  // 4 vision + 8 LM gates, decided once
    CHECK_THROWS_AS(m.generate(full, GenerationMode::text, 5, g), ContractError);
}

TEST_CASE("image generation runs the sampler once per step") {
    const auto vocab = Vocabulary::standard();
    Rng rng(6);
    HarmonyModel m(ModelConfig{}, 7);
    auto full = format_sequence(make_sample(Task::generation, rng), vocab, 8, 4);
    Rng g(3);
    auto r = m.generate(prompt_of(full), GenerationMode::image, 0, g);
    REQUIRE(r.image.has_value());
    CHECK(r.image->height == 16);
    for (double p : r.image->pixels) CHECK((p >= 0.0 && p <= 1.0));
    CHECK(r.conditions.rows() == 4);
    Rng g2(3);
    auto again = m.generate(prompt_of(full), GenerationMode::image, 0, g2);
    CHECK(*again.image == *r.image);
}
