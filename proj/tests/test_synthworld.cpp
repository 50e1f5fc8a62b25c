#include "doctest.h"

#include <bitset>
#include <filesystem>

#include "harmony/errors.hpp"
#include "harmony/synthworld.hpp"
#include "support/suites.hpp"

using namespace harmony;

TEST_CASE("glyphs are pairwise distinguishable") {
    for (std::size_t a = 0; a < glyphs::count; ++a) {
        CHECK(glyphs::index_of(glyphs::letter(a)) == a);
        for (std::size_t b = a + 1; b < glyphs::count; ++b)
            CHECK(std::bitset<16>(glyphs::bitmaps[a] ^ glyphs::bitmaps[b]).count() >= 3);
    }
    CHECK_FALSE(glyphs::index_of('Z').has_value());
}

TEST_CASE("render places bitmaps in their cells") {
    std::vector<GlyphStamp> spec{{0, 1, 2}};
    const auto img = render(spec);
    CHECK(img.height == 16);
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) {
            const bool inside = y >= 4 && y < 8 && x >= 8 && x < 12;
            const bool on = inside && ((glyphs::bitmaps[0] >> (15 - ((y - 4) * 4 + (x - 8)))) & 1);
            CHECK(img.at(y, x) == (on ? 1.0 : 0.0));
        }
    std::vector<GlyphStamp> clash{{0, 1, 1}, {2, 1, 1}};
    CHECK_THROWS_AS(render(clash), SpecError);
    std::vector<GlyphStamp> off{{0, 4, 0}};
    CHECK_THROWS_AS(render(off), SpecError);
    std::vector<GlyphStamp> unknown{{16, 0, 0}};
    CHECK_THROWS_AS(render(unknown), SpecError);
}

TEST_CASE("cell boxes are pixel boxes") {
    CHECK(cell_box(1, 2) == Box{8, 4, 12, 8});
    CHECK(cell_box(0, 1, 3) == Box{4, 0, 16, 4});
}

TEST_CASE("perception answers re-render the input") {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const auto s = make_sample(Task::perception, rng);
        CHECK(render(stamps(s.words)) == s.input_image);
        for (const auto& w : s.words) {
            // Cropping the word's box from a render of only that word matches the input.
            std::vector<Word> one{w};
            const auto solo = render(stamps(one));
            const auto b = w.box();
            for (auto y = static_cast<std::size_t>(b.y0); y < static_cast<std::size_t>(b.y1); ++y)
                for (auto x = static_cast<std::size_t>(b.x0); x < static_cast<std::size_t>(b.x1); ++x)
                    CHECK(solo.at(y, x) == s.input_image.at(y, x));
        }
        if (s.template_id == 1) {
            REQUIRE(s.boxes.size() == 1);
            CHECK(s.answer == format_box(s.boxes[0]));
        }
        if (s.template_id == 2) {
            std::string joined;
            for (const auto& w : s.words) joined += (joined.empty() ? "" : " ") + w.text;
            CHECK(s.answer == joined);
        }
    }
}

TEST_CASE("formatted sequences keep the supervision rules") {
    const auto vocab = Vocabulary::standard();
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
        const auto task = static_cast<Task>(i % 4);
        const auto s = make_sample(task, rng);
        const auto seq = format_sequence(s, vocab, 8, 4);
        if (task == Task::perception || task == Task::comprehension) {
            CHECK(seq.label == TaskLabel::text_gen);
            CHECK(seq.image_positions.empty());
            std::vector<TokenId> ans;
            for (auto p : seq.text_positions) ans.push_back(seq.tokens[p]);
            CHECK(ans.back() == tokens::eos);
            CHECK(vocab.decode(ans) == s.answer);
            CHECK(seq.text_positions.front() == seq.prompt_len);
        } else {
            CHECK(seq.label == TaskLabel::image_gen);
            CHECK(seq.text_positions.empty());
            CHECK(seq.image_positions.size() == 4);
            CHECK(seq.image_positions.front() > seq.prompt_len);
            REQUIRE(seq.target_image.has_value());
            // Instruction tokens are prompt, never supervised.
            CHECK(vocab.decode(std::span(seq.tokens).subspan(0, seq.prompt_len)).find(s.instruction) !=
                  std::string::npos);
        }
        if (task == Task::editing) {
            REQUIRE(s.masked_cell.has_value());
            CHECK(*s.target_image == render(stamps(s.words)));
        }
        if (task == Task::generation) {
            CHECK(s.input_image == Image::black(16, 16));
        }
    }
}

TEST_CASE("task names") {
    for (auto t : {Task::perception, Task::comprehension, Task::generation, Task::editing})
        CHECK(parse_task(to_string(t)) == t);
    CHECK_THROWS_AS(parse_task("ocr"), ConfigError);
}

TEST_CASE("datasets are deterministic and round-trip through JSON lines") {
    DatasetSpec spec{7, 24};
    const auto a = make_dataset(spec), b = make_dataset(spec);
    CHECK(a == b);
    CHECK(make_dataset_sample(spec, 13) == a[13]);
    for (const auto& s : a) CHECK(from_jsonl(to_jsonl(s)) == s);
    const auto dir = std::filesystem::temp_directory_path() / "harmony_ds_test";
    std::filesystem::create_directories(dir);
    write_dataset(dir / "a.jsonl", a);
    write_dataset(dir / "b.jsonl", b);
    CHECK(sha256_file(dir / "a.jsonl") == sha256_file(dir / "b.jsonl"));
    CHECK(read_dataset(dir / "a.jsonl") == a);
    spec.seed = 8;
    write_dataset(dir / "c.jsonl", make_dataset(spec));
    CHECK(sha256_file(dir / "a.jsonl") != sha256_file(dir / "c.jsonl"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("caption filter matches the golden file") {
    const auto r = harmony::testing::filter_golden(HARMONY_TEST_DATA "/filter_golden.jsonl");
    CHECK(r.cases == 50);
    for (const auto& name : r.failed) FAIL_CHECK(name);
}
