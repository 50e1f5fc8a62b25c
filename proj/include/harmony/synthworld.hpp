#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "harmony/backbone.hpp"
#include "harmony/image.hpp"
#include "harmony/metrics.hpp"
#include "harmony/rng.hpp"
#include "harmony/vocab.hpp"

namespace harmony {

namespace glyphs {
inline constexpr std::size_t count = 16;
inline constexpr std::size_t size = 4;     // pixels per glyph side
inline constexpr std::size_t grid = 4;     // cells per canvas side
inline constexpr std::size_t canvas = 16;  // grid * size

// Row-major 4×4 bitmaps, most significant bit is the top-left pixel.
// Pairwise Hamming distance is at least 3.
inline constexpr std::array<std::uint16_t, count> bitmaps = {
    0x69F9, 0xEDBF, 0x7886, 0xE99C, 0xFE8F, 0xF8E9, 0x78B7, 0x9F98,
    0x4444, 0x1196, 0x9ACB, 0x888F, 0x9FFB, 0x9DB9, 0x6996, 0xE9E8,
};

inline char letter(std::size_t glyph) { return static_cast<char>('A' + glyph); }
std::optional<std::size_t> index_of(char c);
}  // namespace glyphs

struct GlyphStamp {
    std::size_t glyph = 0;
    std::size_t row = 0, col = 0;
    bool operator==(const GlyphStamp&) const = default;
};

// Throws SpecError on an unknown glyph, an out-of-grid cell or two stamps in one cell.
Image render(std::span<const GlyphStamp> spec);

// Pixel box of cells [col, col+len) on `row`.
Box cell_box(std::size_t row, std::size_t col, std::size_t len = 1);

// A horizontal run of glyphs starting at (row, col).
struct Word {
    std::string text;
    std::size_t row = 0, col = 0;
    Box box() const { return cell_box(row, col, text.size()); }
    bool operator==(const Word&) const = default;
};

std::vector<GlyphStamp> stamps(std::span<const Word> words);

enum class Task { perception, comprehension, generation, editing };

std::string to_string(Task t);
Task parse_task(const std::string& s);

inline constexpr std::array<const char*, 5> perception_templates = {
    "What is the text in <mask> in this image?",
    "Where is <text> in this image?",
    "Extract all the text in this image.",
    "Locate all the text in this image.",
    "Locate and extract all the text in this image.",
};

inline constexpr std::array<const char*, 3> comprehension_questions = {
    "How many words are in this image?",
    "How many letters are in this image?",
    "What is the first letter?",
};

struct SyntheticSample {
    Task task = Task::perception;
    std::size_t template_id = 0;
    Image input_image;
    std::string instruction;
    std::string answer;                 // QA tasks
    std::optional<Image> target_image;  // generation and editing
    std::vector<Box> boxes;
    TaskLabel task_label = TaskLabel::text_gen;
    std::vector<Word> words;  // layout in reading order
    std::optional<std::pair<std::size_t, std::size_t>> masked_cell;  // editing

    bool operator==(const SyntheticSample&) const = default;
};

SyntheticSample make_sample(Task task, Rng& rng);

// QA:    <BOS> preamble <BOI> K×slot <EOI> " Question: " q " Answer: " answer <EOS>
// Image: <BOS> <BOI> K×slot <EOI> instruction <BOI> K_img×slot <EOI> <EOS>
// Only answer tokens (plus <EOS>) or target slots are supervised.
InterleavedSequence format_sequence(const SyntheticSample& s, const Vocabulary& vocab,
                                    std::size_t input_slots, std::size_t target_slots);

enum class LengthUnit { words, characters };

struct FilterResult {
    bool keep = true;
    std::string reason;  // "non_ascii" or "too_long" when rejected
};

FilterResult filter_caption(std::string_view text, LengthUnit unit = LengthUnit::words,
                            std::size_t limit = 100);

struct DatasetSpec {
    std::uint64_t seed = 0;
    std::size_t size = 0;
    std::vector<Task> tasks{Task::perception, Task::comprehension, Task::generation, Task::editing};
};

// Sample i draws from Rng(derive_seed(seed, "sample/<i>")) with task tasks[i % tasks.size()].
SyntheticSample make_dataset_sample(const DatasetSpec& spec, std::size_t index);
std::vector<SyntheticSample> make_dataset(const DatasetSpec& spec);

std::string to_jsonl(const SyntheticSample& s);
SyntheticSample from_jsonl(std::string_view line);
void write_dataset(const std::filesystem::path& path, std::span<const SyntheticSample> samples);
std::vector<SyntheticSample> read_dataset(const std::filesystem::path& path);
// <dir>/<index>_input.pgm and <index>_target.pgm.
void dump_pgm(const std::filesystem::path& dir, std::span<const SyntheticSample> samples);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace harmony
