#include "harmony/synthworld.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "harmony/errors.hpp"
#include "json.hpp"

namespace harmony {

using json = nlohmann::json;

std::optional<std::size_t> glyphs::index_of(char c) {
    if (c < 'A' || c >= 'A' + static_cast<int>(count)) return std::nullopt;
    return static_cast<std::size_t>(c - 'A');
}

Image render(std::span<const GlyphStamp> spec) {
    using namespace glyphs;
    auto img = Image::black(canvas, canvas);
    std::array<bool, grid * grid> used{};
    for (const auto& s : spec) {
        if (s.glyph >= count) throw SpecError("unknown glyph " + std::to_string(s.glyph));
        if (s.row >= grid || s.col >= grid) {
            throw SpecError("cell (" + std::to_string(s.row) + "," + std::to_string(s.col) +
                            ") is off the grid");
        }
        auto& u = used[s.row * grid + s.col];
        if (u) {
            throw SpecError("two glyphs stamped at cell (" + std::to_string(s.row) + "," +
                            std::to_string(s.col) + ")");
        }
        u = true;
        const auto bits = bitmaps[s.glyph];
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x)
                if (bits >> (15 - (y * size + x)) & 1u) img.at(s.row * size + y, s.col * size + x) = 1.0;
    }
    return img;
}

Box cell_box(std::size_t row, std::size_t col, std::size_t len) {
    const double s = static_cast<double>(glyphs::size);
    return {col * s, row * s, (col + len) * s, (row + 1) * s};
}

std::vector<GlyphStamp> stamps(std::span<const Word> words) {
    std::vector<GlyphStamp> out;
    for (const auto& w : words)
        for (std::size_t i = 0; i < w.text.size(); ++i) {
            auto g = glyphs::index_of(w.text[i]);
            if (!g) throw SpecError(std::string("no glyph for '") + w.text[i] + "'");
            out.push_back({*g, w.row, w.col + i});
        }
    return out;
}

std::string to_string(Task t) {
    switch (t) {
        case Task::perception: return "perception";
        case Task::comprehension: return "comprehension";
        case Task::generation: return "generation";
        case Task::editing: return "editing";
    }
    return "?";
}

Task parse_task(const std::string& s) {
    for (auto t : {Task::perception, Task::comprehension, Task::generation, Task::editing})
        if (to_string(t) == s) return t;
    throw ConfigError("unknown task '" + s + "'");
}

namespace {

// 1–2 distinct words of 1–3 letters on free cells, in reading order.
std::vector<Word> random_layout(Rng& rng) {
    using glyphs::grid;
    const std::size_t n_words = 1 + rng.index(2);
    std::array<bool, grid * grid> used{};
    std::vector<Word> words;
    while (words.size() < n_words) {
        Word w;
        const std::size_t len = 1 + rng.index(3);
        for (std::size_t i = 0; i < len; ++i) w.text += glyphs::letter(rng.index(glyphs::count));
        w.row = rng.index(grid);
        w.col = rng.index(grid - len + 1);
        bool ok = std::none_of(words.begin(), words.end(), [&](const Word& o) { return o.text == w.text; });
        for (std::size_t i = 0; ok && i < len; ++i) ok = !used[w.row * grid + w.col + i];
        if (!ok) continue;
        // Keep a gap so adjacent words never read as one.
        for (std::size_t i = 0; i < len; ++i) used[w.row * grid + w.col + i] = true;
        if (w.col > 0) used[w.row * grid + w.col - 1] = true;
        if (w.col + len < grid) used[w.row * grid + w.col + len] = true;
        words.push_back(std::move(w));
    }
    std::sort(words.begin(), words.end(),
              [](const Word& a, const Word& b) { return std::tie(a.row, a.col) < std::tie(b.row, b.col); });
    return words;
}

std::string join(const std::vector<std::string>& parts, const char* sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
    return out;
}

std::string replace(std::string s, std::string_view what, const std::string& with) {
    const auto pos = s.find(what);
    if (pos != std::string::npos) s.replace(pos, what.size(), with);
    return s;
}

}  // namespace

SyntheticSample make_sample(Task task, Rng& rng) {
    SyntheticSample s;
    s.task = task;
    s.words = random_layout(rng);
    const auto layout = stamps(s.words);
    const auto img = render(layout);
    for (const auto& w : s.words) s.boxes.push_back(w.box());

    switch (task) {
        case Task::perception: {
            s.template_id = rng.index(perception_templates.size());
            s.input_image = img;
            const std::string tmpl = perception_templates[s.template_id];
            std::vector<std::string> texts, boxes, both;
            for (const auto& w : s.words) {
                texts.push_back(w.text);
                boxes.push_back(format_box(w.box()));
                both.push_back(w.text + " " + format_box(w.box()));
            }
            const auto& pick = s.words[rng.index(s.words.size())];
            switch (s.template_id) {
                case 0:
                    s.instruction = replace(tmpl, "<mask>", format_box(pick.box()));
                    s.answer = pick.text;
                    s.boxes = {pick.box()};
                    break;
                case 1:
                    s.instruction = replace(tmpl, "<text>", pick.text);
                    s.answer = format_box(pick.box());
                    s.boxes = {pick.box()};
                    break;
                case 2: s.instruction = tmpl; s.answer = join(texts, " "); break;
                case 3: s.instruction = tmpl; s.answer = join(boxes, " "); break;
                default: s.instruction = tmpl; s.answer = join(both, " "); break;
            }
            break;
        }
        case Task::comprehension: {
            s.template_id = rng.index(comprehension_questions.size());
            s.input_image = img;
            s.instruction = comprehension_questions[s.template_id];
            if (s.template_id == 0) {
                s.answer = std::to_string(s.words.size());
            } else if (s.template_id == 1) {
                s.answer = std::to_string(layout.size());
            } else {
                s.answer = std::string(1, s.words.front().text.front());
            }
            break;
        }
        case Task::generation: {
            s.input_image = Image::black(glyphs::canvas, glyphs::canvas);
            std::vector<std::string> parts;
            for (const auto& w : s.words)
                parts.push_back(w.text + " at (" + std::to_string(w.row) + "," + std::to_string(w.col) + ")");
            s.instruction = "Generate an image according to the caption. text: " + join(parts, "; ");
            s.target_image = img;
            s.task_label = TaskLabel::image_gen;
            break;
        }
        case Task::editing: {
            const auto& cell = layout[rng.index(layout.size())];
            s.masked_cell = {cell.row, cell.col};
            s.input_image = img;
            for (std::size_t y = 0; y < glyphs::size; ++y)
                for (std::size_t x = 0; x < glyphs::size; ++x)
                    s.input_image.at(cell.row * glyphs::size + y, cell.col * glyphs::size + x) = 0.0;
            s.instruction = std::string("Fill the masked part in this image with ") + glyphs::letter(cell.glyph);
            s.boxes = {cell_box(cell.row, cell.col)};
            s.target_image = img;
            s.task_label = TaskLabel::image_gen;
            break;
        }
    }
    return s;
}

InterleavedSequence format_sequence(const SyntheticSample& s, const Vocabulary& vocab,
                                    std::size_t input_slots, std::size_t target_slots) {
    InterleavedSequence seq;
    auto& t = seq.tokens;
    auto text = [&](std::string_view str) {
        auto ids = vocab.encode(str);
        t.insert(t.end(), ids.begin(), ids.end());
    };
    auto span = [&](std::size_t slots, SpanRole role) {
        seq.spans.push_back({t.size(), slots, role});
        t.push_back(tokens::boi);
        for (std::size_t i = 0; i < slots; ++i) {
            if (role == SpanRole::target) seq.image_positions.push_back(t.size());
            t.push_back(tokens::img_slot);
        }
        t.push_back(tokens::eoi);
    };

    seq.input_image = s.input_image;
    t.push_back(tokens::bos);
    if (s.task == Task::generation || s.task == Task::editing) {
        if (!s.target_image) throw ContractError(to_string(s.task) + " sample without a target image");
        span(input_slots, SpanRole::input);
        text(s.instruction);
        seq.prompt_len = t.size();
        span(target_slots, SpanRole::target);
        t.push_back(tokens::eos);
        seq.target_image = s.target_image;
        seq.label = TaskLabel::image_gen;
    } else {
        text("Answer the following question based on the image. ");
        span(input_slots, SpanRole::input);
        text(" Question: ");
        text(s.instruction);
        text(" Answer: ");
        seq.prompt_len = t.size();
        const auto answer = vocab.encode(s.answer);
        for (auto id : answer) {
            seq.text_positions.push_back(t.size());
            t.push_back(id);
        }
        seq.text_positions.push_back(t.size());
        t.push_back(tokens::eos);
        seq.label = TaskLabel::text_gen;
    }
    validate_sequence(seq, input_slots, target_slots);
    return seq;
}

FilterResult filter_caption(std::string_view text, LengthUnit unit, std::size_t limit) {
    for (unsigned char c : text)
        if (c >= 0x80) return {false, "non_ascii"};
    std::size_t length = text.size();
    if (unit == LengthUnit::words) {
        std::istringstream in{std::string(text)};
        std::string w;
        length = 0;
        while (in >> w) ++length;
    }
    if (length > limit) return {false, "too_long"};
    return {};
}

SyntheticSample make_dataset_sample(const DatasetSpec& spec, std::size_t index) {
    if (spec.tasks.empty()) throw ConfigError("dataset needs at least one task");
    Rng rng(derive_seed(spec.seed, "sample/" + std::to_string(index)));
    return make_sample(spec.tasks[index % spec.tasks.size()], rng);
}

std::vector<SyntheticSample> make_dataset(const DatasetSpec& spec) {
    std::vector<SyntheticSample> out;
    out.reserve(spec.size);
    for (std::size_t i = 0; i < spec.size; ++i) out.push_back(make_dataset_sample(spec, i));
    return out;
}

namespace {

json image_json(const Image& img) {
    std::vector<int> px;
    for (double v : img.pixels) px.push_back(static_cast<int>(std::lround(v * 255.0)));
    return {{"height", img.height}, {"width", img.width}, {"channels", img.channels}, {"pixels", px}};
}

Image image_from(const json& j) {
    Image img;
    img.height = j.at("height");
    img.width = j.at("width");
    img.channels = j.at("channels");
    for (int v : j.at("pixels").get<std::vector<int>>()) img.pixels.push_back(v / 255.0);
    if (img.pixels.size() != img.height * img.width * img.channels) {
        throw IntegrityError("image payload has " + std::to_string(img.pixels.size()) + " pixels, expected " +
                             std::to_string(img.height * img.width * img.channels));
    }
    return img;
}

json box_json(const Box& b) { return {b.x0, b.y0, b.x1, b.y1}; }

}  // namespace

std::string to_jsonl(const SyntheticSample& s) {
    json j;
    j["task"] = to_string(s.task);
    j["template_id"] = s.template_id;
    j["task_label"] = static_cast<int>(s.task_label);
    j["instruction"] = s.instruction;
    j["answer"] = s.answer;
    j["input_image"] = image_json(s.input_image);
    j["target_image"] = s.target_image ? image_json(*s.target_image) : json(nullptr);
    j["boxes"] = json::array();
    for (const auto& b : s.boxes) j["boxes"].push_back(box_json(b));
    j["words"] = json::array();
    for (const auto& w : s.words) j["words"].push_back({{"text", w.text}, {"row", w.row}, {"col", w.col}});
    j["masked_cell"] = s.masked_cell ? json{s.masked_cell->first, s.masked_cell->second} : json(nullptr);
    return j.dump();
}

SyntheticSample from_jsonl(std::string_view line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("malformed dataset line: ") + e.what());
    }
    SyntheticSample s;
    s.task = parse_task(j.at("task"));
    s.template_id = j.at("template_id");
    s.task_label = j.at("task_label").get<int>() == 0 ? TaskLabel::image_gen : TaskLabel::text_gen;
    s.instruction = j.at("instruction");
    s.answer = j.at("answer");
    s.input_image = image_from(j.at("input_image"));
    if (!j.at("target_image").is_null()) s.target_image = image_from(j.at("target_image"));
    for (const auto& b : j.at("boxes")) s.boxes.push_back({b[0], b[1], b[2], b[3]});
    for (const auto& w : j.at("words")) s.words.push_back({w.at("text"), w.at("row"), w.at("col")});
    if (!j.at("masked_cell").is_null()) s.masked_cell = {j["masked_cell"][0], j["masked_cell"][1]};
    return s;
}

void write_dataset(const std::filesystem::path& path, std::span<const SyntheticSample> samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write dataset " + path.string());
    for (const auto& s : samples) out << to_jsonl(s) << '\n';
}

std::vector<SyntheticSample> read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read dataset " + path.string());
    std::vector<SyntheticSample> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(from_jsonl(line));
    return out;
}

void dump_pgm(const std::filesystem::path& dir, std::span<const SyntheticSample> samples) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto stem = std::to_string(i);
        write_pgm(dir / (stem + "_input.pgm"), samples[i].input_image);
        if (samples[i].target_image) write_pgm(dir / (stem + "_target.pgm"), *samples[i].target_image);
    }
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 failed");
    }
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return out.str();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return sha256_hex(buf.str());
}

}  // namespace harmony
