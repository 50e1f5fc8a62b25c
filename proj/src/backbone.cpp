#include "harmony/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "harmony/errors.hpp"

namespace harmony {

void BackboneConfig::validate() const {
    if (patch == 0 || image_size % patch != 0) {
        throw ConfigError("image size " + std::to_string(image_size) +
                          " is not divisible by patch size " + std::to_string(patch));
    }
    if (heads == 0 || width % heads != 0) {
        throw ConfigError("width " + std::to_string(width) + " not divisible by heads " +
                          std::to_string(heads));
    }
    if (vocab_size <= tokens::reserved_count) throw ConfigError("vocabulary too small");
    if (queries == 0 || image_slots == 0) throw ConfigError("queries and image_slots must be >= 1");
    for (const auto& t : adapter_targets)
        if (t != "q" && t != "k" && t != "v" && t != "o")
            throw ConfigError("unknown adapter target '" + t + "'");
}

// ------------------------------------------------------------------ blocks

AttentionBlock::AttentionBlock(ParamStore& store, const std::string& block_name,
                               std::size_t width, std::size_t n_heads, std::size_t mlp_hidden,
                               bool is_causal, Rng& rng)
    : name(block_name),
      ln_attn(store, block_name + ".ln_attn", width),
      q(Linear(store, block_name + ".attn.q", width, width, rng)),
      k(Linear(store, block_name + ".attn.k", width, width, rng)),
      v(Linear(store, block_name + ".attn.v", width, width, rng)),
      o(Linear(store, block_name + ".attn.o", width, width, rng)),
      ln_mlp(store, block_name + ".ln_mlp", width),
      mlp(store, block_name + ".mlp", width, mlp_hidden, rng),
      heads(n_heads),
      causal(is_causal) {}

Tensor AttentionBlock::forward(const Tensor& x, RouteTrace* trace) const {
    auto h = ln_attn.forward(x);
    auto attn = multi_head_attention(q.forward(h, trace), k.forward(h, trace),
                                     v.forward(h, trace), heads, causal);
    auto y = add(x, o.forward(attn, trace));
    return add(y, mlp.forward(ln_mlp.forward(y)));
}

std::vector<ProjectionSite> AttentionBlock::sites(Component component,
                                                  const std::vector<std::string>& targets) {
    std::vector<ProjectionSite> out;
    for (const auto& t : targets) {
        Projection* p = t == "q" ? &q : t == "k" ? &k : t == "v" ? &v : &o;
        out.push_back({name + ".attn." + t, component, p});
    }
    return out;
}

CrossAttentionBlock::CrossAttentionBlock(ParamStore& store, const std::string& name,
                                         std::size_t width, std::size_t memory_width,
                                         std::size_t n_heads, std::size_t mlp_hidden, Rng& rng)
    : ln_q(store, name + ".ln_q", width),
      ln_kv(store, name + ".ln_kv", memory_width),
      q(store, name + ".attn.q", width, width, rng),
      k(store, name + ".attn.k", memory_width, width, rng),
      v(store, name + ".attn.v", memory_width, width, rng),
      o(store, name + ".attn.o", width, width, rng),
      ln_mlp(store, name + ".ln_mlp", width),
      mlp(store, name + ".mlp", width, mlp_hidden, rng),
      heads(n_heads) {}

Tensor CrossAttentionBlock::forward(const Tensor& queries, const Tensor& memory) const {
    auto hq = ln_q.forward(queries);
    auto hm = ln_kv.forward(memory);
    auto attn = multi_head_attention(q.forward(hq), k.forward(hm), v.forward(hm), heads, false);
    auto y = add(queries, o.forward(attn));
    return add(y, mlp.forward(ln_mlp.forward(y)));
}

std::vector<Tensor> CrossAttentionBlock::attention_weights(const Tensor& queries,
                                                           const Tensor& memory) const {
    auto hq = ln_q.forward(queries);
    auto hm = ln_kv.forward(memory);
    return harmony::attention_weights(q.forward(hq), k.forward(hm), heads, false);
}

// ------------------------------------------------------------------ vision encoder

VisionEncoder::VisionEncoder(ParamStore& store, const BackboneConfig& cfg, Rng& rng)
    : image_size(cfg.image_size), channels(cfg.channels), patch(cfg.patch) {
    cfg.validate();
    patch_embed = Linear(store, "vision.patch_embed", cfg.patch * cfg.patch * cfg.channels,
                         cfg.width, rng);
    positions = store.add("vision.positions",
                          normal_param({cfg.patches_per_image(), cfg.width}, 0.1, rng));
    for (std::size_t i = 0; i < cfg.vision_blocks; ++i)
        blocks.emplace_back(store, "vision.block" + std::to_string(i), cfg.width, cfg.heads,
                            cfg.width * cfg.mlp_ratio, false, rng);
}

std::vector<double> VisionEncoder::patchify(const Image& img) const {
    if (img.height % patch != 0 || img.width % patch != 0) {
        throw ConfigError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                          " is not divisible by patch size " + std::to_string(patch));
    }
    if (img.height != image_size || img.width != image_size || img.channels != channels) {
        throw DimensionError("vision encoder expects " + std::to_string(image_size) + "x" +
                             std::to_string(image_size) + "x" + std::to_string(channels) +
                             " images");
    }
    const std::size_t per_side = image_size / patch;
    const std::size_t dim = patch * patch * channels;
    std::vector<double> out(per_side * per_side * dim);
    for (std::size_t py = 0; py < per_side; ++py)
        for (std::size_t px = 0; px < per_side; ++px) {
            const std::size_t t = py * per_side + px;
            std::size_t k = 0;
            for (std::size_t y = 0; y < patch; ++y)
                for (std::size_t x = 0; x < patch; ++x)
                    for (std::size_t c = 0; c < channels; ++c)
                        out[t * dim + k++] = img.at(py * patch + y, px * patch + x, c);
        }
    return out;
}

Tensor VisionEncoder::encode(const Image& img, RouteTrace* trace, bool run_blocks) const {
    auto patches = patchify(img);
    const std::size_t n = positions.rows();
    auto x = Tensor::from({n, patch * patch * channels}, std::move(patches));
    auto h = add(patch_embed.forward(x), positions);
    if (!run_blocks) return h;
    for (const auto& b : blocks) h = b.forward(h, trace);
    return h;
}

// ------------------------------------------------------------------ resampler

Resampler::Resampler(ParamStore& store, const BackboneConfig& cfg, Rng& rng) {
    queries = store.add("resampler.queries", normal_param({cfg.queries, cfg.width}, 1.0, rng));
    for (std::size_t i = 0; i < cfg.resampler_blocks; ++i)
        blocks.emplace_back(store, "resampler.block" + std::to_string(i), cfg.width, cfg.width,
                            cfg.heads, cfg.width * cfg.mlp_ratio, rng);
}

Tensor Resampler::resample(const Tensor& vision_tokens) const {
    if (vision_tokens.rows() == 0) throw ContractError("resample: no vision tokens");
    Tensor h = queries;
    for (const auto& b : blocks) h = b.forward(h, vision_tokens);
    return h;
}

std::vector<Tensor> Resampler::first_block_attention(const Tensor& vision_tokens) const {
    if (blocks.empty()) throw ContractError("resampler has no blocks");
    return blocks.front().attention_weights(queries, vision_tokens);
}

// ------------------------------------------------------------------ sequences

const ImageSpan* InterleavedSequence::input_span() const {
    for (const auto& s : spans)
        if (s.role == SpanRole::input) return &s;
    return nullptr;
}

const ImageSpan* InterleavedSequence::target_span() const {
    for (const auto& s : spans)
        if (s.role == SpanRole::target) return &s;
    return nullptr;
}

void validate_sequence(const InterleavedSequence& seq, std::size_t input_slots,
                       std::size_t target_slots) {
    const auto& t = seq.tokens;
    std::vector<char> covered(t.size(), 0);
    std::size_t inputs = 0, targets = 0;
    for (const auto& span : seq.spans) {
        const std::size_t want = span.role == SpanRole::input ? input_slots : target_slots;
        if (span.slots != want) {
            throw SequenceError("image span at " + std::to_string(span.begin) + " has " +
                                std::to_string(span.slots) + " slots, expected " +
                                std::to_string(want));
        }
        if (span.end() > t.size() || t[span.begin] != tokens::boi ||
            t[span.end() - 1] != tokens::eoi) {
            throw SequenceError("image span at " + std::to_string(span.begin) +
                                " is not delimited by <BOI>/<EOI>");
        }
        for (std::size_t i = span.first_slot(); i < span.first_slot() + span.slots; ++i)
            if (t[i] != tokens::img_slot)
                throw SequenceError("image span at " + std::to_string(span.begin) +
                                    " contains a non-slot token at " + std::to_string(i));
        for (std::size_t i = span.begin; i < span.end(); ++i) {
            if (covered[i]) throw SequenceError("overlapping image spans");
            covered[i] = 1;
        }
        (span.role == SpanRole::input ? inputs : targets)++;
    }
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!covered[i] && (t[i] == tokens::boi || t[i] == tokens::eoi || t[i] == tokens::img_slot))
            throw SequenceError("image delimiter or slot outside a span at " + std::to_string(i));
    if (inputs > 1 || targets > 1) throw SequenceError("at most one input and one target image");
    if (inputs == 1 && !seq.input_image) throw SequenceError("input span without an input image");

    std::vector<char> in_text(t.size(), 0);
    for (auto p : seq.text_positions) {
        if (p == 0 || p >= t.size()) {
            throw SequenceError("text position " + std::to_string(p) + " cannot be predicted");
        }
        if (covered[p]) throw SequenceError("text position " + std::to_string(p) + " inside an image span");
        in_text[p] = 1;
    }
    const ImageSpan* target = seq.target_span();
    if (target) {
        if (seq.image_positions.size() != target->slots) {
            throw SequenceError("N_I must list exactly the target span slots");
        }
        for (std::size_t j = 0; j < target->slots; ++j)
            if (seq.image_positions[j] != target->first_slot() + j)
                throw SequenceError("N_I does not match the target span slots");
    } else if (!seq.image_positions.empty()) {
        throw SequenceError("N_I is non-empty but there is no target span");
    }
    for (auto p : seq.image_positions)
        if (in_text[p]) throw SequenceError("N_T and N_I overlap at " + std::to_string(p));
    if (seq.prompt_len > t.size()) throw SequenceError("prompt_len exceeds sequence length");
}

// ------------------------------------------------------------------ causal LM

CausalLM::CausalLM(ParamStore& store, const BackboneConfig& cfg, Rng& rng)
    : vocab_size(cfg.vocab_size),
      max_seq_len(cfg.max_seq_len),
      input_slots(cfg.queries),
      target_slots(cfg.image_slots) {
    token_embedding = store.add("lm.token_embedding", normal_param({cfg.vocab_size, cfg.width}, 1.0, rng));
    position_embedding =
        store.add("lm.position_embedding", normal_param({cfg.max_seq_len, cfg.width}, 0.1, rng));
    for (std::size_t i = 0; i < cfg.lm_blocks; ++i)
        blocks.emplace_back(store, "lm.block" + std::to_string(i), cfg.width, cfg.heads,
                            cfg.width * cfg.mlp_ratio, true, rng);
    final_norm = LayerNorm(store, "lm.final_norm", cfg.width);
    text_head = Linear(store, "lm.text_head", cfg.width, cfg.vocab_size, rng, false);
    cond_head = Linear(store, "cond_head", cfg.width, cfg.cond_dim, rng);
}

Tensor CausalLM::embed(const InterleavedSequence& seq, const Tensor& vision_tokens) const {
    const auto& t = seq.tokens;
    if (t.empty()) throw SequenceError("empty sequence");
    if (t.size() > max_seq_len) {
        throw SequenceError("sequence of " + std::to_string(t.size()) +
                            " tokens exceeds max_seq_len " + std::to_string(max_seq_len));
    }
    for (auto id : t)
        if (id >= vocab_size) throw IndexError("token id " + std::to_string(id) + " >= vocab size");
    auto tok = gather_rows(token_embedding, t);
    Tensor x = tok;
    if (const ImageSpan* in = seq.input_span()) {
        if (!vision_tokens.defined() || vision_tokens.rows() != in->slots) {
            throw SequenceError("input image span needs " + std::to_string(in->slots) +
                                " vision tokens");
        }
        const std::size_t a = in->first_slot(), b = a + in->slots;
        std::vector<Tensor> parts;
        if (a > 0) parts.push_back(slice_rows(tok, 0, a));
        parts.push_back(vision_tokens);
        if (b < t.size()) parts.push_back(slice_rows(tok, b, t.size() - b));
        x = concat_rows(parts);
    }
    return add(x, slice_rows(position_embedding, 0, t.size()));
}

LmOutput CausalLM::forward(const InterleavedSequence& seq, const Tensor& vision_tokens,
                           RouteTrace* trace) const {
    validate_sequence(seq, input_slots, target_slots);
    auto h = embed(seq, vision_tokens);
    for (const auto& b : blocks) h = b.forward(h, trace);
    LmOutput out;
    out.hidden = final_norm.forward(h);
    if (!seq.text_positions.empty()) {
        std::vector<std::size_t> rows;
        for (auto p : seq.text_positions) {
            rows.push_back(p - 1);
            out.text_targets.push_back(seq.tokens[p]);
        }
        out.text_logits = text_head.forward(gather_rows(out.hidden, rows));
    }
    if (!seq.image_positions.empty())
        out.image_conditions = cond_head.forward(gather_rows(out.hidden, seq.image_positions));
    return out;
}

}  // namespace harmony
