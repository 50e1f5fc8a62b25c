#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "harmony/image.hpp"
#include "harmony/nn.hpp"
#include "harmony/slide_lora.hpp"
#include "harmony/vocab.hpp"

namespace harmony {

struct BackboneConfig {
    std::size_t image_size = 16;  // G
    std::size_t channels = 1;     // C
    std::size_t patch = 4;        // p
    std::size_t width = 64;       // D
    std::size_t heads = 4;        // H
    std::size_t vision_blocks = 2;
    std::size_t resampler_blocks = 2;
    std::size_t lm_blocks = 4;
    std::size_t queries = 8;      // K, resampled visual tokens
    std::size_t image_slots = 4;  // K_img, condition vectors per generated image
    std::size_t cond_dim = 32;    // D_c
    std::size_t vocab_size = 66;
    std::size_t max_seq_len = 64;
    std::size_t mlp_ratio = 4;
    // Projections inside attention blocks that adapters may wrap: any of q, k, v, o.
    std::vector<std::string> adapter_targets{"q", "v"};

    void validate() const;
    std::size_t patches_per_image() const { return (image_size / patch) * (image_size / patch); }
};

// Pre-LN self-attention block. q/k/v/o are Projections so adapters can be attached.
class AttentionBlock {
public:
    AttentionBlock() = default;
    AttentionBlock(ParamStore& store, const std::string& name, std::size_t width,
                   std::size_t heads, std::size_t mlp_hidden, bool causal, Rng& rng);

    Tensor forward(const Tensor& x, RouteTrace* trace) const;
    std::vector<ProjectionSite> sites(Component component,
                                      const std::vector<std::string>& targets);

    std::string name;
    LayerNorm ln_attn;
    Projection q, k, v, o;
    LayerNorm ln_mlp;
    Mlp mlp;
    std::size_t heads = 1;
    bool causal = false;
};

// Pre-LN block where a fixed query set attends to a token memory.
class CrossAttentionBlock {
public:
    CrossAttentionBlock() = default;
    CrossAttentionBlock(ParamStore& store, const std::string& name, std::size_t width,
                        std::size_t memory_width, std::size_t heads, std::size_t mlp_hidden,
                        Rng& rng);

    Tensor forward(const Tensor& queries, const Tensor& memory) const;
    std::vector<Tensor> attention_weights(const Tensor& queries, const Tensor& memory) const;

    LayerNorm ln_q, ln_kv;
    Linear q, k, v, o;
    LayerNorm ln_mlp;
    Mlp mlp;
    std::size_t heads = 1;
};

class VisionEncoder {
public:
    VisionEncoder() = default;
    VisionEncoder(ParamStore& store, const BackboneConfig& cfg, Rng& rng);

    // (G/p)² tokens of width D. With run_blocks=false only patch embedding plus
    // positions are applied.
    Tensor encode(const Image& img, RouteTrace* trace, bool run_blocks = true) const;
    std::vector<double> patchify(const Image& img) const;

    std::size_t image_size = 0, channels = 0, patch = 0;
    Linear patch_embed;
    Tensor positions;  // [(G/p)²×D]
    std::vector<AttentionBlock> blocks;
};

class Resampler {
public:
    Resampler() = default;
    Resampler(ParamStore& store, const BackboneConfig& cfg, Rng& rng);

    // Always returns exactly K tokens.
    Tensor resample(const Tensor& vision_tokens) const;
    std::vector<Tensor> first_block_attention(const Tensor& vision_tokens) const;

    Tensor queries;  // [K×D]
    std::vector<CrossAttentionBlock> blocks;
};

enum class TaskLabel { image_gen = 0, text_gen = 1 };
enum class SpanRole { input, target };

// <BOI>, `slots` × <IMG_SLOT>, <EOI>; `begin` indexes the <BOI>.
struct ImageSpan {
    std::size_t begin = 0;
    std::size_t slots = 0;
    SpanRole role = SpanRole::input;
    std::size_t first_slot() const { return begin + 1; }
    std::size_t end() const { return begin + slots + 2; }
};

struct InterleavedSequence {
    std::vector<TokenId> tokens;
    std::vector<std::size_t> text_positions;   // N_T: supervised text tokens
    std::vector<std::size_t> image_positions;  // N_I: slots of the target image span
    std::vector<ImageSpan> spans;
    // Tokens before the generation point; gates pool over these rows.
    std::size_t prompt_len = 0;
    TaskLabel label = TaskLabel::text_gen;
    std::optional<Image> input_image;
    std::optional<Image> target_image;

    const ImageSpan* input_span() const;
    const ImageSpan* target_span() const;
};

// Throws SequenceError when the span layout, index sets or image payloads are
// inconsistent. Input spans hold K slots, target spans K_img slots.
void validate_sequence(const InterleavedSequence& seq, std::size_t input_slots,
                       std::size_t target_slots);

struct LmOutput {
    Tensor hidden;            // [L×D] after the final norm
    Tensor text_logits;       // [|N_T|×V]; row j predicts tokens[N_T[j]]
    Tensor image_conditions;  // [K_img×D_c]; undefined when N_I is empty
    std::vector<std::size_t> text_targets;
};

class CausalLM {
public:
    CausalLM() = default;
    CausalLM(ParamStore& store, const BackboneConfig& cfg, Rng& rng);

    // Teacher-forced pass. Input-span slots take the rows of `vision_tokens`;
    // target-span slots keep the learned <IMG_SLOT> embedding.
    LmOutput forward(const InterleavedSequence& seq, const Tensor& vision_tokens,
                     RouteTrace* trace) const;
    Tensor embed(const InterleavedSequence& seq, const Tensor& vision_tokens) const;

    std::size_t vocab_size = 0, max_seq_len = 0, input_slots = 0, target_slots = 0;
    Tensor token_embedding;     // [V×D]
    Tensor position_embedding;  // [max_len×D]
    std::vector<AttentionBlock> blocks;
    LayerNorm final_norm;
    Linear text_head;  // q(·): D -> V
    Linear cond_head;  // D -> D_c at image slots
};

}  // namespace harmony
