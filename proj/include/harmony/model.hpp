#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "harmony/backbone.hpp"
#include "harmony/diffusion.hpp"
#include "harmony/slide_lora.hpp"

namespace harmony {

struct ModelConfig {
    BackboneConfig backbone;
    DiffusionConfig diffusion;
};

enum class Stage { pretrain, finetune };

std::string to_string(Stage s);
Stage parse_stage(const std::string& s);

enum class GenerationMode { text, image };

struct GenerationResult {
    InterleavedSequence sequence;
    std::vector<TokenId> generated;  // text mode: decoded ids (without <EOS>)
    std::optional<Image> image;      // image mode
    Tensor conditions;               // image mode: [K_img×D_c]
    std::vector<double> gammas;      // routing decisions, fixed from the prompt
    bool truncated = false;          // hit max_len before <EOS>
};

// Vision encoder → resampler → causal LM → {text head, diffusion decoder}.
// Owns every parameter; not copyable because adapter sites point into it.
class HarmonyModel {
public:
    HarmonyModel(const ModelConfig& config, std::uint64_t seed);
    HarmonyModel(const HarmonyModel&) = delete;
    HarmonyModel& operator=(const HarmonyModel&) = delete;

    const ModelConfig& config() const { return config_; }

    // Encodes the input image (if any), resamples it and runs the LM.
    // Vision-side gates pool over every image token; LM gates over the prompt.
    LmOutput forward(const InterleavedSequence& seq, RouteTrace* trace = nullptr) const;
    Tensor visual_tokens(const Image& img, RouteTrace* trace) const;

    GenerationResult generate(const InterleavedSequence& prompt, GenerationMode mode,
                              std::size_t max_len, Rng& rng) const;

    std::vector<ProjectionSite>& sites() { return sites_; }
    std::span<const ProjectionSite> sites() const { return sites_; }

    AttachReport attach_slide_lora(const SlideLoraConfig& cfg, std::uint64_t seed);
    AttachReport attach_lora(Placement placement, std::size_t rank, double alpha, std::uint64_t seed);
    bool is_adapter_param(const std::string& name) const;
    std::size_t base_param_count() const;
    std::size_t adapter_param_count() const;
    ParamOverhead overhead() const { return param_overhead(sites_, base_param_count()); }

    // Stage freezing policy, then `overrides` (name prefix -> trainable).
    // Instrumented base projections stay frozen regardless.
    void apply_freezing(Stage stage, const std::map<std::string, bool>& overrides = {});
    std::vector<NamedParam> trainable_params() const;

    ParamStore params;
    VisionEncoder vision;
    Resampler resampler;
    CausalLM lm;
    DenoiseNet denoiser;
    DiffusionSchedule schedule;

private:
    ModelConfig config_;
    std::vector<ProjectionSite> sites_;
    std::vector<std::string> adapter_params_;
};

}  // namespace harmony
