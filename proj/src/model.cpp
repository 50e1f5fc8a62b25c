#include "harmony/model.hpp"

#include <algorithm>

#include "harmony/errors.hpp"

namespace harmony {

std::string to_string(Stage s) { return s == Stage::pretrain ? "pretrain" : "finetune"; }

Stage parse_stage(const std::string& s) {
    if (s == "pretrain") return Stage::pretrain;
    if (s == "finetune") return Stage::finetune;
    throw ConfigError("unknown stage '" + s + "'");
}

namespace {

// Component construction order fixes parameter registration order, which
// fixes checkpoint layout.
Rng component_rng(std::uint64_t seed, const char* name) { return Rng(derive_seed(seed, name)); }

}  // namespace

HarmonyModel::HarmonyModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    const auto& bb = config_.backbone;
    bb.validate();
    {
        auto rng = component_rng(seed, "init.vision");
        vision = VisionEncoder(params, bb, rng);
    }
    {
        auto rng = component_rng(seed, "init.resampler");
        resampler = Resampler(params, bb, rng);
    }
    {
        auto rng = component_rng(seed, "init.lm");
        lm = CausalLM(params, bb, rng);
    }
    {
        auto rng = component_rng(seed, "init.diffusion");
        denoiser = DenoiseNet(params, config_.diffusion, bb.image_size, bb.channels, bb.patch,
                              bb.cond_dim, rng);
    }
    schedule = make_schedule(config_.diffusion.steps, config_.diffusion.beta_min,
                             config_.diffusion.beta_max);
    for (auto& b : vision.blocks)
        for (auto& s : b.sites(Component::vision_encoder, bb.adapter_targets)) sites_.push_back(s);
    for (auto& b : lm.blocks)
        for (auto& s : b.sites(Component::llm, bb.adapter_targets)) sites_.push_back(s);
}

Tensor HarmonyModel::visual_tokens(const Image& img, RouteTrace* trace) const {
    if (trace) trace->pool_rows = 0;
    return resampler.resample(vision.encode(img, trace));
}

LmOutput HarmonyModel::forward(const InterleavedSequence& seq, RouteTrace* trace) const {
    RouteTrace local;
    RouteTrace* t = trace ? trace : &local;
    Tensor vt;
    if (seq.input_span()) {
        if (!seq.input_image) throw SequenceError("input span without an input image");
        vt = visual_tokens(*seq.input_image, t);
    }
    t->pool_rows = seq.prompt_len;
    return lm.forward(seq, vt, t);
}

GenerationResult HarmonyModel::generate(const InterleavedSequence& prompt, GenerationMode mode,
                                        std::size_t max_len, Rng& rng) const {
    NoGradGuard no_grad;
    if (prompt.target_span() || !prompt.text_positions.empty()) {
        throw ContractError("generate: prompt must end at a generation point");
    }
    GenerationResult result;
    result.sequence = prompt;
    auto& seq = result.sequence;
    seq.prompt_len = prompt.tokens.size();

    RouteTrace trace;
    Tensor vt;
    if (seq.input_span()) vt = visual_tokens(*seq.input_image, &trace);
    const std::size_t vision_gates = trace.gammas().size();
    trace.pool_rows = seq.prompt_len;

    if (mode == GenerationMode::text) {
        seq.label = TaskLabel::text_gen;
        bool done = false;
        while (!done) {
            if (result.generated.size() >= max_len || seq.tokens.size() >= lm.max_seq_len) {
                result.truncated = true;
                break;
            }
            auto out = lm.forward(seq, vt, &trace);
            // LM gates are decided on the prompt and replayed for later tokens.
            trace.freeze(vision_gates);
            auto last = lm.text_head.forward(slice_rows(out.hidden, seq.tokens.size() - 1, 1));
            // Greedy over text tokens and <EOS>; other specials cannot be emitted as text.
            auto row = last.data();
            TokenId next = tokens::eos;
            for (TokenId id = tokens::reserved_count; id < row.size(); ++id)
                if (row[id] > row[next]) next = id;
            seq.tokens.push_back(next);
            if (next == tokens::eos) done = true;
            else result.generated.push_back(next);
        }
    } else {
        seq.label = TaskLabel::image_gen;
        const std::size_t k = config_.backbone.image_slots;
        ImageSpan span{seq.tokens.size(), k, SpanRole::target};
        seq.tokens.push_back(tokens::boi);
        for (std::size_t i = 0; i < k; ++i) {
            seq.image_positions.push_back(seq.tokens.size());
            seq.tokens.push_back(tokens::img_slot);
        }
        seq.tokens.push_back(tokens::eoi);
        seq.spans.push_back(span);
        auto out = lm.forward(seq, vt, &trace);
        result.conditions = out.image_conditions;
        result.image = sample(denoiser, schedule, out.image_conditions, rng);
        seq.target_image = result.image;
    }
    result.gammas = trace.gammas();
    return result;
}

AttachReport HarmonyModel::attach_slide_lora(const SlideLoraConfig& cfg, std::uint64_t seed) {
    auto report = harmony::attach_slide_lora(params, sites_, cfg, seed);
    adapter_params_.insert(adapter_params_.end(), report.added_params.begin(), report.added_params.end());
    return report;
}

AttachReport HarmonyModel::attach_lora(Placement placement, std::size_t rank, double alpha,
                                       std::uint64_t seed) {
    auto report = harmony::attach_lora(params, sites_, placement, rank, alpha, seed);
    adapter_params_.insert(adapter_params_.end(), report.added_params.begin(), report.added_params.end());
    return report;
}

bool HarmonyModel::is_adapter_param(const std::string& name) const {
    return std::find(adapter_params_.begin(), adapter_params_.end(), name) != adapter_params_.end();
}

std::size_t HarmonyModel::adapter_param_count() const {
    std::size_t n = 0;
    for (const auto& p : params.params())
        if (is_adapter_param(p.name)) n += p.tensor.numel();
    return n;
}

std::size_t HarmonyModel::base_param_count() const { return params.count() - adapter_param_count(); }

void HarmonyModel::apply_freezing(Stage stage, const std::map<std::string, bool>& overrides) {
    params.set_trainable_all(false);
    params.set_trainable("resampler.", true);
    params.set_trainable("cond_head.", true);
    params.set_trainable("diffusion.", true);
    if (stage == Stage::finetune) {
        params.set_trainable("vision.", true);
        for (const auto& name : adapter_params_) params.set_trainable(name, true);
    }
    for (const auto& [prefix, on] : overrides) params.set_trainable(prefix, on);
    for (const auto& site : sites_) {
        const auto* p = site.projection;
        if (!p->has_slide_lora() && !p->has_lora()) continue;
        Tensor w = p->base().weight;
        w.set_requires_grad(false);
        if (p->base().bias.defined()) {
            Tensor b = p->base().bias;
            b.set_requires_grad(false);
        }
    }
}

std::vector<NamedParam> HarmonyModel::trainable_params() const {
    std::vector<NamedParam> out;
    for (const auto& p : params.params())
        if (p.tensor.requires_grad()) out.push_back(p);
    return out;
}

}  // namespace harmony
