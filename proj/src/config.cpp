#include "harmony/config.hpp"

#include <fstream>
#include <set>

#include "harmony/errors.hpp"

namespace harmony {

namespace {

// Reads known keys from one JSON object and rejects the rest.
class Reader {
public:
    Reader(const json& j, std::string ctx) : j_(j), ctx_(std::move(ctx)) {
        if (!j_.is_object()) throw ConfigError(ctx_ + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        if (!j_.contains(key)) return;
        used_.insert(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(ctx_ + "." + key + ": " + e.what());
        }
    }

    const json* sub(const char* key) {
        if (!j_.contains(key)) return nullptr;
        used_.insert(key);
        return &j_.at(key);
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!used_.count(k)) throw ConfigError("unknown key '" + ctx_ + "." + k + "'");
    }

private:
    const json& j_;
    std::string ctx_;
    std::set<std::string> used_;
};

}  // namespace

json to_json(const BackboneConfig& c) {
    return {{"image_size", c.image_size},   {"channels", c.channels},
            {"patch", c.patch},             {"width", c.width},
            {"heads", c.heads},             {"vision_blocks", c.vision_blocks},
            {"resampler_blocks", c.resampler_blocks}, {"lm_blocks", c.lm_blocks},
            {"queries", c.queries},         {"image_slots", c.image_slots},
            {"cond_dim", c.cond_dim},       {"vocab_size", c.vocab_size},
            {"max_seq_len", c.max_seq_len}, {"mlp_ratio", c.mlp_ratio},
            {"adapter_targets", c.adapter_targets}};
}

json to_json(const DiffusionConfig& c) {
    return {{"steps", c.steps}, {"beta_min", c.beta_min}, {"beta_max", c.beta_max},
            {"width", c.width}, {"heads", c.heads},       {"blocks", c.blocks}};
}

json to_json(const ModelConfig& c) { return {{"backbone", to_json(c.backbone)}, {"diffusion", to_json(c.diffusion)}}; }

json to_json(const SlideLoraConfig& c) {
    return {{"n", c.n},         {"s", c.s}, {"rank", c.rank}, {"alpha", c.alpha}, {"gate_hidden", c.gate_hidden},
            {"placement", to_string(c.placement)}};
}

json to_json(const OptimizerConfig& c) {
    return {{"kind", c.kind}, {"lr", c.lr},   {"beta1", c.beta1},
            {"beta2", c.beta2}, {"eps", c.eps}, {"momentum", c.momentum}};
}

json to_json(const StageBudget& c) { return {{"steps", c.steps}, {"batch", c.batch}, {"lr", c.lr}}; }

json to_json(const ExperimentConfig& c) {
    json tasks = json::array();
    for (auto t : c.data.tasks) tasks.push_back(to_string(t));
    return {{"model", to_json(c.model)},
            {"seed", c.seed},
            {"seeds", c.seeds},
            {"optimizer", to_json(c.optimizer)},
            {"warmup", to_json(c.warmup)},
            {"pretrain", to_json(c.pretrain)},
            {"finetune", to_json(c.finetune)},
            {"lambda_gate", c.lambda_gate},
            {"slide_lora", to_json(c.slide_lora)},
            {"dense_rank", c.dense_rank},
            {"dense_alpha", c.dense_alpha},
            {"eval_text", c.eval_text},
            {"eval_image", c.eval_image},
            {"max_answer_tokens", c.max_answer_tokens},
            {"log_every", c.log_every},
            {"arms", c.arms},
            {"freeze_overrides", c.freeze_overrides},
            {"data", {{"seed", c.data.seed}, {"size", c.data.size}, {"tasks", tasks}}}};
}

BackboneConfig backbone_from_json(const json& j) {
    BackboneConfig c;
    Reader r(j, "model.backbone");
    r.get("image_size", c.image_size);
    r.get("channels", c.channels);
    r.get("patch", c.patch);
    r.get("width", c.width);
    r.get("heads", c.heads);
    r.get("vision_blocks", c.vision_blocks);
    r.get("resampler_blocks", c.resampler_blocks);
    r.get("lm_blocks", c.lm_blocks);
    r.get("queries", c.queries);
    r.get("image_slots", c.image_slots);
    r.get("cond_dim", c.cond_dim);
    r.get("vocab_size", c.vocab_size);
    r.get("max_seq_len", c.max_seq_len);
    r.get("mlp_ratio", c.mlp_ratio);
    r.get("adapter_targets", c.adapter_targets);
    r.finish();
    c.validate();
    return c;
}

DiffusionConfig diffusion_from_json(const json& j) {
    DiffusionConfig c;
    Reader r(j, "model.diffusion");
    r.get("steps", c.steps);
    r.get("beta_min", c.beta_min);
    r.get("beta_max", c.beta_max);
    r.get("width", c.width);
    r.get("heads", c.heads);
    r.get("blocks", c.blocks);
    r.finish();
    return c;
}

ModelConfig model_from_json(const json& j) {
    ModelConfig c;
    Reader r(j, "model");
    if (auto* b = r.sub("backbone")) c.backbone = backbone_from_json(*b);
    if (auto* d = r.sub("diffusion")) c.diffusion = diffusion_from_json(*d);
    r.finish();
    return c;
}

SlideLoraConfig slide_lora_from_json(const json& j) {
    SlideLoraConfig c;
    Reader r(j, "slide_lora");
    r.get("n", c.n);
    r.get("s", c.s);
    r.get("rank", c.rank);
    r.get("alpha", c.alpha);
    r.get("gate_hidden", c.gate_hidden);
    std::string placement = to_string(c.placement);
    r.get("placement", placement);
    c.placement = parse_placement(placement);
    r.finish();
    c.validate();
    return c;
}

OptimizerConfig optimizer_from_json(const json& j) {
    OptimizerConfig c;
    Reader r(j, "optimizer");
    r.get("kind", c.kind);
    r.get("lr", c.lr);
    r.get("beta1", c.beta1);
    r.get("beta2", c.beta2);
    r.get("eps", c.eps);
    r.get("momentum", c.momentum);
    r.finish();
    if (c.kind != "adam" && c.kind != "sgd") throw ConfigError("optimizer.kind must be adam or sgd");
    return c;
}

StageBudget stage_from_json(const json& j) {
    StageBudget c;
    Reader r(j, "stage");
    r.get("steps", c.steps);
    r.get("batch", c.batch);
    r.get("lr", c.lr);
    r.finish();
    if (c.batch == 0) throw ConfigError("stage batch must be positive");
    if (!(c.lr >= 0)) throw ConfigError("stage lr must be non-negative");
    return c;
}

ExperimentConfig experiment_from_json(const json& j) {
    ExperimentConfig c;
    Reader r(j, "config");
    if (auto* m = r.sub("model")) c.model = model_from_json(*m);
    r.get("seed", c.seed);
    r.get("seeds", c.seeds);
    if (auto* o = r.sub("optimizer")) c.optimizer = optimizer_from_json(*o);
    if (auto* s = r.sub("warmup")) c.warmup = stage_from_json(*s);
    if (auto* s = r.sub("pretrain")) c.pretrain = stage_from_json(*s);
    if (auto* s = r.sub("finetune")) c.finetune = stage_from_json(*s);
    r.get("lambda_gate", c.lambda_gate);
    if (auto* s = r.sub("slide_lora")) c.slide_lora = slide_lora_from_json(*s);
    r.get("dense_rank", c.dense_rank);
    r.get("dense_alpha", c.dense_alpha);
    r.get("eval_text", c.eval_text);
    r.get("eval_image", c.eval_image);
    r.get("max_answer_tokens", c.max_answer_tokens);
    r.get("log_every", c.log_every);
    r.get("arms", c.arms);
    r.get("freeze_overrides", c.freeze_overrides);
    if (auto* d = r.sub("data")) {
        Reader dr(*d, "data");
        dr.get("seed", c.data.seed);
        dr.get("size", c.data.size);
        std::vector<std::string> tasks;
        dr.get("tasks", tasks);
        if (d->contains("tasks")) {
            c.data.tasks.clear();
            for (const auto& t : tasks) c.data.tasks.push_back(parse_task(t));
        }
        dr.finish();
    }
    r.finish();
    for (const auto& a : c.arms) parse_arm_spec(a);
    if (c.seeds == 0) throw ConfigError("seeds must be at least 1");
    return c;
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    return experiment_from_json(read_json(path));
}

}  // namespace harmony
