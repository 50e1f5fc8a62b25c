#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "harmony/model.hpp"
#include "harmony/synthworld.hpp"

namespace harmony {

enum class Arm { text_only, image_only, joint_dense, joint_slide_lora };

std::string to_string(Arm a);
Arm parse_arm(const std::string& s);

struct OptimizerConfig {
    std::string kind = "adam";  // "adam" or "sgd" (with momentum)
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double momentum = 0.9;
};

// Adam or SGD with momentum. Parameters and moments are snapped to float32
// after each update.
class Optimizer {
public:
    struct Slot {
        std::vector<double> m, v;
    };

    explicit Optimizer(OptimizerConfig config = {});

    void step(std::span<const NamedParam> params);

    const OptimizerConfig& config() const { return config_; }
    void set_lr(double lr) { config_.lr = lr; }
    std::size_t steps() const { return steps_; }
    void set_steps(std::size_t n) { steps_ = n; }
    std::map<std::string, Slot>& slots() { return slots_; }
    const std::map<std::string, Slot>& slots() const { return slots_; }

private:
    OptimizerConfig config_;
    std::size_t steps_ = 0;
    std::map<std::string, Slot> slots_;
};

struct LossParts {
    Tensor total;      // text_ce + image_mse
    Tensor text_ce;    // mean over every N_T position in the batch; 0 when none
    Tensor image_mse;  // mean diffusion loss over target spans; 0 when none
    std::size_t text_positions = 0;
    std::size_t image_spans = 0;
};

// One forward per sequence. `traces` (if given) receives each sequence's routing.
LossParts combined_loss(const HarmonyModel& model, std::span<const InterleavedSequence> batch,
                        Rng& rng, std::vector<RouteTrace>* traces = nullptr);

// Mean BCE of every recorded gate logit against its sequence's label
// (text_gen = 1). Undefined tensor when no gate fired.
Tensor gate_aux_loss(std::span<const RouteTrace> traces, std::span<const TaskLabel> labels);

struct LossRecord {
    std::size_t step = 0;
    double total = 0, text_ce = 0, image_mse = 0, gate_aux = 0, gamma_mean = 0;
};

std::string to_json_line(const LossRecord& r);

// total + λ·gate_aux, backward, optimizer step over the trainable parameters.
// Throws NonFiniteLossError (with the component values) before updating.
LossRecord train_step(HarmonyModel& model, Optimizer& opt,
                      std::span<const InterleavedSequence> batch, double lambda_gate, Rng& rng);

// Text-only next-token objective for the LM warm-up: every token outside an
// image span (except <BOS>) is supervised and input slots see zero vectors.
InterleavedSequence warmup_sequence(const SyntheticSample& s, const Vocabulary& vocab,
                                    std::size_t input_slots, std::size_t target_slots);
Tensor warmup_loss(const HarmonyModel& model, std::span<const InterleavedSequence> batch);

enum class Modality { text, image };

// Deterministic endless sample stream: draw i comes from
// Rng(derive_seed(seed, label + "/" + i)); tasks cycle in order. A non-empty
// `templates` restricts QA tasks to those template ids.
class SampleStream {
public:
    SampleStream(std::uint64_t seed, std::string label, std::vector<Task> tasks,
                 std::vector<std::size_t> templates = {});
    SyntheticSample next();
    std::size_t position() const { return index_; }

private:
    std::uint64_t seed_;
    std::string label_;
    std::vector<Task> tasks_;
    std::vector<std::size_t> templates_;
    std::size_t index_ = 0;
};

std::vector<Task> tasks_for(Modality m);

// Generation prompts: a QA sequence cut after " Answer: ", or an image sequence
// cut before the target span.
InterleavedSequence answer_prompt(const SyntheticSample& s, const BackboneConfig& bb);
InterleavedSequence image_prompt(const SyntheticSample& s, const BackboneConfig& bb);

struct AdapterSpec {
    enum class Kind { none, lora, slide_lora };
    Kind kind = Kind::none;
    SlideLoraConfig slide_lora;
    Placement placement = Placement::both;  // lora
    std::size_t rank = 4;                   // lora
    double alpha = 8.0;                     // lora
    std::uint64_t seed = 0;
};

void attach_adapters(HarmonyModel& model, const AdapterSpec& spec);

struct StageBudget {
    std::size_t steps = 0;
    std::size_t batch = 8;
    double lr = 1e-3;
};

// One experiment row: an arm name plus how it is trained.
struct ArmSpec {
    std::string name;  // report label
    Arm arm = Arm::joint_slide_lora;
    Placement placement = Placement::both;
};

// "text_only", "image_only", "joint_dense", "joint_slide_lora" or
// "placement:<vision_encoder|llm|both>" (a joint_slide_lora run).
ArmSpec parse_arm_spec(const std::string& s);

struct ExperimentConfig {
    ModelConfig model;
    std::uint64_t seed = 0;
    std::size_t seeds = 3;
    OptimizerConfig optimizer;
    StageBudget warmup{600, 8, 2e-3};
    StageBudget pretrain{600, 8, 1e-3};
    StageBudget finetune{800, 8, 5e-4};  // steps per modality
    double lambda_gate = 0.1;
    SlideLoraConfig slide_lora;
    std::size_t dense_rank = 4;
    double dense_alpha = 8.0;
    std::size_t eval_text = 512;
    std::size_t eval_image = 64;
    std::size_t max_answer_tokens = 32;
    std::size_t log_every = 1;
    std::vector<std::string> arms{"text_only", "image_only", "joint_dense", "joint_slide_lora",
                                  "placement:vision_encoder", "placement:llm"};
    // Name prefix -> trainable, applied after each stage's freezing policy.
    std::map<std::string, bool> freeze_overrides;
    DatasetSpec data{0, 512};  // gen-data
};

struct EvalResult {
    double text_accuracy = 0;
    double text_ned = 0;
    double acc_at_05 = 0;  // over "Where is" questions
    std::size_t grounding_items = 0;
    double image_mse = 0;
    double toy_fid = 0;
    double gamma_text = 0;   // mean γ over QA prompts (0 without Slide-LoRA)
    double gamma_image = 0;  // mean γ over image prompts
};

// Text: greedy decoding on QA samples, exact match and NED against the answer.
// Image: one sample per prompt with noise from derive_seed(seed, "eval/noise/<i>").
EvalResult evaluate(const HarmonyModel& model, std::span<const SyntheticSample> text_set,
                    std::span<const SyntheticSample> image_set, std::uint64_t seed,
                    std::size_t max_answer_tokens);

struct ArmResult {
    std::string arm;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    EvalResult eval;
    double seconds = 0;
};

struct ExperimentReport {
    std::vector<ArmResult> rows;
};

using ProgressFn = std::function<void(const std::string&)>;

// Per seed: LM warm-up, then the pretrain stage, then every arm fine-tunes
// from that shared snapshot. With `out_dir`, metrics logs go to
// <out_dir>/seed<k>/<stage-or-arm>/metrics.jsonl. Up to `workers` arms of a
// seed train concurrently; results do not depend on the worker count.
ExperimentReport run_experiment(const ExperimentConfig& config,
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                const ProgressFn& progress = {}, std::size_t workers = 1);

std::string format_report_table(const ExperimentReport& report);

// Parameter data by name.
using ParamSnapshot = std::map<std::string, std::vector<double>>;
ParamSnapshot capture(const ParamStore& store);
// Copies every snapshot entry into the store; throws on a missing name or size mismatch.
void restore(ParamStore& store, const ParamSnapshot& snap);

// Stage helpers shared by run_experiment and the CLI. Each returns its log.
std::vector<LossRecord> run_warmup(HarmonyModel& model, const ExperimentConfig& cfg,
                                   std::uint64_t seed);
std::vector<LossRecord> run_pretrain(HarmonyModel& model, const ExperimentConfig& cfg,
                                     std::uint64_t seed);
std::vector<LossRecord> run_finetune(HarmonyModel& model, const ExperimentConfig& cfg,
                                     const ArmSpec& arm, std::uint64_t seed);

AdapterSpec adapter_for(const ExperimentConfig& cfg, const ArmSpec& arm, std::uint64_t seed);

std::vector<SyntheticSample> eval_set(Modality m, std::size_t n, std::uint64_t seed);

}  // namespace harmony
