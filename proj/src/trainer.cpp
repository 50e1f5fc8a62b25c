#include "harmony/trainer.hpp"

#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "harmony/errors.hpp"
#include "harmony/metrics.hpp"
#include "json.hpp"

namespace harmony {

std::string to_string(Arm a) {
    switch (a) {
        case Arm::text_only: return "text_only";
        case Arm::image_only: return "image_only";
        case Arm::joint_dense: return "joint_dense";
        case Arm::joint_slide_lora: return "joint_slide_lora";
    }
    return "?";
}

Arm parse_arm(const std::string& s) {
    for (auto a : {Arm::text_only, Arm::image_only, Arm::joint_dense, Arm::joint_slide_lora})
        if (to_string(a) == s) return a;
    throw ConfigError("unknown arm '" + s + "'");
}

ArmSpec parse_arm_spec(const std::string& s) {
    const std::string prefix = "placement:";
    if (s.rfind(prefix, 0) == 0) return {s, Arm::joint_slide_lora, parse_placement(s.substr(prefix.size()))};
    return {s, parse_arm(s), Placement::both};
}

// ------------------------------------------------------------------ optimizer

Optimizer::Optimizer(OptimizerConfig config) : config_(std::move(config)) {
    if (config_.kind != "adam" && config_.kind != "sgd") {
        throw ConfigError("optimizer must be adam or sgd, got '" + config_.kind + "'");
    }
}

void Optimizer::step(std::span<const NamedParam> params) {
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    for (const auto& p : params) {
        Tensor w = p.tensor;
        auto data = w.mutable_data();
        auto g = w.grad();
        auto& slot = slots_[p.name];
        if (slot.m.size() != data.size()) slot.m.assign(data.size(), 0.0);
        if (config_.kind == "adam") {
            if (slot.v.size() != data.size()) slot.v.assign(data.size(), 0.0);
            for (std::size_t i = 0; i < data.size(); ++i) {
                slot.m[i] = snap32(config_.beta1 * slot.m[i] + (1.0 - config_.beta1) * g[i]);
                slot.v[i] = snap32(config_.beta2 * slot.v[i] + (1.0 - config_.beta2) * g[i] * g[i]);
                const double mh = slot.m[i] / bc1, vh = slot.v[i] / bc2;
                data[i] = snap32(data[i] - config_.lr * mh / (std::sqrt(vh) + config_.eps));
            }
        } else {
            for (std::size_t i = 0; i < data.size(); ++i) {
                slot.m[i] = snap32(config_.momentum * slot.m[i] + g[i]);
                data[i] = snap32(data[i] - config_.lr * slot.m[i]);
            }
        }
    }
}

// ------------------------------------------------------------------ losses

LossParts combined_loss(const HarmonyModel& model, std::span<const InterleavedSequence> batch,
                        Rng& rng, std::vector<RouteTrace>* traces) {
    if (batch.empty()) throw ContractError("combined_loss: empty batch");
    std::vector<Tensor> logits;
    std::vector<std::size_t> targets;
    std::vector<Tensor> image_terms;
    if (traces) traces->clear();
    for (const auto& seq : batch) {
        RouteTrace trace;
        auto out = model.forward(seq, &trace);
        if (out.text_logits.defined()) {
            logits.push_back(out.text_logits);
            targets.insert(targets.end(), out.text_targets.begin(), out.text_targets.end());
        }
        if (out.image_conditions.defined()) {
            if (!seq.target_image) throw ContractError("target span without a target image");
            image_terms.push_back(denoise_loss(model.denoiser, model.schedule, *seq.target_image,
                                               out.image_conditions, rng));
        }
        if (traces) traces->push_back(std::move(trace));
    }
    if (targets.empty() && image_terms.empty()) {
        throw ContractError("combined_loss: batch has no supervised positions");
    }
    LossParts parts;
    parts.text_positions = targets.size();
    parts.image_spans = image_terms.size();
    parts.text_ce = targets.empty() ? Tensor::scalar(0.0)
                                    : softmax_cross_entropy(concat_rows(logits), targets);
    if (image_terms.empty()) {
        parts.image_mse = Tensor::scalar(0.0);
    } else {
        Tensor acc = image_terms[0];
        for (std::size_t i = 1; i < image_terms.size(); ++i) acc = add(acc, image_terms[i]);
        parts.image_mse = scale(acc, 1.0 / static_cast<double>(image_terms.size()));
    }
    parts.total = add(parts.text_ce, parts.image_mse);
    return parts;
}

Tensor gate_aux_loss(std::span<const RouteTrace> traces, std::span<const TaskLabel> labels) {
    if (traces.size() != labels.size()) throw ContractError("gate_aux_loss: one label per trace required");
    std::vector<Tensor> rows;
    std::vector<double> y;
    for (std::size_t i = 0; i < traces.size(); ++i)
        for (const auto& z : traces[i].logits()) {
            rows.push_back(z.reshape({1, 1}));
            y.push_back(labels[i] == TaskLabel::text_gen ? 1.0 : 0.0);
        }
    if (rows.empty()) return {};
    return bce_with_logits(concat_rows(rows), y);
}

std::string to_json_line(const LossRecord& r) {
    nlohmann::json j{{"step", r.step},           {"total", r.total},       {"text_ce", r.text_ce},
                     {"image_mse", r.image_mse}, {"gate_aux", r.gate_aux}, {"gamma_mean", r.gamma_mean}};
    return j.dump();
}

LossRecord train_step(HarmonyModel& model, Optimizer& opt, std::span<const InterleavedSequence> batch,
                      double lambda_gate, Rng& rng) {
    model.params.zero_grad();
    std::vector<RouteTrace> traces;
    auto parts = combined_loss(model, batch, rng, &traces);
    std::vector<TaskLabel> labels;
    for (const auto& s : batch) labels.push_back(s.label);
    auto aux = gate_aux_loss(traces, labels);

    LossRecord rec;
    rec.step = opt.steps() + 1;
    rec.text_ce = parts.text_ce.item();
    rec.image_mse = parts.image_mse.item();
    Tensor total = parts.total;
    if (aux.defined()) {
        rec.gate_aux = aux.item();
        total = add(total, scale(aux, lambda_gate));
    }
    rec.total = total.item();
    double gsum = 0;
    std::size_t gn = 0;
    for (const auto& t : traces)
        for (double g : t.gammas()) gsum += g, ++gn;
    rec.gamma_mean = gn ? gsum / static_cast<double>(gn) : 0.0;

    if (!std::isfinite(rec.total)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << rec.step << ": text_ce=" << rec.text_ce
            << " image_mse=" << rec.image_mse << " gate_aux=" << rec.gate_aux;
        throw NonFiniteLossError(msg.str());
    }
    if (total.requires_grad()) {
        total.backward();
        opt.step(model.trainable_params());
    } else {
        opt.set_steps(opt.steps() + 1);
    }
    return rec;
}

InterleavedSequence warmup_sequence(const SyntheticSample& s, const Vocabulary& vocab,
                                    std::size_t input_slots, std::size_t target_slots) {
    auto seq = format_sequence(s, vocab, input_slots, target_slots);
    // A target image is not part of the text stream; drop its span.
    if (const ImageSpan* t = seq.target_span()) {
        const auto first = seq.tokens.begin() + static_cast<std::ptrdiff_t>(t->begin);
        seq.tokens.erase(first, first + static_cast<std::ptrdiff_t>(t->slots + 2));
        std::erase_if(seq.spans, [](const ImageSpan& sp) { return sp.role == SpanRole::target; });
        seq.image_positions.clear();
        seq.target_image.reset();
    }
    std::vector<char> in_span(seq.tokens.size(), 0);
    for (const auto& sp : seq.spans)
        for (std::size_t i = sp.begin; i < sp.end(); ++i) in_span[i] = 1;
    seq.text_positions.clear();
    for (std::size_t i = 1; i < seq.tokens.size(); ++i)
        if (!in_span[i]) seq.text_positions.push_back(i);
    return seq;
}

Tensor warmup_loss(const HarmonyModel& model, std::span<const InterleavedSequence> batch) {
    if (batch.empty()) throw ContractError("warmup_loss: empty batch");
    const auto& bb = model.config().backbone;
    const auto zeros = Tensor::zeros({bb.queries, bb.width});
    std::vector<Tensor> logits;
    std::vector<std::size_t> targets;
    for (const auto& seq : batch) {
        RouteTrace trace;
        trace.pool_rows = seq.prompt_len;
        auto out = model.lm.forward(seq, zeros, &trace);
        logits.push_back(out.text_logits);
        targets.insert(targets.end(), out.text_targets.begin(), out.text_targets.end());
    }
    return softmax_cross_entropy(concat_rows(logits), targets);
}

// ------------------------------------------------------------------ data

SampleStream::SampleStream(std::uint64_t seed, std::string label, std::vector<Task> tasks,
                           std::vector<std::size_t> templates)
    : seed_(seed), label_(std::move(label)), tasks_(std::move(tasks)), templates_(std::move(templates)) {
    if (tasks_.empty()) throw ConfigError("sample stream needs at least one task");
}

SyntheticSample SampleStream::next() {
    const std::size_t i = index_++;
    Rng rng(derive_seed(seed_, label_ + "/" + std::to_string(i)));
    const Task task = tasks_[i % tasks_.size()];
    const bool qa = task == Task::perception || task == Task::comprehension;
    for (;;) {
        auto s = make_sample(task, rng);
        if (!qa || templates_.empty() ||
            std::find(templates_.begin(), templates_.end(), s.template_id) != templates_.end())
            return s;
    }
}

std::vector<Task> tasks_for(Modality m) {
    if (m == Modality::text) return {Task::perception, Task::comprehension};
    return {Task::generation, Task::editing};
}

InterleavedSequence answer_prompt(const SyntheticSample& s, const BackboneConfig& bb) {
    auto seq = format_sequence(s, Vocabulary::standard(), bb.queries, bb.image_slots);
    seq.tokens.resize(seq.prompt_len);
    seq.text_positions.clear();
    return seq;
}

InterleavedSequence image_prompt(const SyntheticSample& s, const BackboneConfig& bb) {
    auto seq = format_sequence(s, Vocabulary::standard(), bb.queries, bb.image_slots);
    seq.tokens.resize(seq.prompt_len);
    seq.spans.pop_back();
    seq.image_positions.clear();
    seq.target_image.reset();
    return seq;
}

std::vector<SyntheticSample> eval_set(Modality m, std::size_t n, std::uint64_t seed) {
    SampleStream stream(derive_seed(seed, "eval"), m == Modality::text ? "text" : "image", tasks_for(m));
    std::vector<SyntheticSample> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(stream.next());
    return out;
}

void attach_adapters(HarmonyModel& model, const AdapterSpec& spec) {
    switch (spec.kind) {
        case AdapterSpec::Kind::none: break;
        case AdapterSpec::Kind::lora: model.attach_lora(spec.placement, spec.rank, spec.alpha, spec.seed); break;
        case AdapterSpec::Kind::slide_lora: model.attach_slide_lora(spec.slide_lora, spec.seed); break;
    }
}

AdapterSpec adapter_for(const ExperimentConfig& cfg, const ArmSpec& arm, std::uint64_t seed) {
    AdapterSpec spec;
    spec.seed = derive_seed(seed, "init.adapters");
    if (arm.arm == Arm::joint_slide_lora) {
        spec.kind = AdapterSpec::Kind::slide_lora;
        spec.slide_lora = cfg.slide_lora;
        spec.slide_lora.placement = arm.placement;
    } else {
        spec.kind = AdapterSpec::Kind::lora;
        spec.placement = Placement::both;
        spec.rank = cfg.dense_rank;
        spec.alpha = cfg.dense_alpha;
    }
    return spec;
}

ParamSnapshot capture(const ParamStore& store) {
    ParamSnapshot snap;
    for (const auto& p : store.params()) {
        auto d = p.tensor.data();
        snap[p.name].assign(d.begin(), d.end());
    }
    return snap;
}

void restore(ParamStore& store, const ParamSnapshot& snap) {
    for (const auto& [name, values] : snap) {
        const Tensor* t = store.find(name);
        if (!t) throw ContractError("restore: model has no parameter '" + name + "'");
        Tensor w = *t;
        auto d = w.mutable_data();
        if (d.size() != values.size()) {
            throw DimensionError("restore: '" + name + "' has " + std::to_string(d.size()) +
                                 " values, snapshot has " + std::to_string(values.size()));
        }
        std::copy(values.begin(), values.end(), d.begin());
    }
}

// ------------------------------------------------------------------ stages

namespace {

struct Streams {
    SampleStream text, image;
};

Optimizer make_optimizer(const ExperimentConfig& cfg, double lr) {
    auto o = cfg.optimizer;
    o.lr = lr;
    return Optimizer(o);
}

std::vector<InterleavedSequence> draw(SampleStream& stream, std::size_t n, const Vocabulary& vocab,
                                      const BackboneConfig& bb, bool warmup = false) {
    std::vector<InterleavedSequence> batch;
    for (std::size_t i = 0; i < n; ++i) {
        auto s = stream.next();
        batch.push_back(warmup ? warmup_sequence(s, vocab, bb.queries, bb.image_slots)
                               : format_sequence(s, vocab, bb.queries, bb.image_slots));
    }
    return batch;
}

}  // namespace

std::vector<LossRecord> run_warmup(HarmonyModel& model, const ExperimentConfig& cfg, std::uint64_t seed) {
    const auto& bb = model.config().backbone;
    const auto vocab = Vocabulary::standard();
    model.params.set_trainable_all(false);
    model.params.set_trainable("lm.", true);
    auto opt = make_optimizer(cfg, cfg.warmup.lr);
    SampleStream text(derive_seed(seed, "data.warmup"), "text", tasks_for(Modality::text));
    SampleStream image(derive_seed(seed, "data.warmup"), "image", tasks_for(Modality::image));
    std::vector<LossRecord> log;
    for (std::size_t step = 0; step < cfg.warmup.steps; ++step) {
        auto batch = draw(step % 2 == 0 ? text : image, cfg.warmup.batch, vocab, bb, true);
        model.params.zero_grad();
        auto loss = warmup_loss(model, batch);
        LossRecord rec;
        rec.step = step + 1;
        rec.total = rec.text_ce = loss.item();
        if (!std::isfinite(rec.total)) {
            throw NonFiniteLossError("non-finite warm-up loss at step " + std::to_string(rec.step));
        }
        loss.backward();
        opt.step(model.trainable_params());
        log.push_back(rec);
    }
    return log;
}

std::vector<LossRecord> run_pretrain(HarmonyModel& model, const ExperimentConfig& cfg, std::uint64_t seed) {
    const auto& bb = model.config().backbone;
    const auto vocab = Vocabulary::standard();
    model.apply_freezing(Stage::pretrain, cfg.freeze_overrides);
    auto opt = make_optimizer(cfg, cfg.pretrain.lr);
    // Caption-style data only: full-text extraction and caption-to-image.
    SampleStream text(derive_seed(seed, "data.pretrain"), "text", {Task::perception}, {2});
    SampleStream image(derive_seed(seed, "data.pretrain"), "image", {Task::generation});
    Rng rng(derive_seed(seed, "noise.pretrain"));
    std::vector<LossRecord> log;
    for (std::size_t step = 0; step < cfg.pretrain.steps; ++step) {
        auto batch = draw(step % 2 == 0 ? text : image, cfg.pretrain.batch, vocab, bb);
        log.push_back(train_step(model, opt, batch, cfg.lambda_gate, rng));
    }
    return log;
}

std::vector<LossRecord> run_finetune(HarmonyModel& model, const ExperimentConfig& cfg, const ArmSpec& arm,
                                     std::uint64_t seed) {
    const auto& bb = model.config().backbone;
    const auto vocab = Vocabulary::standard();
    model.apply_freezing(Stage::finetune, cfg.freeze_overrides);
    auto opt = make_optimizer(cfg, cfg.finetune.lr);
    // Every arm reads the same streams, so joint arms see exactly the batches of
    // both uni-modal arms.
    SampleStream text(derive_seed(seed, "data.finetune"), "text", tasks_for(Modality::text));
    SampleStream image(derive_seed(seed, "data.finetune"), "image", tasks_for(Modality::image));
    Rng rng(derive_seed(seed, "noise.finetune"));
    std::vector<Modality> plan;
    for (std::size_t i = 0; i < cfg.finetune.steps; ++i) {
        if (arm.arm != Arm::image_only) plan.push_back(Modality::text);
        if (arm.arm != Arm::text_only) plan.push_back(Modality::image);
    }
    std::vector<LossRecord> log;
    for (auto m : plan) {
        auto batch = draw(m == Modality::text ? text : image, cfg.finetune.batch, vocab, bb);
        log.push_back(train_step(model, opt, batch, cfg.lambda_gate, rng));
    }
    return log;
}

// ------------------------------------------------------------------ evaluation

EvalResult evaluate(const HarmonyModel& model, std::span<const SyntheticSample> text_set,
                    std::span<const SyntheticSample> image_set, std::uint64_t seed,
                    std::size_t max_answer_tokens) {
    const auto& bb = model.config().backbone;
    const auto vocab = Vocabulary::standard();
    EvalResult r;
    std::vector<std::string> preds, gts;
    double ned_sum = 0, gamma_t = 0, gamma_i = 0;
    std::size_t hits = 0, gt_n = 0, gi_n = 0;
    Rng unused(0);
    for (const auto& s : text_set) {
        auto g = model.generate(answer_prompt(s, bb), GenerationMode::text, max_answer_tokens, unused);
        auto pred = vocab.decode(g.generated);
        ned_sum += ned(pred, s.answer);
        preds.push_back(pred);
        gts.push_back(s.answer);
        if (s.task == Task::perception && s.template_id == 1) {
            ++r.grounding_items;
            auto box = parse_box(pred);
            if (box && box->valid() && acc_at_05(*box, s.boxes.front()).hit) ++hits;
        }
        for (double v : g.gammas) gamma_t += v, ++gt_n;
    }
    if (!text_set.empty()) {
        r.text_accuracy = exact_accuracy(preds, gts);
        r.text_ned = ned_sum / static_cast<double>(text_set.size());
    }
    if (r.grounding_items) r.acc_at_05 = static_cast<double>(hits) / static_cast<double>(r.grounding_items);

    std::vector<Image> generated, targets;
    double mse_sum = 0;
    for (std::size_t i = 0; i < image_set.size(); ++i) {
        const auto& s = image_set[i];
        Rng noise(derive_seed(seed, "eval/noise/" + std::to_string(i)));
        auto g = model.generate(image_prompt(s, bb), GenerationMode::image, 0, noise);
        mse_sum += pixel_mse(*g.image, *s.target_image);
        generated.push_back(*g.image);
        targets.push_back(*s.target_image);
        for (double v : g.gammas) gamma_i += v, ++gi_n;
    }
    if (!image_set.empty()) {
        r.image_mse = mse_sum / static_cast<double>(image_set.size());
        r.toy_fid = toy_fid(generated, targets);
    }
    r.gamma_text = gt_n ? gamma_t / static_cast<double>(gt_n) : 0.0;
    r.gamma_image = gi_n ? gamma_i / static_cast<double>(gi_n) : 0.0;
    return r;
}

// ------------------------------------------------------------------ experiment

namespace {

void write_log(const std::optional<std::filesystem::path>& dir, const std::string& sub,
               const std::vector<LossRecord>& log, std::size_t every) {
    if (!dir) return;
    auto d = *dir / sub;
    std::filesystem::create_directories(d);
    std::ofstream out(d / "metrics.jsonl", std::ios::binary);
    for (const auto& r : log)
        if (every <= 1 || r.step % every == 0 || r.step == log.size()) out << to_json_line(r) << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& out_dir,
                                const ProgressFn& progress, std::size_t workers) {
    ExperimentReport report;
    std::vector<ArmSpec> arms;
    for (const auto& a : cfg.arms) arms.push_back(parse_arm_spec(a));
    std::mutex say_mutex;
    auto say = [&](const std::string& m) {
        std::lock_guard lock(say_mutex);
        if (progress) progress(m);
    };
    for (std::size_t k = 0; k < cfg.seeds; ++k) {
        const std::uint64_t seed = derive_seed(cfg.seed, "seed" + std::to_string(k));
        const auto dir = out_dir ? std::optional(*out_dir / ("seed" + std::to_string(k))) : std::nullopt;
        const std::string tag = "seed" + std::to_string(k);
        ParamSnapshot shared;
        {
            HarmonyModel base(cfg.model, seed);
            auto t0 = std::chrono::steady_clock::now();
            write_log(dir, "warmup", run_warmup(base, cfg, seed), cfg.log_every);
            say(tag + " warmup done in " + std::to_string(seconds_since(t0)) + "s");
            t0 = std::chrono::steady_clock::now();
            write_log(dir, "pretrain", run_pretrain(base, cfg, seed), cfg.log_every);
            say(tag + " pretrain done in " + std::to_string(seconds_since(t0)) + "s");
            shared = capture(base.params);
        }
        const auto text_set = eval_set(Modality::text, cfg.eval_text, seed);
        const auto image_set = eval_set(Modality::image, cfg.eval_image, seed);

        std::vector<ArmResult> rows(arms.size());
        std::vector<std::exception_ptr> errors(arms.size());
        auto run_arm = [&](std::size_t i) {
            const auto& arm = arms[i];
            try {
                auto t0 = std::chrono::steady_clock::now();
                HarmonyModel model(cfg.model, seed);
                restore(model.params, shared);
                attach_adapters(model, adapter_for(cfg, arm, seed));
                auto log = run_finetune(model, cfg, arm, seed);
                write_log(dir, arm.name, log, cfg.log_every);
                auto& row = rows[i];
                row.arm = arm.name;
                row.seed = k;
                row.steps = log.size();
                row.eval = evaluate(model, text_set, image_set, seed, cfg.max_answer_tokens);
                row.seconds = seconds_since(t0);
                std::ostringstream msg;
                msg << tag << " " << arm.name << ": text_acc=" << row.eval.text_accuracy
                    << " image_mse=" << row.eval.image_mse << " (" << row.seconds << "s)";
                say(msg.str());
            } catch (const std::exception& e) {
                errors[i] = std::make_exception_ptr(Error("arm " + arm.name + " (" + tag + "): " + e.what()));
            }
        };
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i; (i = next++) < arms.size();) run_arm(i);
        };
        const std::size_t n = std::max<std::size_t>(1, std::min(workers, arms.size()));
        std::vector<std::thread> pool;
        for (std::size_t w = 1; w < n; ++w) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    }
    return report;
}

std::string format_report_table(const ExperimentReport& report) {
    std::ostringstream out;
    out << std::left << std::setw(26) << "arm" << std::setw(6) << "seed" << std::right << std::setw(9)
        << "text_acc" << std::setw(9) << "ned" << std::setw(9) << "acc@0.5" << std::setw(11) << "pixel_mse"
        << std::setw(10) << "toy_fid" << std::setw(9) << "g_text" << std::setw(9) << "g_image" << '\n';
    out << std::fixed;
    for (const auto& r : report.rows) {
        out << std::left << std::setw(26) << r.arm << std::setw(6) << r.seed << std::right << std::setprecision(4)
            << std::setw(9) << r.eval.text_accuracy << std::setw(9) << r.eval.text_ned << std::setw(9)
            << r.eval.acc_at_05 << std::setw(11) << r.eval.image_mse << std::setw(10) << r.eval.toy_fid
            << std::setw(9) << r.eval.gamma_text << std::setw(9) << r.eval.gamma_image << '\n';
    }
    return out.str();
}

}  // namespace harmony
