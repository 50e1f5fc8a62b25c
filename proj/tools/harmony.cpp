// harmony: data synthesis, two-stage training, evaluation, generation and the
// arm/placement experiment from one config file.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "harmony/checkpoint.hpp"
#include "harmony/config.hpp"
#include "harmony/errors.hpp"
#include "harmony/synthworld.hpp"
#include "harmony/trainer.hpp"

#ifndef HARMONY_VERSION
#define HARMONY_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace harmony;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
};

ExperimentConfig resolve(const Common& c) {
    auto cfg = c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
    if (c.seed) {
        cfg.seed = *c.seed;
        cfg.data.seed = *c.seed;
    }
    return cfg;
}

std::string build_stamp() {
    std::string s = std::string("harmony ") + HARMONY_VERSION + " (" +
#if defined(__clang__)
                    "clang " + __clang_version__;
#elif defined(__GNUC__)
                    "gcc " + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__);
#else
                    "unknown compiler";
#endif
#ifdef NDEBUG
    s += ", release)";
#else
    s += ", debug)";
#endif
    return s;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

void write_run_json(const fs::path& dir, const std::string& command, const json& config) {
    fs::create_directories(dir);
    json run{{"command", command}, {"build", build_stamp()}, {"config", config}};
    write_text(dir / "run.json", run.dump(2) + "\n");
}

void write_log(const fs::path& path, const std::vector<LossRecord>& log) {
    fs::create_directories(path.parent_path());
    std::string text;
    for (const auto& r : log) text += to_json_line(r) + "\n";
    write_text(path, text);
}

std::uint64_t run_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, "seed0"); }

std::size_t thread_cap() {
    if (const char* v = std::getenv("HARMONY_THREADS")) {
        try {
            const long n = std::stol(v);
            if (n >= 1) return static_cast<std::size_t>(n);
        } catch (const std::exception&) {
        }
        throw ConfigError(std::string("HARMONY_THREADS must be a positive integer, got '") + v + "'");
    }
    return 1;
}

json eval_json(const EvalResult& r) {
    return {{"text", {{"accuracy", r.text_accuracy}, {"ned", r.text_ned}, {"acc_at_05", r.acc_at_05},
                      {"grounding_items", r.grounding_items}}},
            {"image", {{"pixel_mse", r.image_mse}, {"toy_fid", r.toy_fid}}},
            {"gamma", {{"text_prompts", r.gamma_text}, {"image_prompts", r.gamma_image}}}};
}

// ------------------------------------------------------------------ commands

void cmd_gen_data(const Common& c, bool pgm) {
    auto cfg = resolve(c);
    const fs::path out = c.out;
    write_run_json(out, "gen-data", to_json(cfg));
    auto samples = make_dataset(cfg.data);
    write_dataset(out / "dataset.jsonl", samples);
    write_text(out / "dataset.sha256", sha256_file(out / "dataset.jsonl") + "  dataset.jsonl\n");
    Vocabulary::standard().save(out / "vocab.txt");
    if (pgm) dump_pgm(out / "pgm", samples);
    std::cout << "wrote " << samples.size() << " samples to " << (out / "dataset.jsonl").string() << "\n";
}

void cmd_pretrain(const Common& c) {
    auto cfg = resolve(c);
    const fs::path out = c.out;
    write_run_json(out, "pretrain", to_json(cfg));
    const auto seed = run_seed(cfg);
    HarmonyModel model(cfg.model, seed);
    write_log(out / "warmup" / "metrics.jsonl", run_warmup(model, cfg, seed));
    auto log = run_pretrain(model, cfg, seed);
    write_log(out / "pretrain" / "metrics.jsonl", log);
    save_checkpoint(out / "ckpt", model, {AdapterSpec{}, log.size(), nullptr, nullptr, to_json(cfg)});
    std::cout << "pretrain checkpoint: " << (out / "ckpt").string() << "\n";
}

void cmd_finetune(const Common& c, const std::string& init, const std::string& arm_name) {
    auto cfg = resolve(c);
    const fs::path out = c.out;
    auto echo = to_json(cfg);
    echo["arm"] = arm_name;
    echo["init"] = init;
    write_run_json(out, "finetune", echo);
    const auto seed = run_seed(cfg);
    const auto arm = parse_arm_spec(arm_name);
    auto loaded = load_checkpoint(init, AdapterSpec{});
    HarmonyModel model(loaded.model->config(), seed);
    restore(model.params, capture(loaded.model->params));
    const auto spec = adapter_for(cfg, arm, seed);
    attach_adapters(model, spec);
    auto log = run_finetune(model, cfg, arm, seed);
    write_log(out / "metrics.jsonl", log);
    save_checkpoint(out / "ckpt", model, {spec, log.size(), nullptr, nullptr, echo});
    std::cout << "finetune checkpoint: " << (out / "ckpt").string() << "\n";
}

void cmd_eval(const Common& c, const std::string& ckpt) {
    auto cfg = resolve(c);
    const fs::path out = c.out;
    auto echo = to_json(cfg);
    echo["ckpt"] = ckpt;
    write_run_json(out, "eval", echo);
    auto loaded = load_checkpoint(ckpt);
    const auto seed = run_seed(cfg);
    auto r = evaluate(*loaded.model, eval_set(Modality::text, cfg.eval_text, seed),
                      eval_set(Modality::image, cfg.eval_image, seed), seed, cfg.max_answer_tokens);
    write_text(out / "eval.json", eval_json(r).dump(2) + "\n");
    ExperimentReport rep;
    rep.rows.push_back({fs::path(ckpt).parent_path().filename().string(), 0, loaded.step, r, 0});
    const auto table = format_report_table(rep);
    write_text(out / "eval.txt", table);
    std::cout << table;
}

void cmd_generate(const Common& c, const std::string& ckpt, const std::string& mode, const std::string& prompt,
                  const std::string& image_path) {
    const fs::path out = c.out;
    write_run_json(out, "generate", {{"ckpt", ckpt}, {"mode", mode}, {"prompt", prompt}, {"image", image_path},
                                     {"seed", c.seed.value_or(0)}});
    auto loaded = load_checkpoint(ckpt);
    const auto& model = *loaded.model;
    const auto& bb = model.config().backbone;
    const auto vocab = Vocabulary::standard();

    SyntheticSample s;
    s.input_image = image_path.empty() ? Image::black(bb.image_size, bb.image_size, bb.channels) : read_pgm(image_path);
    Rng rng(derive_seed(c.seed.value_or(0), "generate"));
    if (mode == "text") {
        s.task = Task::perception;
        s.instruction = prompt;
        auto g = model.generate(answer_prompt(s, bb), GenerationMode::text, 32, rng);
        const auto answer = vocab.decode(g.generated);
        write_text(out / "answer.txt", answer + "\n");
        std::cout << answer << "\n";
    } else if (mode == "image") {
        s.task = Task::generation;
        s.instruction = "Generate an image according to the caption. " + prompt;
        s.target_image = s.input_image;
        auto g = model.generate(image_prompt(s, bb), GenerationMode::image, 0, rng);
        write_pgm(out / "generated.pgm", *g.image);
        json cond{{"shape", g.conditions.shape()}, {"values", std::vector<double>(g.conditions.data().begin(), g.conditions.data().end())},
                  {"gammas", g.gammas}};
        write_text(out / "conditions.json", cond.dump(2) + "\n");
        std::cout << "wrote " << (out / "generated.pgm").string() << "\n";
    } else {
        throw ConfigError("--mode must be text or image");
    }
}

void cmd_ablate(const Common& c) {
    auto cfg = resolve(c);
    const fs::path out = c.out;
    write_run_json(out, "ablate", to_json(cfg));
    auto report = run_experiment(cfg, out, [](const std::string& m) { std::cerr << m << std::endl; }, thread_cap());
    json rows = json::array();
    json timing = json::array();
    for (const auto& r : report.rows) {
        auto j = eval_json(r.eval);
        j["arm"] = r.arm;
        j["seed"] = r.seed;
        j["steps"] = r.steps;
        rows.push_back(j);
        timing.push_back({{"arm", r.arm}, {"seed", r.seed}, {"seconds", r.seconds}});
    }
    write_text(out / "report.json", json{{"rows", rows}}.dump(2) + "\n");
    write_text(out / "timing.json", timing.dump(2) + "\n");
    const auto table = format_report_table(report);
    write_text(out / "report.txt", table);
    std::cout << table;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"harmony: interleaved text/image toy model with Slide-LoRA"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);
    app.set_version_flag("--version", build_stamp());

    Common common;
    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* opt = sub->add_option("--config", common.config, "run config (JSON)")->check(CLI::ExistingFile);
        if (needs_config) opt->required();
        sub->add_option("--out", common.out, "output directory")->required();
        sub->add_option("--seed", common.seed, "master seed override");
    };

    bool pgm = false;
    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset, checksum and vocabulary");
    add_common(gen, true);
    gen->add_flag("--pgm", pgm, "also dump every image as PGM");

    auto* pre = app.add_subcommand("pretrain", "LM warm-up, then train resampler and image decoder");
    add_common(pre, true);

    std::string init, arm = "joint_slide_lora";
    auto* fin = app.add_subcommand("finetune", "attach adapters and fine-tune one arm");
    add_common(fin, true);
    fin->add_option("--init", init, "pretrain checkpoint directory")->required()->check(CLI::ExistingDirectory);
    fin->add_option("--arm", arm, "text_only | image_only | joint_dense | joint_slide_lora | placement:<where>");

    std::string ckpt;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on held-out samples");
    add_common(ev, false);
    ev->add_option("--ckpt", ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);

    std::string mode = "image", prompt, image;
    auto* gn = app.add_subcommand("generate", "answer a question or draw an image from a checkpoint");
    gn->add_option("--ckpt", ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
    gn->add_option("--mode", mode, "text or image")->check(CLI::IsMember({"text", "image"}));
    gn->add_option("--prompt", prompt, "question (text) or caption (image)")->required();
    gn->add_option("--image", image, "input image (PGM); black when omitted")->check(CLI::ExistingFile);
    gn->add_option("--out", common.out, "output directory")->required();
    gn->add_option("--seed", common.seed, "sampling seed");

    auto* abl = app.add_subcommand("ablate", "train every arm over all seeds and tabulate");
    add_common(abl, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*gen) cmd_gen_data(common, pgm);
        else if (*pre) cmd_pretrain(common);
        else if (*fin) cmd_finetune(common, init, arm);
        else if (*ev) cmd_eval(common, ckpt);
        else if (*gn) cmd_generate(common, ckpt, mode, prompt, image);
        else if (*abl) cmd_ablate(common);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
