#include "harmony/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "harmony/config.hpp"
#include "harmony/errors.hpp"

namespace harmony {

json to_json(const AdapterSpec& a) {
    const char* kind = a.kind == AdapterSpec::Kind::none ? "none"
                       : a.kind == AdapterSpec::Kind::lora ? "lora"
                                                           : "slide_lora";
    return {{"kind", kind},
            {"slide_lora", to_json(a.slide_lora)},
            {"placement", to_string(a.placement)},
            {"rank", a.rank},
            {"alpha", a.alpha},
            {"seed", a.seed}};
}

AdapterSpec adapter_spec_from_json(const json& j) {
    AdapterSpec a;
    const std::string kind = j.at("kind");
    if (kind == "none") a.kind = AdapterSpec::Kind::none;
    else if (kind == "lora") a.kind = AdapterSpec::Kind::lora;
    else if (kind == "slide_lora") a.kind = AdapterSpec::Kind::slide_lora;
    else throw ConfigError("unknown adapter kind '" + kind + "'");
    a.slide_lora = slide_lora_from_json(j.at("slide_lora"));
    a.placement = parse_placement(j.at("placement"));
    a.rank = j.at("rank");
    a.alpha = j.at("alpha");
    a.seed = j.at("seed");
    return a;
}

namespace {

void put_f32(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

double get_f32(const std::string& buf, std::size_t& pos) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * b);
    return static_cast<double>(std::bit_cast<float>(bits));
}

std::string shape_text(const json& shape) { return shape.dump(); }

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const HarmonyModel& model, const CheckpointState& state) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format"] = "harmony-checkpoint";
    manifest["version"] = checkpoint_version;
    manifest["model"] = to_json(model.config());
    manifest["adapters"] = to_json(state.adapters);
    manifest["step"] = state.step;
    manifest["config"] = state.config;
    manifest["rng_state"] = state.rng ? json(state.rng->state()) : json(nullptr);

    std::string payload;
    json params = json::array();
    for (const auto& p : model.params.params()) {
        params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
        for (double v : p.tensor.data()) put_f32(payload, v);
    }
    manifest["params"] = params;
    if (state.optimizer) {
        const auto& opt = *state.optimizer;
        json slots = json::array();
        for (const auto& [name, slot] : opt.slots()) {
            slots.push_back({{"name", name}, {"m", slot.m.size()}, {"v", slot.v.size()}});
            for (double v : slot.m) put_f32(payload, v);
            for (double v : slot.v) put_f32(payload, v);
        }
        manifest["optimizer"] = {{"config", to_json(opt.config())}, {"steps", opt.steps()}, {"slots", slots}};
    } else {
        manifest["optimizer"] = nullptr;
    }
    manifest["payload_bytes"] = payload.size();

    std::ofstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw Error("cannot write " + (dir / "params.bin").string());
    bin.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    std::ofstream man(dir / "manifest.json", std::ios::binary);
    man << manifest.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, const std::optional<AdapterSpec>& expected) {
    LoadedCheckpoint out;
    out.manifest = read_json(dir / "manifest.json");
    const auto& m = out.manifest;
    if (m.value("format", "") != "harmony-checkpoint") throw IntegrityError("not a harmony checkpoint: " + dir.string());
    if (m.value("version", 0) != checkpoint_version) {
        throw IntegrityError("unsupported checkpoint version " + std::to_string(m.value("version", 0)));
    }
    const auto model_cfg = model_from_json(m.at("model"));
    out.adapters = expected ? *expected : adapter_spec_from_json(m.at("adapters"));
    out.step = m.at("step");
    out.model = std::make_unique<HarmonyModel>(model_cfg, 0);
    attach_adapters(*out.model, out.adapters);

    // Registry comparison first, so a config mismatch names the parameters.
    std::ostringstream diff;
    std::size_t problems = 0;
    std::map<std::string, json> saved;
    for (const auto& p : m.at("params")) saved[p.at("name")] = p.at("shape");
    for (const auto& p : out.model->params.params()) {
        json shape = p.tensor.shape();
        auto it = saved.find(p.name);
        if (it == saved.end()) {
            diff << "\n  + " << p.name << " " << shape_text(shape) << " (model only)";
            ++problems;
        } else if (it->second != shape) {
            diff << "\n  ~ " << p.name << " checkpoint " << shape_text(it->second) << " vs model " << shape_text(shape);
            ++problems;
        }
    }
    for (const auto& [name, shape] : saved)
        if (!out.model->params.find(name)) {
            diff << "\n  - " << name << " " << shape_text(shape) << " (checkpoint only)";
            ++problems;
        }
    if (problems) {
        throw ShapeMismatchError("checkpoint " + dir.string() + " does not match the model (" +
                                 std::to_string(problems) + " parameters):" + diff.str());
    }

    std::size_t expected_bytes = 0;
    for (const auto& p : out.model->params.params()) expected_bytes += 4 * p.tensor.numel();
    if (!m.at("optimizer").is_null())
        for (const auto& s : m["optimizer"].at("slots"))
            expected_bytes += 4 * (s.at("m").get<std::size_t>() + s.at("v").get<std::size_t>());

    std::ifstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw IntegrityError("missing " + (dir / "params.bin").string());
    std::string buf((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    if (buf.size() != expected_bytes) {
        throw IntegrityError("params.bin holds " + std::to_string(buf.size()) + " bytes, manifest expects " +
                             std::to_string(expected_bytes));
    }

    // Payload order is the manifest's parameter order.
    std::size_t pos = 0;
    for (const auto& p : m.at("params")) {
        Tensor t = *out.model->params.find(p.at("name"));
        for (auto& v : t.mutable_data()) v = get_f32(buf, pos);
    }
    if (!m.at("optimizer").is_null()) {
        const auto& o = m["optimizer"];
        Optimizer opt(optimizer_from_json(o.at("config")));
        opt.set_steps(o.at("steps"));
        for (const auto& s : o.at("slots")) {
            auto& slot = opt.slots()[s.at("name")];
            slot.m.resize(s.at("m"));
            slot.v.resize(s.at("v"));
            for (auto& v : slot.m) v = get_f32(buf, pos);
            for (auto& v : slot.v) v = get_f32(buf, pos);
        }
        out.optimizer = std::move(opt);
    }
    if (!m.at("rng_state").is_null()) out.rng_state = m["rng_state"].get<std::string>();
    return out;
}

}  // namespace harmony
