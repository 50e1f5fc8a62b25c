#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"

#include "harmony/model.hpp"
#include "harmony/trainer.hpp"

namespace harmony {

inline constexpr int checkpoint_version = 1;

struct CheckpointState {
    AdapterSpec adapters;
    std::size_t step = 0;
    const Optimizer* optimizer = nullptr;
    const Rng* rng = nullptr;
    nlohmann::json config;  // echoed verbatim into the manifest
};

// <dir>/manifest.json plus <dir>/params.bin: every parameter in registry
// order, then optimizer moments, as little-endian float32.
void save_checkpoint(const std::filesystem::path& dir, const HarmonyModel& model,
                     const CheckpointState& state);

struct LoadedCheckpoint {
    std::unique_ptr<HarmonyModel> model;
    AdapterSpec adapters;
    std::size_t step = 0;
    std::optional<Optimizer> optimizer;
    std::optional<std::string> rng_state;
    nlohmann::json manifest;
};

// Rebuilds the model (with `expected` adapters when given, otherwise the
// recorded ones). Throws ShapeMismatchError listing every differing parameter,
// IntegrityError when params.bin has the wrong byte count.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir,
                                 const std::optional<AdapterSpec>& expected = std::nullopt);

nlohmann::json to_json(const AdapterSpec& a);
AdapterSpec adapter_spec_from_json(const nlohmann::json& j);

}  // namespace harmony
