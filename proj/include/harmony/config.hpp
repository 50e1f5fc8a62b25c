#pragma once

#include <filesystem>

#include "json.hpp"

#include "harmony/model.hpp"
#include "harmony/slide_lora.hpp"
#include "harmony/trainer.hpp"

namespace harmony {

using json = nlohmann::json;

// Every reader fills defaults for absent keys and throws ConfigError on
// unknown keys or wrong types.
json to_json(const BackboneConfig& c);
json to_json(const DiffusionConfig& c);
json to_json(const ModelConfig& c);
json to_json(const SlideLoraConfig& c);
json to_json(const OptimizerConfig& c);
json to_json(const StageBudget& c);
json to_json(const ExperimentConfig& c);

BackboneConfig backbone_from_json(const json& j);
DiffusionConfig diffusion_from_json(const json& j);
ModelConfig model_from_json(const json& j);
SlideLoraConfig slide_lora_from_json(const json& j);
OptimizerConfig optimizer_from_json(const json& j);
StageBudget stage_from_json(const json& j);
ExperimentConfig experiment_from_json(const json& j);

json read_json(const std::filesystem::path& path);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace harmony
