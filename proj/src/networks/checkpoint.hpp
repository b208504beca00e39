#pragma once

#include <json.hpp>

#include <string>

#include "networks/model.hpp"

namespace morphsdf {

// Versioned binary snapshot: magic "MSDF", format version, a JSON config
// block (architecture, latent-table shape, training stage), then named
// parameter blocks of raw little-endian float32. Round trips bit-exactly.
struct Checkpoint {
    Model model;
    LatentTables tables;
    int stage = 0;  // 0 untrained, 1 geometry stage done, 2 full
};

void save_checkpoint(const std::string& path, Model& model, LatentTables& tables, int stage);
Checkpoint load_checkpoint(const std::string& path);

// The architecture part of the meta JSON, shared with the trainer state file.
nlohmann::json model_config_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace morphsdf
