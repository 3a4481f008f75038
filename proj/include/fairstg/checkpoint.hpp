#pragma once

#include "fairstg/model.hpp"

#include <memory>
#include <string>

namespace fairstg {

// Single binary container: magic "FSTG", version, JSON header describing the
// architecture and normalization, then named little-endian fp32 arrays.
struct LoadedCheckpoint {
    std::unique_ptr<Model> model;
    std::string mode;     // "plain" (no enhancement at inference) or "fairstg"
    std::string ablation; // training ablation the checkpoint came from
};

void save_checkpoint(const std::string& path, const Model& model, const std::string& mode,
                     const std::string& ablation);

LoadedCheckpoint load_checkpoint(const std::string& path);

} // namespace fairstg
