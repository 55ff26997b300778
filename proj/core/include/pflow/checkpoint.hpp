#pragma once

#include <optional>
#include <string>

#include "pflow/model_params.hpp"
#include "pflow/training.hpp"

namespace pflow {

/// Checkpoints are a JSON manifest (<stem>.json) plus a raw little-endian
/// f32 blob (<stem>.bin). The manifest maps tensor name -> shape -> byte
/// offset, echoes the model config, and carries the training iteration.
/// Adam moments are stored under "adam.m." / "adam.v." names when present.
struct Checkpoint {
    ModelParams params;
    std::optional<AdamState> opt;
    long iteration = 0;
};

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const AdamState* opt = nullptr, long iteration = 0);

/// Accepts the stem, the .json path, or the .bin path. Validates the full
/// tensor inventory (names and shapes) against the manifest's config;
/// missing, extra, or reshaped tensors fault with the tensor name.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pflow
