#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pflow/refsim.hpp"

namespace pflow {

/// A named dataset: one base scene plus randomized block placement per
/// scene instance.
struct DatasetPreset {
    std::string name;
    ScenePreset base;
    int scene_count = 1;
};

std::vector<std::string> preset_names();
DatasetPreset get_preset(const std::string& name);

/// Materializes scene_count concrete scenes with seeded placement jitter;
/// deterministic in (preset, master_seed).
std::vector<ScenePreset> dataset_scenes(const DatasetPreset& preset, std::uint64_t master_seed,
                                        const SimConfig& cfg);

/// Scene JSON: either {"preset": name, "seed": u64, "scene_index": k} or
/// explicit box/block fields.
ScenePreset scene_from_json(const std::string& json_text, const SimConfig& cfg);
std::string scene_to_json(const ScenePreset& preset);

}  // namespace pflow
