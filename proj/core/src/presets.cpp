#include "pflow/presets.hpp"

#include <json.hpp>

#include "pflow/error.hpp"
#include "pflow/rng.hpp"

namespace pflow {
namespace {

using nlohmann::json;

DatasetPreset make_dambreak_small() {
    DatasetPreset d;
    d.name = "dambreak-small";
    d.scene_count = 20;
    d.base.name = d.name;
    d.base.box_min = {0.f, 0.f, 0.f};
    d.base.box_max = {1.f, 0.8f, 0.8f};
    d.base.block_size = {0.5f, 0.5f, 0.5f};  // 10^3 particles at 2h spacing
    d.base.block_min = {0.1f, 0.1f, 0.1f};
    d.base.frame_count = 200;
    return d;
}

DatasetPreset make_dambreak_tiny() {
    DatasetPreset d;
    d.name = "dambreak-tiny";
    d.scene_count = 2;
    d.base.name = d.name;
    d.base.box_min = {0.f, 0.f, 0.f};
    d.base.box_max = {0.6f, 0.5f, 0.5f};
    d.base.block_size = {0.3f, 0.3f, 0.3f};  // 6^3 = 216 particles
    d.base.block_min = {0.1f, 0.1f, 0.1f};
    d.base.frame_count = 40;
    return d;
}

DatasetPreset make_zero_g() {
    DatasetPreset d;
    d.name = "zero-g";
    d.scene_count = 1;
    d.base.name = d.name;
    d.base.box_min = {0.f, 0.f, 0.f};
    d.base.box_max = {0.6f, 0.6f, 0.6f};
    d.base.block_size = {0.2f, 0.2f, 0.2f};
    d.base.block_min = {0.2f, 0.2f, 0.2f};
    d.base.gravity = {0.f, 0.f, 0.f};
    d.base.frame_count = 20;
    return d;
}

Vec3 vec_from(const json& j) {
    return {j.at(0).get<float>(), j.at(1).get<float>(), j.at(2).get<float>()};
}

json vec_to(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

}  // namespace

std::vector<std::string> preset_names() { return {"dambreak-small", "dambreak-tiny", "zero-g"}; }

DatasetPreset get_preset(const std::string& name) {
    if (name == "dambreak-small") return make_dambreak_small();
    if (name == "dambreak-tiny") return make_dambreak_tiny();
    if (name == "zero-g") return make_zero_g();
    throw Error("unknown preset '" + name + "' (available: dambreak-small, dambreak-tiny, zero-g)");
}

std::vector<ScenePreset> dataset_scenes(const DatasetPreset& preset, std::uint64_t master_seed,
                                        const SimConfig& cfg) {
    std::vector<ScenePreset> scenes;
    Rng rng(master_seed ^ 0xabcdef12ULL);
    const float margin = 3.f * cfg.particle_radius_h;
    for (int k = 0; k < preset.scene_count; ++k) {
        ScenePreset s = preset.base;
        s.seed = rng.next_u64();
        char idx[16];
        std::snprintf(idx, sizeof(idx), "%03d", k);
        s.name = preset.name + "-s" + std::to_string(master_seed) + "-" + idx;
        for (int a = 0; a < 3; ++a) {
            const float lo = preset.base.box_min[a] + margin;
            const float hi = preset.base.box_max[a] - preset.base.block_size[a] - margin;
            PFLOW_CHECK(hi >= lo, "preset: block does not fit in the box with margin");
            s.block_min[a] = static_cast<float>(rng.uniform(lo, hi));
        }
        scenes.push_back(std::move(s));
    }
    return scenes;
}

ScenePreset scene_from_json(const std::string& json_text, const SimConfig& cfg) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(std::string("scene: invalid JSON: ") + e.what());
    }
    if (j.contains("preset")) {
        const DatasetPreset d = get_preset(j.at("preset").get<std::string>());
        const std::uint64_t seed = j.value("seed", std::uint64_t{1});
        const int index = j.value("scene_index", 0);
        auto scenes = dataset_scenes(d, seed, cfg);
        PFLOW_CHECK(index >= 0 && index < static_cast<int>(scenes.size()),
                    "scene: scene_index out of range");
        ScenePreset s = scenes[index];
        if (j.contains("frame_count")) s.frame_count = j.at("frame_count").get<int>();
        return s;
    }
    ScenePreset s;
    s.name = j.value("name", std::string("scene"));
    s.box_min = vec_from(j.at("box_min"));
    s.box_max = vec_from(j.at("box_max"));
    s.block_min = vec_from(j.at("block_min"));
    s.block_size = vec_from(j.at("block_size"));
    if (j.contains("initial_velocity")) s.initial_velocity = vec_from(j.at("initial_velocity"));
    if (j.contains("gravity")) s.gravity = vec_from(j.at("gravity"));
    s.seed = j.value("seed", std::uint64_t{1});
    s.frame_count = j.value("frame_count", 200);
    return s;
}

std::string scene_to_json(const ScenePreset& s) {
    json j;
    j["name"] = s.name;
    j["box_min"] = vec_to(s.box_min);
    j["box_max"] = vec_to(s.box_max);
    j["block_min"] = vec_to(s.block_min);
    j["block_size"] = vec_to(s.block_size);
    j["initial_velocity"] = vec_to(s.initial_velocity);
    j["gravity"] = vec_to(s.gravity);
    j["seed"] = s.seed;
    j["frame_count"] = s.frame_count;
    return j.dump(2);
}

}  // namespace pflow
