#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pflow/types.hpp"

namespace pflow {

/// Position-based-fluids solver knobs. Kept in config rather than code so
/// data generation presets can tune them.
struct PbfConfig {
    int iterations = 4;        // Jacobi passes of the density projection
    float cfm_epsilon = 100.f; // constraint-force-mixing relaxation
    float xsph = 0.01f;        // velocity blend coefficient
};

/// A data-generation scene: a fluid block inside a static box.
struct ScenePreset {
    std::string name = "scene";
    Vec3 box_min{0.f, 0.f, 0.f};
    Vec3 box_max{1.f, 0.8f, 0.8f};
    Vec3 block_size{0.5f, 0.5f, 0.5f};
    Vec3 block_min{0.1f, 0.1f, 0.1f};
    Vec3 initial_velocity{0.f, 0.f, 0.f};
    Vec3 gravity{0.f, -9.81f, 0.f};
    std::uint64_t seed = 1;
    int frame_count = 200;
};

/// Samples box faces on a half-offset lattice with the given spacing;
/// normals point into the box. Face interiors never duplicate edge points.
void sample_box_boundary(const Vec3& box_min, const Vec3& box_max, float spacing,
                         std::vector<Vec3>& pos, std::vector<Vec3>& normal);

/// Lattice-sampled fluid block (spacing 2h) plus the box boundary.
/// The block must sit strictly inside the box or this faults.
ParticleSet build_initial_state(const ScenePreset& preset, const SimConfig& cfg);

/// One PBF step: external forces, `iterations` Jacobi passes of the
/// density-constraint projection (cubic-spline density with support R,
/// solid particles contribute), position-derived velocity update, XSPH
/// velocity smoothing.
ParticleSet pbf_step(const ParticleSet& state, const SimConfig& cfg, const PbfConfig& pbf,
                     const Vec3& gravity);

/// Runs the preset: frame 0 is the initial state, followed by
/// frame_count - 1 PBF steps. Deterministic per seed.
FrameSequence generate(const ScenePreset& preset, const SimConfig& cfg, const PbfConfig& pbf);

}  // namespace pflow
