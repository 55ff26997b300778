#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pflow/vec3.hpp"

namespace pflow {

/// Fluid particles (positions + velocities) plus the static solid boundary
/// (positions + outward unit normals). Immutable value data once built.
struct ParticleSet {
    std::vector<Vec3> fluid_pos;
    std::vector<Vec3> fluid_vel;
    std::vector<Vec3> solid_pos;
    std::vector<Vec3> solid_normal;

    std::size_t fluid_count() const { return fluid_pos.size(); }
    std::size_t solid_count() const { return solid_pos.size(); }
};

/// Non-owning view of one particle state; the scalar type is templated so
/// the double-precision gradient-check path can reuse all the machinery.
template <class Real>
struct StateViewT {
    std::span<const Vec3T<Real>> fluid_pos;
    std::span<const Vec3T<Real>> fluid_vel;
    std::span<const Vec3T<Real>> solid_pos;
    std::span<const Vec3T<Real>> solid_normal;
};

using StateView = StateViewT<float>;

inline StateView make_view(const ParticleSet& p) {
    return {p.fluid_pos, p.fluid_vel, p.solid_pos, p.solid_normal};
}

struct KernelDims {
    int nx = 4, ny = 4, nz = 4;
    int voxels() const { return nx * ny * nz; }
    friend bool operator==(const KernelDims&, const KernelDims&) = default;
};

/// Simulation-wide physical configuration. Defaults: 50 Hz stepping,
/// gravity along -y, h = 0.025 m particle radius with support R = 4.5 h,
/// rest density 1000 kg/m^3 and per-particle mass for a (2h)^3 cube.
struct SimConfig {
    float dt = 0.02f;
    Vec3 gravity{0.f, -9.81f, 0.f};
    float particle_radius_h = 0.025f;
    float support_radius_R = 4.5f * 0.025f;
    KernelDims kernel_resolution;
    float rest_density = 1000.f;
    float particle_mass = 1000.f * (0.05f * 0.05f * 0.05f);

    static SimConfig with_radius(float h) {
        SimConfig c;
        c.particle_radius_h = h;
        c.support_radius_R = 4.5f * h;
        float spacing = 2.f * h;
        c.particle_mass = c.rest_density * spacing * spacing * spacing;
        return c;
    }
};

/// One fluid state of a sequence; the solid boundary is stored once per
/// sequence since it never changes within a scene.
struct FluidFrame {
    std::vector<Vec3> pos;
    std::vector<Vec3> vel;
};

struct FrameSequence {
    std::vector<Vec3> solid_pos;
    std::vector<Vec3> solid_normal;
    std::vector<FluidFrame> frames;
    float dt = 0.02f;
    std::string scene_id;

    std::size_t frame_count() const { return frames.size(); }
    std::size_t fluid_count() const { return frames.empty() ? 0 : frames[0].pos.size(); }

    ParticleSet state_at(std::size_t t) const;
    StateView view_at(std::size_t t) const {
        return {frames[t].pos, frames[t].vel, solid_pos, solid_normal};
    }
};

/// A failed invariant, reported as data. `where` names the field, with an
/// element index when one applies.
struct Violation {
    std::string where;
    std::int64_t index = -1;  // -1 when the violation is not per-element
    std::string predicate;

    std::string str() const;
};

/// Checks every ParticleSet and SimConfig invariant; empty result means the
/// input is well formed. Pure and deterministic.
std::vector<Violation> validate(const ParticleSet& scene, const SimConfig& cfg);

/// Sequence-level invariants (constant fluid/solid counts across frames)
/// plus per-frame checks on the first and last frame.
std::vector<Violation> validate(const FrameSequence& seq, const SimConfig& cfg);

}  // namespace pflow
