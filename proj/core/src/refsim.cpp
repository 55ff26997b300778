#include "pflow/refsim.hpp"

#include <algorithm>
#include <cmath>

#include "pflow/error.hpp"
#include "pflow/neighbors.hpp"
#include "pflow/parallel.hpp"
#include "pflow/rng.hpp"
#include "pflow/simulator.hpp"
#include "pflow/sph_kernel.hpp"

namespace pflow {

void sample_box_boundary(const Vec3& lo, const Vec3& hi, float spacing, std::vector<Vec3>& pos,
                         std::vector<Vec3>& normal) {
    pos.clear();
    normal.clear();
    const Vec3 ext = hi - lo;
    // For each axis, two opposing faces; the in-face lattice is offset by
    // half a spacing so faces sharing an edge never emit the same point.
    for (int axis = 0; axis < 3; ++axis) {
        const int ua = (axis + 1) % 3;
        const int va = (axis + 2) % 3;
        const int nu = std::max(1, static_cast<int>(std::ceil(ext[ua] / spacing)));
        const int nv = std::max(1, static_cast<int>(std::ceil(ext[va] / spacing)));
        const float du = ext[ua] / nu;
        const float dv = ext[va] / nv;
        for (int side = 0; side < 2; ++side) {
            Vec3 n{};
            n[axis] = side == 0 ? 1.f : -1.f;  // inward
            for (int iu = 0; iu < nu; ++iu)
                for (int iv = 0; iv < nv; ++iv) {
                    Vec3 p{};
                    p[axis] = side == 0 ? lo[axis] : hi[axis];
                    p[ua] = lo[ua] + (iu + 0.5f) * du;
                    p[va] = lo[va] + (iv + 0.5f) * dv;
                    pos.push_back(p);
                    normal.push_back(n);
                }
        }
    }
}

ParticleSet build_initial_state(const ScenePreset& preset, const SimConfig& cfg) {
    const float spacing = 2.f * cfg.particle_radius_h;
    for (int a = 0; a < 3; ++a) {
        PFLOW_CHECK(preset.block_size[a] > 0.f, "scene: block_size must be positive");
        PFLOW_CHECK(preset.block_min[a] > preset.box_min[a] &&
                        preset.block_min[a] + preset.block_size[a] < preset.box_max[a],
                    "scene: fluid block must sit strictly inside the box");
    }

    ParticleSet p;
    const int nx = std::max(1, static_cast<int>(std::round(preset.block_size.x / spacing)));
    const int ny = std::max(1, static_cast<int>(std::round(preset.block_size.y / spacing)));
    const int nz = std::max(1, static_cast<int>(std::round(preset.block_size.z / spacing)));
    // Deterministic sub-millimeter jitter breaks the perfect lattice
    // symmetry that otherwise stalls the density projection.
    Rng rng(preset.seed ^ 0x5eedf00dULL);
    const float jitter = 0.01f * spacing;
    for (int ix = 0; ix < nx; ++ix)
        for (int iy = 0; iy < ny; ++iy)
            for (int iz = 0; iz < nz; ++iz) {
                Vec3 q{preset.block_min.x + (ix + 0.5f) * spacing,
                       preset.block_min.y + (iy + 0.5f) * spacing,
                       preset.block_min.z + (iz + 0.5f) * spacing};
                q += rng.uniform_vec3(-jitter, jitter);
                p.fluid_pos.push_back(q);
                p.fluid_vel.push_back(preset.initial_velocity);
            }
    sample_box_boundary(preset.box_min, preset.box_max, spacing, p.solid_pos, p.solid_normal);
    return p;
}

ParticleSet pbf_step(const ParticleSet& state, const SimConfig& cfg, const PbfConfig& pbf,
                     const Vec3& gravity) {
    const std::size_t n = state.fluid_pos.size();
    const float support = cfg.support_radius_R;
    const float mass = cfg.particle_mass;
    const float rho0 = cfg.rest_density;
    const float inv_rho0 = 1.f / rho0;

    ParticleSet next = state;
    apply_external_vecs(next.fluid_pos, next.fluid_vel, cfg.dt, gravity);
    std::vector<Vec3>& x = next.fluid_pos;

    std::vector<float> lambda(n);
    std::vector<Vec3> dp(n);

    for (int it = 0; it < pbf.iterations; ++it) {
        const auto ff = build_neighbors<float>(x, x, support);
        const auto fs = build_neighbors<float>(x, state.solid_pos, support);

        parallel_for(n, [&](std::size_t i) {
            // SPH density over fluid and boundary samples.
            float rho = 0.f;
            Vec3 grad_i{};   // (m/rho0) sum_j gradW_ij
            float sum_sq = 0.f;
            for (std::uint32_t p = ff.begin(i); p < ff.end(i); ++p) {
                const float d = ff.distances[p];
                rho += mass * cubic_spline(d, support);
                if (d > 1e-9f) {
                    const Vec3 g =
                        ff.rel_offsets[p] * (-cubic_spline_deriv(d, support) / d * mass * inv_rho0);
                    grad_i += g;
                    sum_sq += dot(g, g);
                }
            }
            for (std::uint32_t p = fs.begin(i); p < fs.end(i); ++p) {
                const float d = fs.distances[p];
                rho += mass * cubic_spline(d, support);
                if (d > 1e-9f) {
                    // Boundary samples shape grad_i C but cannot move, so
                    // they are absent from the movable-gradient sum.
                    grad_i += fs.rel_offsets[p] *
                              (-cubic_spline_deriv(d, support) / d * mass * inv_rho0);
                }
            }
            const float c = rho * inv_rho0 - 1.f;
            // Only compression is projected; a free surface may stay
            // under-dense without attracting particles.
            lambda[i] = c > 0.f ? -c / (dot(grad_i, grad_i) + sum_sq + pbf.cfm_epsilon) : 0.f;
        });

        parallel_for(n, [&](std::size_t i) {
            // dp_i = (m/rho0) sum_j (lambda_i + lambda_j) grad_i W_ij; with
            // rel = x_j - x_i this is rel * ((lambda_i + lambda_j) * w),
            // w = -(dW/dr)/d * m/rho0 > 0, so compression (lambda < 0)
            // pushes away from the neighbor.
            Vec3 delta{};
            for (std::uint32_t p = ff.begin(i); p < ff.end(i); ++p) {
                const std::uint32_t j = ff.indices[p];
                const float d = ff.distances[p];
                if (d <= 1e-9f) continue;
                const float w = -cubic_spline_deriv(d, support) / d * mass * inv_rho0;
                delta += ff.rel_offsets[p] * ((lambda[i] + lambda[j]) * w);
            }
            for (std::uint32_t p = fs.begin(i); p < fs.end(i); ++p) {
                const float d = fs.distances[p];
                if (d <= 1e-9f) continue;
                const float w = -cubic_spline_deriv(d, support) / d * mass * inv_rho0;
                // Static boundary: mirror the particle's own multiplier.
                delta += fs.rel_offsets[p] * (2.f * lambda[i] * w);
            }
            dp[i] = delta;
        });

        for (std::size_t i = 0; i < n; ++i) x[i] += dp[i];
    }

    // Velocities from corrected positions, then XSPH smoothing.
    const float inv_dt = 1.f / cfg.dt;
    for (std::size_t i = 0; i < n; ++i)
        next.fluid_vel[i] = (x[i] - state.fluid_pos[i]) * inv_dt;
    if (pbf.xsph > 0.f && n > 0) {
        const auto ff = build_neighbors<float>(x, x, support);
        std::vector<Vec3> smoothed(n);
        parallel_for(n, [&](std::size_t i) {
            Vec3 acc{};
            for (std::uint32_t p = ff.begin(i); p < ff.end(i); ++p) {
                const std::uint32_t j = ff.indices[p];
                acc += (next.fluid_vel[j] - next.fluid_vel[i]) *
                       (mass * inv_rho0 * cubic_spline(ff.distances[p], support));
            }
            smoothed[i] = next.fluid_vel[i] + acc * pbf.xsph;
        });
        next.fluid_vel = std::move(smoothed);
    }
    return next;
}

FrameSequence generate(const ScenePreset& preset, const SimConfig& cfg, const PbfConfig& pbf) {
    FrameSequence seq;
    seq.dt = cfg.dt;
    seq.scene_id = preset.name;
    ParticleSet state = build_initial_state(preset, cfg);
    seq.solid_pos = state.solid_pos;
    seq.solid_normal = state.solid_normal;
    PFLOW_CHECK(preset.frame_count >= 1, "generate: frame_count must be >= 1");
    seq.frames.reserve(preset.frame_count);
    seq.frames.push_back({state.fluid_pos, state.fluid_vel});
    for (int f = 1; f < preset.frame_count; ++f) {
        state = pbf_step(state, cfg, pbf, preset.gravity);
        seq.frames.push_back({state.fluid_pos, state.fluid_vel});
    }
    return seq;
}

}  // namespace pflow
