#include "pflow/simulator.hpp"

#include "pflow/network.hpp"

namespace pflow {

SimState apply_external(const SimState& state, const SimConfig& cfg) {
    SimState out = state;
    apply_external_vecs(out.particles.fluid_pos, out.particles.fluid_vel, cfg.dt, cfg.gravity);
    return out;
}

SimState step(const SimState& state, const ModelParams& model, const SimConfig& cfg) {
    SimState star = apply_external(state, cfg);
    auto fwd = net_forward(model, make_view(star.particles));

    SimState next = std::move(star);
    const std::size_t n = next.particles.fluid_pos.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 dx{fwd.dx.at(i, 0), fwd.dx.at(i, 1), fwd.dx.at(i, 2)};
        if (!is_finite(dx))
            throw Error("step: non-finite network displacement for particle " +
                        std::to_string(i) + " at step " + std::to_string(state.step_index));
        next.particles.fluid_pos[i] += dx;
        // Alg. velocity recomputation: v = (x_next - x_prev) / dt, exact.
        next.particles.fluid_vel[i] =
            (next.particles.fluid_pos[i] - state.particles.fluid_pos[i]) * (1.f / cfg.dt);
    }
    next.step_index = state.step_index + 1;
    return next;
}

FrameSequence rollout(const SimState& initial, const ModelParams& model, const SimConfig& cfg,
                      int n_frames) {
    PFLOW_CHECK(n_frames >= 1, "rollout: n_frames must be >= 1");
    FrameSequence seq;
    seq.dt = cfg.dt;
    seq.solid_pos = initial.particles.solid_pos;
    seq.solid_normal = initial.particles.solid_normal;
    seq.frames.reserve(n_frames);
    SimState cur = initial;
    for (int k = 0; k < n_frames; ++k) {
        try {
            cur = step(cur, model, cfg);
        } catch (const Error& e) {
            throw Error("rollout: frame " + std::to_string(k) + ": " + e.what());
        }
        seq.frames.push_back({cur.particles.fluid_pos, cur.particles.fluid_vel});
    }
    return seq;
}

}  // namespace pflow
