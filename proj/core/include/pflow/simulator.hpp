#pragma once

#include <vector>

#include "pflow/model_params.hpp"
#include "pflow/types.hpp"

namespace pflow {

struct SimState {
    ParticleSet particles;
    long step_index = 0;
};

/// Semi-implicit Euler external-force integration:
/// v* = v + dt g, x* = x + dt v*. Shared by inference, training, and the
/// reference solver.
template <class Real>
void apply_external_vecs(std::vector<Vec3T<Real>>& x, std::vector<Vec3T<Real>>& v, Real dt,
                         const Vec3T<Real>& g) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        v[i] += g * dt;
        x[i] += v[i] * dt;
    }
}

SimState apply_external(const SimState& state, const SimConfig& cfg);

/// One learned simulation step: external forces, network displacement,
/// then the velocity recomputation v = (x_next - x_prev) / dt. Throws on a
/// non-finite network output, naming the step index.
SimState step(const SimState& state, const ModelParams& model, const SimConfig& cfg);

/// n_frames successive steps; frame k of the result is the state after
/// k+1 steps (the initial state is not included).
FrameSequence rollout(const SimState& initial, const ModelParams& model, const SimConfig& cfg,
                      int n_frames);

}  // namespace pflow
