#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pflow/model_params.hpp"
#include "pflow/network.hpp"
#include "pflow/neighbors.hpp"
#include "pflow/types.hpp"

namespace pflow {

// ---------------------------------------------------------------------------
// Loss pieces
// ---------------------------------------------------------------------------

/// Neighbor-count emphasis weight phi_i = exp(-|N(x_i)| / c); counts are
/// fluid-fluid at the support radius and include the particle itself.
template <class Real>
std::vector<Real> neighbor_weight(std::span<const Vec3T<Real>> fluid_pos, Real support_radius,
                                  Real c) {
    const auto nl = build_neighbors(fluid_pos, fluid_pos, support_radius);
    std::vector<Real> phi(fluid_pos.size());
    for (std::size_t i = 0; i < phi.size(); ++i)
        phi[i] = std::exp(-static_cast<Real>(nl.count(i)) / c);
    return phi;
}

/// Smoothed gamma-norm position loss
///   L = sum_i phi_i (|pred_i - gt_i|^2 + eps)^(gamma/2)
/// with its analytic gradient w.r.t. the predictions. The epsilon term
/// keeps the gradient finite at zero error for gamma < 1.
template <class Real>
Real loss_step(std::span<const Vec3T<Real>> pred, std::span<const Vec3T<Real>> gt,
               std::span<const Real> phi, Real gamma, Real eps,
               std::vector<Vec3T<Real>>* grad) {
    PFLOW_CHECK(pred.size() == gt.size() && pred.size() == phi.size(),
                "loss_step: length mismatch");
    if (grad) grad->assign(pred.size(), Vec3T<Real>{});
    Real loss = Real(0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const Vec3T<Real> d = pred[i] - gt[i];
        const Real e2 = dot(d, d) + eps;
        loss += phi[i] * std::pow(e2, gamma / Real(2));
        if (grad) (*grad)[i] = d * (phi[i] * gamma * std::pow(e2, gamma / Real(2) - Real(1)));
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Two-step rollout loss
// ---------------------------------------------------------------------------

template <class Real>
struct StepPhysicsT {
    Real dt;
    Vec3T<Real> gravity;
};

template <class Real>
StepPhysicsT<Real> step_physics(const SimConfig& cfg) {
    return {static_cast<Real>(cfg.dt), vec_cast<Real>(cfg.gravity)};
}

/// One training sample: ground-truth frames t, t+1, t+2 of one scene.
template <class Real>
struct TrainSampleT {
    std::vector<Vec3T<Real>> x0, v0;
    std::vector<Vec3T<Real>> x1_gt, x2_gt;
    std::vector<Vec3T<Real>> solid_pos, solid_normal;
};

template <class Real>
struct LossConfigT {
    Real gamma = Real(0.5);
    Real neighbor_c = Real(40);
    Real epsilon = Real(1e-9);
};

template <class Real>
struct TwoStepResultT {
    Real loss = Real(0);
    Real loss_t1 = Real(0);
    Real loss_t2 = Real(0);
    ModelParamsT<Real> grads;  // allocated only when gradients requested
};

/// L = L(t+1) + L(t+2) where the second step re-enters the simulation from
/// the *predicted* state: external forces are applied to (x^{t+1}, v^{t+1})
/// and the network is evaluated again. Gradients flow through both steps,
/// including the second step's dependence on the first prediction via its
/// input positions, velocities, and convolution geometry.
/// Step-1 inputs never depend on the parameters, so repeated evaluations at
/// the same sample (finite differencing) can share this cache.
template <class Real>
struct StepOneCacheT {
    NetGeometryT<Real> geometry;
    std::vector<Real> phi;
};

template <class Real>
StepOneCacheT<Real> build_step_one_cache(const ModelParamsT<Real>& params,
                                         const StepPhysicsT<Real>& phys,
                                         const TrainSampleT<Real>& s,
                                         const LossConfigT<Real>& lc) {
    const std::size_t n = s.x0.size();
    std::vector<Vec3T<Real>> v1s(n), x1s(n);
    for (std::size_t i = 0; i < n; ++i) {
        v1s[i] = s.v0[i] + phys.gravity * phys.dt;
        x1s[i] = s.x0[i] + v1s[i] * phys.dt;
    }
    StateViewT<Real> state1{x1s, v1s, s.solid_pos, s.solid_normal};
    StepOneCacheT<Real> cache;
    cache.geometry = build_net_geometry(params.config, state1);
    cache.phi = neighbor_weight<Real>(x1s, static_cast<Real>(params.config.support_radius),
                                      lc.neighbor_c);
    return cache;
}

template <class Real>
TwoStepResultT<Real> two_step_loss(const ModelParamsT<Real>& params,
                                   const StepPhysicsT<Real>& phys,
                                   const TrainSampleT<Real>& s, const LossConfigT<Real>& lc,
                                   bool want_grads,
                                   const StepOneCacheT<Real>* cache = nullptr) {
    const std::size_t n = s.x0.size();
    PFLOW_CHECK(s.v0.size() == n && s.x1_gt.size() == n && s.x2_gt.size() == n,
                "two_step_loss: frame length mismatch");
    const Real radius = static_cast<Real>(params.config.support_radius);
    const Real inv_dt = Real(1) / phys.dt;

    // Step 1: external forces from the ground-truth state.
    std::vector<Vec3T<Real>> v1s(n), x1s(n);
    for (std::size_t i = 0; i < n; ++i) {
        v1s[i] = s.v0[i] + phys.gravity * phys.dt;
        x1s[i] = s.x0[i] + v1s[i] * phys.dt;
    }
    StateViewT<Real> state1{x1s, v1s, s.solid_pos, s.solid_normal};
    auto f1 = net_forward(params, state1, cache ? &cache->geometry : nullptr);
    std::vector<Vec3T<Real>> x1(n);
    for (std::size_t i = 0; i < n; ++i)
        x1[i] = x1s[i] + Vec3T<Real>{f1.dx.at(i, 0), f1.dx.at(i, 1), f1.dx.at(i, 2)};

    const std::vector<Real> phi1 =
        cache ? cache->phi : neighbor_weight<Real>(x1s, radius, lc.neighbor_c);
    std::vector<Vec3T<Real>> g_x1_loss;
    TwoStepResultT<Real> res;
    res.loss_t1 = loss_step<Real>(x1, s.x1_gt, phi1, lc.gamma, lc.epsilon,
                                  want_grads ? &g_x1_loss : nullptr);

    // Step 2: re-enter the simulation from the prediction.
    std::vector<Vec3T<Real>> v1(n), v2s(n), x2s(n);
    for (std::size_t i = 0; i < n; ++i) {
        v1[i] = (x1[i] - s.x0[i]) * inv_dt;
        v2s[i] = v1[i] + phys.gravity * phys.dt;
        x2s[i] = x1[i] + v2s[i] * phys.dt;
    }
    StateViewT<Real> state2{x2s, v2s, s.solid_pos, s.solid_normal};
    auto f2 = net_forward(params, state2);
    std::vector<Vec3T<Real>> x2(n);
    for (std::size_t i = 0; i < n; ++i)
        x2[i] = x2s[i] + Vec3T<Real>{f2.dx.at(i, 0), f2.dx.at(i, 1), f2.dx.at(i, 2)};

    const std::vector<Real> phi2 = neighbor_weight<Real>(x2s, radius, lc.neighbor_c);
    std::vector<Vec3T<Real>> g_x2_loss;
    res.loss_t2 = loss_step<Real>(x2, s.x2_gt, phi2, lc.gamma, lc.epsilon,
                                  want_grads ? &g_x2_loss : nullptr);
    res.loss = res.loss_t1 + res.loss_t2;
    if (!want_grads) return res;

    // Reverse pass. Step 2 first: dL/dx2 flows into the network output and,
    // through x2 = x2s + dx2, into the step-2 input state.
    MatT<Real> d_dx2(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
        d_dx2.at(i, 0) = g_x2_loss[i].x;
        d_dx2.at(i, 1) = g_x2_loss[i].y;
        d_dx2.at(i, 2) = g_x2_loss[i].z;
    }
    NetGradsT<Real> b2 = net_backward(params, f2.trace, d_dx2, /*want_positions=*/true);

    // d/dx2s: identity from x2 = x2s + dx2 plus the network's own
    // sensitivity to its input positions.
    std::vector<Vec3T<Real>> d_x2s(n);
    for (std::size_t i = 0; i < n; ++i) d_x2s[i] = g_x2_loss[i] + b2.d_fluid_pos[i];
    // d/dv2s: network input velocity channels plus x2s = x1 + dt * v2s.
    // d/dx1 accumulates the step-1 loss, the shift into x2s, and v2s's
    // dependence v2s = (x1 - x0)/dt + dt * g.
    std::vector<Vec3T<Real>> d_x1(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3T<Real> d_v2s{b2.d_fluid_feats.at(i, 1) + phys.dt * d_x2s[i].x,
                                b2.d_fluid_feats.at(i, 2) + phys.dt * d_x2s[i].y,
                                b2.d_fluid_feats.at(i, 3) + phys.dt * d_x2s[i].z};
        d_x1[i] = g_x1_loss[i] + d_x2s[i] + d_v2s * inv_dt;
    }

    MatT<Real> d_dx1(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
        d_dx1.at(i, 0) = d_x1[i].x;
        d_dx1.at(i, 1) = d_x1[i].y;
        d_dx1.at(i, 2) = d_x1[i].z;
    }
    NetGradsT<Real> b1 = net_backward(params, f1.trace, d_dx1, /*want_positions=*/false);

    res.grads = std::move(b1.params);
    // Accumulate the step-2 parameter gradients.
    std::vector<std::span<Real>> dst;
    visit_tensors(res.grads, [&](TensorRef<Real> t) { dst.push_back(t.data); });
    std::size_t k = 0;
    visit_tensors(b2.params, [&](TensorRef<Real> t) {
        for (std::size_t i = 0; i < t.data.size(); ++i) dst[k][i] += t.data[i];
        ++k;
    });
    return res;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <class Real>
struct AdamStateT {
    ModelParamsT<Real> m, v;
    long step = 0;
    Real beta1 = Real(0.9), beta2 = Real(0.999), eps = Real(1e-8);

    static AdamStateT zeros(const ModelConfig& cfg) {
        AdamStateT s;
        s.m = ModelParamsT<Real>::zeros(cfg);
        s.v = ModelParamsT<Real>::zeros(cfg);
        return s;
    }
};

using AdamState = AdamStateT<float>;

/// Standard Adam update with bias correction.
template <class Real>
void adam_step(ModelParamsT<Real>& params, const ModelParamsT<Real>& grads,
               AdamStateT<Real>& st, Real lr) {
    st.step += 1;
    const Real bc1 = Real(1) - std::pow(st.beta1, static_cast<Real>(st.step));
    const Real bc2 = Real(1) - std::pow(st.beta2, static_cast<Real>(st.step));

    std::vector<std::span<Real>> ps, gs, ms, vs;
    visit_tensors(params, [&](TensorRef<Real> t) { ps.push_back(t.data); });
    visit_tensors(const_cast<ModelParamsT<Real>&>(grads),
                  [&](TensorRef<Real> t) { gs.push_back(t.data); });
    visit_tensors(st.m, [&](TensorRef<Real> t) { ms.push_back(t.data); });
    visit_tensors(st.v, [&](TensorRef<Real> t) { vs.push_back(t.data); });
    PFLOW_CHECK(ps.size() == gs.size() && ps.size() == ms.size() && ps.size() == vs.size(),
                "adam_step: tensor inventory mismatch");
    for (std::size_t t = 0; t < ps.size(); ++t) {
        PFLOW_CHECK(ps[t].size() == gs[t].size(), "adam_step: tensor shape mismatch");
        for (std::size_t i = 0; i < ps[t].size(); ++i) {
            const Real g = gs[t][i];
            Real& m = ms[t][i];
            Real& v = vs[t][i];
            m = st.beta1 * m + (Real(1) - st.beta1) * g;
            v = st.beta2 * v + (Real(1) - st.beta2) * g * g;
            const Real mh = m / bc1;
            const Real vh = v / bc2;
            ps[t][i] -= lr * mh / (std::sqrt(vh) + st.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    double lr0 = 0.002;
    double lr_gamma = 0.5;
    std::vector<long> halving_steps{10000, 20000, 30000, 40000, 50000};
    long total_iters = 50000;
    int batch_size = 16;
    double gamma = 0.5;
    double neighbor_c = 40.0;
    double loss_epsilon = 1e-9;
    std::uint64_t seed = 1;
    int log_every = 10;

    /// Paper-scale preset: the values above.
    static TrainConfig paper_scale() { return {}; }

    /// Desk-scale preset: 2000 iterations at batch 4 with the halving
    /// schedule shrunk proportionally.
    static TrainConfig desk_scale() {
        TrainConfig c;
        c.total_iters = 2000;
        c.batch_size = 4;
        c.halving_steps = {400, 800, 1200, 1600, 2000};
        return c;
    }
};

/// Learning rate as a pure function of the iteration index.
inline double lr_at(const TrainConfig& cfg, long iter) {
    double lr = cfg.lr0;
    for (long s : cfg.halving_steps)
        if (iter >= s) lr *= cfg.lr_gamma;
    return lr;
}

struct LossRow {
    long iter;
    double loss;
    double lr;
};

struct TrainResult {
    ModelParams params;
    AdamState opt;
    std::vector<LossRow> curve;
};

/// Trains on (t, t+1, t+2) triples sampled uniformly across all scenes.
/// Batch gradient is the mean over samples; samples may evaluate in
/// parallel but are reduced in index order.
TrainResult train(const std::vector<FrameSequence>& dataset, const SimConfig& sim,
                  const ModelConfig& model_cfg, const TrainConfig& cfg);

std::string loss_curve_csv(const std::vector<LossRow>& rows);

}  // namespace pflow
