#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <vector>

#include "pflow/contconv.hpp"
#include "pflow/feature_matrix.hpp"
#include "pflow/model_params.hpp"
#include "pflow/types.hpp"

namespace pflow {

// ---------------------------------------------------------------------------
// Input features
// ---------------------------------------------------------------------------

/// Fluid rows are [1, vx, vy, vz]; solid rows are [1, nx, ny, nz]. The
/// constant-one channel lets the convolutions measure local density.
template <class Real>
void input_features(const StateViewT<Real>& state, MatT<Real>& fluid, MatT<Real>& solid) {
    fluid = MatT<Real>(state.fluid_pos.size(), 4);
    for (std::size_t i = 0; i < state.fluid_pos.size(); ++i) {
        Real* r = fluid.row(i);
        r[0] = Real(1);
        r[1] = state.fluid_vel[i].x;
        r[2] = state.fluid_vel[i].y;
        r[3] = state.fluid_vel[i].z;
    }
    solid = MatT<Real>(state.solid_pos.size(), 4);
    for (std::size_t i = 0; i < state.solid_pos.size(); ++i) {
        Real* r = solid.row(i);
        r[0] = Real(1);
        r[1] = state.solid_normal[i].x;
        r[2] = state.solid_normal[i].y;
        r[3] = state.solid_normal[i].z;
    }
}

// ---------------------------------------------------------------------------
// Small shared pieces
// ---------------------------------------------------------------------------

/// Fluid-position gradient accumulator threaded through the backward pass.
/// Solid particles are static, so their position gradients are dropped.
template <class Real>
struct PosGradsT {
    bool want = false;
    std::vector<Vec3T<Real>> fluid;

    void add_conv(const std::vector<Vec3T<Real>>& d_query,
                  const std::vector<Vec3T<Real>>& d_point, bool points_are_fluid) {
        if (!want) return;
        for (std::size_t i = 0; i < d_query.size(); ++i) fluid[i] += d_query[i];
        if (points_are_fluid)
            for (std::size_t i = 0; i < d_point.size(); ++i) fluid[i] += d_point[i];
    }
};

template <class Real>
void dense_forward(const DenseT<Real>& d, const MatT<Real>& x, MatT<Real>& y) {
    const int in = static_cast<int>(d.w.rows), out = d.w.cols;
    PFLOW_CHECK(x.cols == in, "dense: input width mismatch");
    y = MatT<Real>(x.rows, out);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const Real* xr = x.row(r);
        Real* yr = y.row(r);
        for (int o = 0; o < out; ++o) yr[o] = d.b[o];
        for (int i = 0; i < in; ++i) {
            const Real xi = xr[i];
            const Real* wrow = d.w.row(i);
            for (int o = 0; o < out; ++o) yr[o] += xi * wrow[o];
        }
    }
}

/// y = x W + b reverse pass; accumulates into g and dx.
template <class Real>
void dense_backward(const DenseT<Real>& d, DenseT<Real>& g, const MatT<Real>& x,
                    const MatT<Real>& dy, MatT<Real>& dx) {
    const int in = static_cast<int>(d.w.rows), out = d.w.cols;
    for (std::size_t r = 0; r < x.rows; ++r) {
        const Real* xr = x.row(r);
        const Real* dyr = dy.row(r);
        Real* dxr = dx.row(r);
        for (int o = 0; o < out; ++o) g.b[o] += dyr[o];
        for (int i = 0; i < in; ++i) {
            Real* gw = g.w.row(i);
            const Real* wrow = d.w.row(i);
            Real acc = Real(0);
            for (int o = 0; o < out; ++o) {
                gw[o] += xr[i] * dyr[o];
                acc += wrow[o] * dyr[o];
            }
            dxr[i] += acc;
        }
    }
}

template <class Real>
MatT<Real> relu(const MatT<Real>& x) {
    MatT<Real> y = x;
    for (auto& v : y.v)
        if (v < Real(0)) v = Real(0);
    return y;
}

/// dx += dy masked by (pre > 0).
template <class Real>
void relu_backward(const MatT<Real>& pre, const MatT<Real>& dy, MatT<Real>& dx) {
    for (std::size_t i = 0; i < pre.v.size(); ++i)
        if (pre.v[i] > Real(0)) dx.v[i] += dy.v[i];
}

/// out = w (x) p + (1-w) (x) q with a per-row scalar weight; every output
/// element lies between the corresponding elements of p and q.
template <class Real>
MatT<Real> blend(const std::vector<Real>& w, const MatT<Real>& p, const MatT<Real>& q) {
    PFLOW_CHECK(p.rows == q.rows && p.cols == q.cols && w.size() == p.rows,
                "blend: shape mismatch");
    MatT<Real> out(p.rows, p.cols);
    for (std::size_t r = 0; r < p.rows; ++r) {
        const Real wr = w[r];
        const Real* pr = p.row(r);
        const Real* qr = q.row(r);
        Real* o = out.row(r);
        for (int c = 0; c < p.cols; ++c) o[c] = wr * pr[c] + (Real(1) - wr) * qr[c];
    }
    return out;
}

template <class Real>
void blend_backward(const std::vector<Real>& w, const MatT<Real>& p, const MatT<Real>& q,
                    const MatT<Real>& d_out, MatT<Real>& d_p, MatT<Real>& d_q,
                    std::vector<Real>& d_w) {
    for (std::size_t r = 0; r < p.rows; ++r) {
        const Real wr = w[r];
        const Real* pr = p.row(r);
        const Real* qr = q.row(r);
        const Real* dor = d_out.row(r);
        Real* dpr = d_p.row(r);
        Real* dqr = d_q.row(r);
        Real dw = Real(0);
        for (int c = 0; c < p.cols; ++c) {
            dpr[c] += wr * dor[c];
            dqr[c] += (Real(1) - wr) * dor[c];
            dw += dor[c] * (pr[c] - qr[c]);
        }
        d_w[r] += dw;
    }
}

// ---------------------------------------------------------------------------
// Particle Selector
// ---------------------------------------------------------------------------

template <class Real>
struct SelectorTraceT {
    ConvTapeT<Real> t1, t2;
    MatT<Real> c2;
    std::vector<Real> w;
};

/// w = sigmoid(dense(cconv(cconv(x)))): two convolution layers, then a
/// per-particle scalar projection squashed to (0,1).
template <class Real>
std::vector<Real> selector_forward(const SelectorParamsT<Real>& sp,
                                   std::shared_ptr<const ConvGeometryT<Real>> geom,
                                   const MatT<Real>& x, SelectorTraceT<Real>& tr) {
    auto r1 = cconv_forward(geom, x, sp.conv1);
    auto r2 = cconv_forward(geom, r1.out, sp.conv2);
    const std::size_t n = x.rows;
    const int cs = sp.conv2.cout;
    tr.w.assign(n, Real(0));
    for (std::size_t i = 0; i < n; ++i) {
        const Real* c2r = r2.out.row(i);
        Real z = sp.dense_b[0];
        for (int c = 0; c < cs; ++c) z += c2r[c] * sp.dense_w[c];
        tr.w[i] = Real(1) / (Real(1) + std::exp(-z));
    }
    tr.t1 = std::move(r1.tape);
    tr.t2 = std::move(r2.tape);
    tr.c2 = std::move(r2.out);
    return tr.w;
}

/// Returns the gradient w.r.t. the selector input.
template <class Real>
MatT<Real> selector_backward(const SelectorParamsT<Real>& sp, SelectorParamsT<Real>& g,
                             const SelectorTraceT<Real>& tr, const std::vector<Real>& d_w,
                             PosGradsT<Real>& pos) {
    const std::size_t n = tr.w.size();
    const int cs = sp.conv2.cout;
    MatT<Real> d_c2(n, cs);
    for (std::size_t i = 0; i < n; ++i) {
        const Real w = tr.w[i];
        const Real gz = d_w[i] * w * (Real(1) - w);
        g.dense_b[0] += gz;
        const Real* c2r = tr.c2.row(i);
        Real* dc2r = d_c2.row(i);
        for (int c = 0; c < cs; ++c) {
            g.dense_w[c] += c2r[c] * gz;
            dc2r[c] = gz * sp.dense_w[c];
        }
    }
    auto g2 = cconv_backward(tr.t2, sp.conv2, d_c2, pos.want);
    for (std::size_t i = 0; i < g.conv2.w.size(); ++i) g.conv2.w[i] += g2.d_kernel.w[i];
    pos.add_conv(g2.d_query_pos, g2.d_point_pos, true);
    auto g1 = cconv_backward(tr.t1, sp.conv1, g2.d_feats, pos.want);
    for (std::size_t i = 0; i < g.conv1.w.size(); ++i) g.conv1.w[i] += g1.d_kernel.w[i];
    pos.add_conv(g1.d_query_pos, g1.d_point_pos, true);
    return std::move(g1.d_feats);
}

// ---------------------------------------------------------------------------
// Attention-based feature fusion
// ---------------------------------------------------------------------------

template <class Real>
struct FusionTraceT {
    SelectorTraceT<Real> sel;
    MatT<Real> f_main, f_cons;
};

/// f_fusion = w (x) f_cons + (1-w) (x) f_main, with w from the selector on
/// the channel concatenation of both pathway features.
template <class Real>
MatT<Real> fuse_forward(const SelectorParamsT<Real>& sp,
                        std::shared_ptr<const ConvGeometryT<Real>> geom,
                        const MatT<Real>& f_main, const MatT<Real>& f_cons,
                        FusionTraceT<Real>& tr) {
    PFLOW_CHECK(f_main.rows == f_cons.rows && f_main.cols == f_cons.cols,
                "fuse: operand shape mismatch");
    const MatT<Real> cat = hcat(f_main, f_cons);
    selector_forward(sp, std::move(geom), cat, tr.sel);
    tr.f_main = f_main;
    tr.f_cons = f_cons;
    return blend(tr.sel.w, f_cons, f_main);
}

template <class Real>
struct FuseGradsT {
    MatT<Real> d_main, d_cons;
};

template <class Real>
FuseGradsT<Real> fuse_backward(const SelectorParamsT<Real>& sp, SelectorParamsT<Real>& g,
                               const FusionTraceT<Real>& tr, const MatT<Real>& d_out,
                               PosGradsT<Real>& pos) {
    const std::size_t n = tr.f_main.rows;
    const int c = tr.f_main.cols;
    FuseGradsT<Real> out{MatT<Real>(n, c), MatT<Real>(n, c)};
    std::vector<Real> d_w(n, Real(0));
    blend_backward(tr.sel.w, tr.f_cons, tr.f_main, d_out, out.d_cons, out.d_main, d_w);
    MatT<Real> d_cat = selector_backward(sp, g, tr.sel, d_w, pos);
    for (std::size_t r = 0; r < n; ++r) {
        const Real* dc = d_cat.row(r);
        Real* dm = out.d_main.row(r);
        Real* dn = out.d_cons.row(r);
        for (int k = 0; k < c; ++k) {
            dm[k] += dc[k];
            dn[k] += dc[c + k];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Type-aware input stage
// ---------------------------------------------------------------------------

template <class Real>
struct TaimTraceT {
    ConvTapeT<Real> lift_fl, lift_so;
    MatT<Real> ffl, fso;
    SelectorTraceT<Real> s1, s2;
    MatT<Real> f1;
};

/// Lifts fluid and solid features to the hidden width (solid features are
/// convolved from solid points onto fluid queries), then blends them with
/// two stacked selectors. Both blends weight the fluid field by w.
template <class Real>
MatT<Real> taim_forward(const TaimParamsT<Real>& tp,
                        std::shared_ptr<const ConvGeometryT<Real>> gff,
                        std::shared_ptr<const ConvGeometryT<Real>> gsf,
                        const MatT<Real>& fluid_feats, const MatT<Real>& solid_feats,
                        TaimTraceT<Real>& tr) {
    if (tp.antisymmetric) {
        auto rf = ascc_forward(gff, fluid_feats, tp.lift_fluid_a);
        auto rs = ascc_forward_cross(gsf, solid_feats, tp.lift_solid_a);
        tr.ffl = std::move(rf.out);
        tr.fso = std::move(rs.out);
        tr.lift_fl = std::move(rf.tape);
        tr.lift_so = std::move(rs.tape);
    } else {
        auto rf = cconv_forward(gff, fluid_feats, tp.lift_fluid_c);
        auto rs = cconv_forward(gsf, solid_feats, tp.lift_solid_c);
        tr.ffl = std::move(rf.out);
        tr.fso = std::move(rs.out);
        tr.lift_fl = std::move(rf.tape);
        tr.lift_so = std::move(rs.tape);
    }
    const std::vector<Real> w1 = selector_forward(tp.sel1, gff, hcat(tr.ffl, tr.fso), tr.s1);
    tr.f1 = blend(w1, tr.ffl, tr.fso);
    const std::vector<Real> w2 = selector_forward(tp.sel2, gff, tr.f1, tr.s2);
    return blend(w2, tr.ffl, tr.fso);
}

/// Returns d(fluid input features); solid features are static and their
/// gradient is discarded.
template <class Real>
MatT<Real> taim_backward(const TaimParamsT<Real>& tp, TaimParamsT<Real>& g,
                         const TaimTraceT<Real>& tr, const MatT<Real>& d_out,
                         PosGradsT<Real>& pos) {
    const std::size_t n = tr.ffl.rows;
    const int c = tr.ffl.cols;
    MatT<Real> d_ffl(n, c), d_fso(n, c);

    // Second blend (w2 weights the fluid field).
    std::vector<Real> d_w2(n, Real(0));
    blend_backward(tr.s2.w, tr.ffl, tr.fso, d_out, d_ffl, d_fso, d_w2);
    MatT<Real> d_f1 = selector_backward(tp.sel2, g.sel2, tr.s2, d_w2, pos);

    // First blend.
    std::vector<Real> d_w1(n, Real(0));
    blend_backward(tr.s1.w, tr.ffl, tr.fso, d_f1, d_ffl, d_fso, d_w1);
    MatT<Real> d_cat = selector_backward(tp.sel1, g.sel1, tr.s1, d_w1, pos);
    for (std::size_t r = 0; r < n; ++r) {
        const Real* dc = d_cat.row(r);
        Real* a = d_ffl.row(r);
        Real* b = d_fso.row(r);
        for (int k = 0; k < c; ++k) {
            a[k] += dc[k];
            b[k] += dc[c + k];
        }
    }

    // Lift convolutions.
    MatT<Real> d_fluid_feats;
    if (tp.antisymmetric) {
        auto gf = ascc_backward(tr.lift_fl, tp.lift_fluid_a, d_ffl, pos.want);
        for (std::size_t i = 0; i < g.lift_fluid_a.h.size(); ++i)
            g.lift_fluid_a.h[i] += gf.d_half[i];
        pos.add_conv(gf.d_query_pos, gf.d_point_pos, true);
        auto gs = ascc_backward(tr.lift_so, tp.lift_solid_a, d_fso, pos.want);
        for (std::size_t i = 0; i < g.lift_solid_a.h.size(); ++i)
            g.lift_solid_a.h[i] += gs.d_half[i];
        pos.add_conv(gs.d_query_pos, gs.d_point_pos, false);
        d_fluid_feats = std::move(gf.d_feats);
    } else {
        auto gf = cconv_backward(tr.lift_fl, tp.lift_fluid_c, d_ffl, pos.want);
        for (std::size_t i = 0; i < g.lift_fluid_c.w.size(); ++i)
            g.lift_fluid_c.w[i] += gf.d_kernel.w[i];
        pos.add_conv(gf.d_query_pos, gf.d_point_pos, true);
        auto gs = cconv_backward(tr.lift_so, tp.lift_solid_c, d_fso, pos.want);
        for (std::size_t i = 0; i < g.lift_solid_c.w.size(); ++i)
            g.lift_solid_c.w[i] += gs.d_kernel.w[i];
        pos.add_conv(gs.d_query_pos, gs.d_point_pos, false);
        d_fluid_feats = std::move(gf.d_feats);
    }
    return d_fluid_feats;
}

// ---------------------------------------------------------------------------
// Full dual-pipeline network
// ---------------------------------------------------------------------------

template <class Real>
struct NetTraceT {
    std::shared_ptr<const ConvGeometryT<Real>> gff, gsf;
    MatT<Real> fluid_feats, solid_feats;
    TaimTraceT<Real> taim_m, taim_c;
    MatT<Real> fc_pre_m, fc_pre_c;
    MatT<Real> h0m, h0c;
    FusionTraceT<Real> fuse_in;
    std::array<MatT<Real>, 6> z;   // fused features, residuals included
    std::array<MatT<Real>, 5> x;   // relu(z[L]) fed to conv layer L
    std::array<ConvTapeT<Real>, 5> main_tape, cons_tape;
    std::array<FusionTraceT<Real>, 5> fuse;
};

template <class Real>
struct ForwardResultT {
    MatT<Real> dx;  // [N,3] displacement correction
    NetTraceT<Real> trace;
};

/// Prebuilt convolution geometries for one state; callers that evaluate the
/// network repeatedly at fixed positions can share them across calls.
template <class Real>
struct NetGeometryT {
    std::shared_ptr<const ConvGeometryT<Real>> gff;  // fluid -> fluid (self graph)
    std::shared_ptr<const ConvGeometryT<Real>> gsf;  // solid -> fluid
};

template <class Real>
NetGeometryT<Real> build_net_geometry(const ModelConfig& cfg, const StateViewT<Real>& state) {
    const Real radius = static_cast<Real>(cfg.support_radius);
    return {build_conv_geometry<Real>(state.fluid_pos, state.fluid_pos, radius,
                                      cfg.kernel_resolution, true),
            build_conv_geometry<Real>(state.fluid_pos, state.solid_pos, radius,
                                      cfg.kernel_resolution, false)};
}

/// Forward pass over the post-external-force state. Layer recipe:
///   h0_p   = taim_p(feats) + relu(fc_in_p(fluid_feats))      per pathway
///   z0     = fuse_in(h0_main, h0_cons)
///   L=0..4: u_m = cconv_L(relu(z_L)) + b, u_c = ascc_L(relu(z_L)) + b
///           z_{L+1} = fuse_L(u_m, u_c)  (+ z_{L-1} for L in {1,3})
///   dx     = head(z5), identity output activation.
template <class Real>
ForwardResultT<Real> net_forward(const ModelParamsT<Real>& p, const StateViewT<Real>& state,
                                 const NetGeometryT<Real>* shared_geometry = nullptr) {
    ForwardResultT<Real> res;
    NetTraceT<Real>& tr = res.trace;
    if (shared_geometry) {
        tr.gff = shared_geometry->gff;
        tr.gsf = shared_geometry->gsf;
    } else {
        const NetGeometryT<Real> g = build_net_geometry(p.config, state);
        tr.gff = g.gff;
        tr.gsf = g.gsf;
    }
    input_features(state, tr.fluid_feats, tr.solid_feats);

    const MatT<Real> tm = taim_forward(p.taim_main, tr.gff, tr.gsf, tr.fluid_feats,
                                       tr.solid_feats, tr.taim_m);
    const MatT<Real> tc = taim_forward(p.taim_cons, tr.gff, tr.gsf, tr.fluid_feats,
                                       tr.solid_feats, tr.taim_c);
    dense_forward(p.fc_in_main, tr.fluid_feats, tr.fc_pre_m);
    dense_forward(p.fc_in_cons, tr.fluid_feats, tr.fc_pre_c);
    const MatT<Real> fm = relu(tr.fc_pre_m);
    const MatT<Real> fc = relu(tr.fc_pre_c);

    const std::size_t n = state.fluid_pos.size();
    const int c = p.config.channels;
    tr.h0m = MatT<Real>(n, c);
    tr.h0c = MatT<Real>(n, c);
    for (std::size_t i = 0; i < tr.h0m.v.size(); ++i) {
        tr.h0m.v[i] = tm.v[i] + fm.v[i];
        tr.h0c.v[i] = tc.v[i] + fc.v[i];
    }

    tr.z[0] = fuse_forward(p.fusion_in, tr.gff, tr.h0m, tr.h0c, tr.fuse_in);

    for (int L = 0; L < 5; ++L) {
        tr.x[L] = relu(tr.z[L]);
        auto rm = cconv_forward(tr.gff, tr.x[L], p.main_conv[L].kernel);
        auto rc = ascc_forward(tr.gff, tr.x[L], p.cons_conv[L].kernel);
        for (std::size_t i = 0; i < n; ++i) {
            Real* um = rm.out.row(i);
            Real* uc = rc.out.row(i);
            for (int k = 0; k < c; ++k) {
                um[k] += p.main_conv[L].bias[k];
                uc[k] += p.cons_conv[L].bias[k];
            }
        }
        tr.main_tape[L] = std::move(rm.tape);
        tr.cons_tape[L] = std::move(rc.tape);
        tr.z[L + 1] = fuse_forward(p.fusion[L], tr.gff, rm.out, rc.out, tr.fuse[L]);
        if (L == 1 || L == 3) {
            for (std::size_t i = 0; i < tr.z[L + 1].v.size(); ++i)
                tr.z[L + 1].v[i] += tr.z[L - 1].v[i];
        }
    }

    dense_forward(p.head, tr.z[5], res.dx);
    return res;
}

template <class Real>
struct NetGradsT {
    ModelParamsT<Real> params;
    MatT<Real> d_fluid_feats;              // [N,4]; columns 1..3 are velocity grads
    std::vector<Vec3T<Real>> d_fluid_pos;  // filled when positions requested
};

/// Exact reverse-mode pass matching net_forward. Position gradients are
/// optional; they are only needed when the predicted state feeds another
/// simulation step inside the loss.
template <class Real>
NetGradsT<Real> net_backward(const ModelParamsT<Real>& p, const NetTraceT<Real>& tr,
                             const MatT<Real>& d_dx, bool want_positions) {
    const std::size_t n = tr.fluid_feats.rows;
    const int c = p.config.channels;
    PFLOW_CHECK(d_dx.rows == n && d_dx.cols == 3, "net_backward: d_dx shape mismatch");

    NetGradsT<Real> out;
    out.params = ModelParamsT<Real>::zeros(p.config);
    out.d_fluid_feats = MatT<Real>(n, 4);
    PosGradsT<Real> pos;
    pos.want = want_positions;
    if (want_positions) pos.fluid.assign(n, Vec3T<Real>{});

    std::array<MatT<Real>, 6> dz;
    for (auto& m : dz) m = MatT<Real>(n, c);

    dense_backward(p.head, out.params.head, tr.z[5], d_dx, dz[5]);

    for (int L = 4; L >= 0; --L) {
        if (L == 1 || L == 3) {
            // z[L+1] received z[L-1] additively in forward.
            for (std::size_t i = 0; i < dz[L - 1].v.size(); ++i)
                dz[L - 1].v[i] += dz[L + 1].v[i];
        }
        FuseGradsT<Real> fg =
            fuse_backward(p.fusion[L], out.params.fusion[L], tr.fuse[L], dz[L + 1], pos);

        for (std::size_t i = 0; i < n; ++i) {
            const Real* dm = fg.d_main.row(i);
            const Real* dc = fg.d_cons.row(i);
            for (int k = 0; k < c; ++k) {
                out.params.main_conv[L].bias[k] += dm[k];
                out.params.cons_conv[L].bias[k] += dc[k];
            }
        }
        MatT<Real> d_x(n, c);
        {
            auto gm = cconv_backward(tr.main_tape[L], p.main_conv[L].kernel, fg.d_main, pos.want);
            for (std::size_t i = 0; i < gm.d_kernel.w.size(); ++i)
                out.params.main_conv[L].kernel.w[i] += gm.d_kernel.w[i];
            pos.add_conv(gm.d_query_pos, gm.d_point_pos, true);
            for (std::size_t i = 0; i < d_x.v.size(); ++i) d_x.v[i] += gm.d_feats.v[i];
        }
        {
            auto gc = ascc_backward(tr.cons_tape[L], p.cons_conv[L].kernel, fg.d_cons, pos.want);
            for (std::size_t i = 0; i < gc.d_half.size(); ++i)
                out.params.cons_conv[L].kernel.h[i] += gc.d_half[i];
            pos.add_conv(gc.d_query_pos, gc.d_point_pos, true);
            for (std::size_t i = 0; i < d_x.v.size(); ++i) d_x.v[i] += gc.d_feats.v[i];
        }
        relu_backward(tr.z[L], d_x, dz[L]);
    }

    FuseGradsT<Real> f0 =
        fuse_backward(p.fusion_in, out.params.fusion_in, tr.fuse_in, dz[0], pos);

    // Pathway inputs: h0_p = taim_p + relu(fc_in_p).
    {
        MatT<Real> d_ff =
            taim_backward(p.taim_main, out.params.taim_main, tr.taim_m, f0.d_main, pos);
        for (std::size_t i = 0; i < d_ff.v.size(); ++i) out.d_fluid_feats.v[i] += d_ff.v[i];
        MatT<Real> d_post(n, c);
        relu_backward(tr.fc_pre_m, f0.d_main, d_post);
        dense_backward(p.fc_in_main, out.params.fc_in_main, tr.fluid_feats, d_post,
                       out.d_fluid_feats);
    }
    {
        MatT<Real> d_ff =
            taim_backward(p.taim_cons, out.params.taim_cons, tr.taim_c, f0.d_cons, pos);
        for (std::size_t i = 0; i < d_ff.v.size(); ++i) out.d_fluid_feats.v[i] += d_ff.v[i];
        MatT<Real> d_post(n, c);
        relu_backward(tr.fc_pre_c, f0.d_cons, d_post);
        dense_backward(p.fc_in_cons, out.params.fc_in_cons, tr.fluid_feats, d_post,
                       out.d_fluid_feats);
    }

    out.d_fluid_pos = std::move(pos.fluid);
    return out;
}

/// Zeroes the gradient entries of the named tensors; the masking contract
/// for frozen parameters.
template <class Real>
void apply_freeze_mask(ModelParamsT<Real>& grads, const std::vector<std::string>& frozen) {
    visit_tensors(grads, [&](TensorRef<Real> t) {
        for (const auto& name : frozen)
            if (t.name == name) {
                std::fill(t.data.begin(), t.data.end(), Real(0));
            }
    });
}

using NetTrace = NetTraceT<float>;
using NetGrads = NetGradsT<float>;

}  // namespace pflow
