#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "pflow/ball_cube.hpp"
#include "pflow/error.hpp"
#include "pflow/feature_matrix.hpp"
#include "pflow/neighbors.hpp"
#include "pflow/parallel.hpp"
#include "pflow/rng.hpp"
#include "pflow/types.hpp"
#include "pflow/vec3.hpp"

namespace pflow {

// ---------------------------------------------------------------------------
// Trainable kernels
// ---------------------------------------------------------------------------

/// Filter grid on an [nx,ny,nz] voxel lattice over the unit cube, with a
/// [cin x cout] matrix per voxel. Storage: (voxel*cin + ci)*cout + co.
template <class Real>
struct KernelTensorT {
    KernelDims res;
    int cin = 0, cout = 0;
    std::vector<Real> w;

    KernelTensorT() = default;
    KernelTensorT(KernelDims r, int ci, int co)
        : res(r), cin(ci), cout(co),
          w(static_cast<std::size_t>(r.voxels()) * ci * co, Real(0)) {}

    std::size_t voxel_stride() const { return static_cast<std::size_t>(cin) * cout; }
    Real* voxel(int v) { return w.data() + v * voxel_stride(); }
    const Real* voxel(int v) const { return w.data() + v * voxel_stride(); }
    int flat_voxel(int ix, int iy, int iz) const { return (ix * res.ny + iy) * res.nz + iz; }
};

/// Half of an antisymmetric kernel: voxels with index 0..nx/2-1 on the
/// mirror axis (fixed to the first axis). The full tensor is materialized
/// by reflecting through the lattice center with negation, so
/// G[i,j,k] = -G[nx-1-i, ny-1-j, nz-1-k] holds bit-exactly.
template <class Real>
struct AsccHalfKernelT {
    KernelDims res;  // resolution of the *full* kernel
    int cin = 0, cout = 0;
    std::vector<Real> h;  // [(half_voxel*cin + ci)*cout + co], half_voxel over nx/2*ny*nz

    AsccHalfKernelT() = default;
    AsccHalfKernelT(KernelDims r, int ci, int co)
        : res(r), cin(ci), cout(co),
          h(static_cast<std::size_t>(r.nx / 2) * r.ny * r.nz * ci * co, Real(0)) {
        PFLOW_CHECK(r.nx % 2 == 0, "AsccHalfKernel: mirror axis resolution must be even");
    }

    std::size_t half_voxels() const {
        return static_cast<std::size_t>(res.nx / 2) * res.ny * res.nz;
    }

    KernelTensorT<Real> materialize() const {
        KernelTensorT<Real> full(res, cin, cout);
        const std::size_t vs = full.voxel_stride();
        const int hx = res.nx / 2;
        for (int ix = 0; ix < hx; ++ix)
            for (int iy = 0; iy < res.ny; ++iy)
                for (int iz = 0; iz < res.nz; ++iz) {
                    const std::size_t src =
                        (static_cast<std::size_t>(ix) * res.ny + iy) * res.nz + iz;
                    const Real* hw = h.data() + src * vs;
                    Real* pos = full.voxel(full.flat_voxel(ix, iy, iz));
                    Real* neg = full.voxel(
                        full.flat_voxel(res.nx - 1 - ix, res.ny - 1 - iy, res.nz - 1 - iz));
                    for (std::size_t c = 0; c < vs; ++c) {
                        pos[c] = hw[c];
                        neg[c] = -hw[c];
                    }
                }
        return full;
    }

    /// Folds a full-tensor gradient back onto the half parameters:
    /// dL/dH[i,j,k] = dL/dG[i,j,k] - dL/dG[mirror(i,j,k)].
    std::vector<Real> fold_gradient(const KernelTensorT<Real>& full_grad) const {
        PFLOW_CHECK(full_grad.res == res && full_grad.cin == cin && full_grad.cout == cout,
                    "AsccHalfKernel: gradient shape mismatch");
        std::vector<Real> hg(h.size(), Real(0));
        const std::size_t vs = full_grad.voxel_stride();
        const int hx = res.nx / 2;
        for (int ix = 0; ix < hx; ++ix)
            for (int iy = 0; iy < res.ny; ++iy)
                for (int iz = 0; iz < res.nz; ++iz) {
                    const std::size_t dst =
                        (static_cast<std::size_t>(ix) * res.ny + iy) * res.nz + iz;
                    const Real* gp = full_grad.voxel(full_grad.flat_voxel(ix, iy, iz));
                    const Real* gn = full_grad.voxel(full_grad.flat_voxel(
                        res.nx - 1 - ix, res.ny - 1 - iy, res.nz - 1 - iz));
                    Real* out = hg.data() + dst * vs;
                    for (std::size_t c = 0; c < vs; ++c) out[c] = gp[c] - gn[c];
                }
        return hg;
    }
};

using KernelTensor = KernelTensorT<float>;
using AsccHalfKernel = AsccHalfKernelT<float>;

/// Glorot-uniform fill over the per-voxel channel fan. The voxel count is
/// deliberately not part of the fan: each pair samples one trilinear blend
/// of the grid, not a sum over it, and the window already attenuates the
/// neighbor sum, so channel fan keeps layer activations near unit scale at
/// typical neighborhood sizes.
template <class Real>
void init_glorot(KernelTensorT<Real>& k, Rng& rng) {
    const double bound = std::sqrt(6.0 / (k.cin + k.cout));
    for (auto& w : k.w) w = static_cast<Real>(rng.uniform(-bound, bound));
}

template <class Real>
void init_glorot(AsccHalfKernelT<Real>& k, Rng& rng) {
    const double bound = std::sqrt(6.0 / (k.cin + k.cout));
    for (auto& w : k.h) w = static_cast<Real>(rng.uniform(-bound, bound));
}

// ---------------------------------------------------------------------------
// Window function (density normalization)
// ---------------------------------------------------------------------------

/// a(d) = (1 - d^2/R^2)^3 inside the support, 0 at and beyond d = R.
template <class Real>
Real window(Real d, Real R) {
    const Real q2 = (d * d) / (R * R);
    if (!(q2 < Real(1))) return Real(0);
    const Real t = Real(1) - q2;
    return t * t * t;
}

// ---------------------------------------------------------------------------
// Shared per-pair geometry
// ---------------------------------------------------------------------------

/// Interpolation data for one (query, point) pair: window value plus the
/// trilinear cell (base corner, fractional coordinate, per-axis clamp bits).
/// Bit a of `clamped` set means the coordinate sits in the clamped boundary
/// region of axis a where the interpolation weight has zero derivative.
template <class Real>
struct PairInterp {
    Real a;
    Vec3T<Real> frac;
    std::uint8_t base[3];
    std::uint8_t clamped;
};

/// Everything about N(x, R) that every convolution over the same point/query
/// sets shares: the neighbor list, window values, and trilinear cells. Built
/// once per network evaluation and referenced by every conv tape.
template <class Real>
struct ConvGeometryT {
    NeighborListT<Real> nl;
    std::vector<PairInterp<Real>> interp;
    KernelDims res;
    Real radius = Real(0);
    std::size_t n_points = 0;
    bool self_graph = false;  // queries and points are the same array
};

using ConvGeometry = ConvGeometryT<float>;

namespace conv_detail {

template <class Real>
void axis_interp(Real u, int n, int& i0, Real& f, bool& active) {
    double t = (static_cast<double>(u) + 1.0) * (n * 0.5) - 0.5;
    active = t > 0.0 && t < static_cast<double>(n - 1);
    if (t < 0.0) t = 0.0;
    if (t > static_cast<double>(n - 1)) t = static_cast<double>(n - 1);
    i0 = static_cast<int>(t);
    if (i0 > n - 2) i0 = n - 2;
    f = static_cast<Real>(t - i0);
}

}  // namespace conv_detail

template <class Real>
std::shared_ptr<const ConvGeometryT<Real>> build_conv_geometry(
    std::span<const Vec3T<Real>> queries, std::span<const Vec3T<Real>> points, Real radius,
    KernelDims res, bool self_graph) {
    auto geom = std::make_shared<ConvGeometryT<Real>>();
    geom->nl = build_neighbors(queries, points, radius);
    geom->res = res;
    geom->radius = radius;
    geom->n_points = points.size();
    geom->self_graph = self_graph;
    geom->interp.resize(geom->nl.pair_count());
    const Real inv_r = Real(1) / radius;
    parallel_for(queries.size(), [&](std::size_t q) {
        for (std::uint32_t p = geom->nl.begin(q); p < geom->nl.end(q); ++p) {
            const Vec3T<Real> r = geom->nl.rel_offsets[p] * inv_r;
            const Vec3T<Real> u = ball_to_cube(r);
            PairInterp<Real>& pi = geom->interp[p];
            pi.a = window(geom->nl.distances[p], radius);
            int i0;
            bool active;
            Real f;
            conv_detail::axis_interp(u.x, res.nx, i0, f, active);
            pi.base[0] = static_cast<std::uint8_t>(i0);
            pi.frac.x = f;
            pi.clamped = active ? 0 : 1;
            conv_detail::axis_interp(u.y, res.ny, i0, f, active);
            pi.base[1] = static_cast<std::uint8_t>(i0);
            pi.frac.y = f;
            if (!active) pi.clamped |= 2;
            conv_detail::axis_interp(u.z, res.nz, i0, f, active);
            pi.base[2] = static_cast<std::uint8_t>(i0);
            pi.frac.z = f;
            if (!active) pi.clamped |= 4;
        }
    });
    return geom;
}

template <class Real>
std::shared_ptr<const ConvGeometryT<Real>> build_conv_geometry(
    const std::vector<Vec3T<Real>>& queries, const std::vector<Vec3T<Real>>& points, Real radius,
    KernelDims res, bool self_graph) {
    return build_conv_geometry(std::span<const Vec3T<Real>>(queries),
                               std::span<const Vec3T<Real>>(points), radius, res, self_graph);
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// How the per-pair input feature is formed.
///  - point: f_i (plain continuous convolution)
///  - symmetric_sum: f_q + f_i (antisymmetric conv; needs self_graph)
enum class PairFeature { point, symmetric_sum };

template <class Real>
struct ConvTapeT {
    std::shared_ptr<const ConvGeometryT<Real>> geom;
    MatT<Real> feats;  // conv input, one row per point
    int cin = 0, cout = 0;
    PairFeature mode = PairFeature::point;
};

using ConvTape = ConvTapeT<float>;

template <class Real>
struct ConvGradsT {
    MatT<Real> d_feats;
    KernelTensorT<Real> d_kernel;  // full tensor; ascc wrappers fold it
    std::vector<Vec3T<Real>> d_query_pos;
    std::vector<Vec3T<Real>> d_point_pos;
};

namespace conv_detail {

/// Corner weights/indices of one pair. Weight k (bit 0: x-high, bit 1:
/// y-high, bit 2: z-high) multiplies voxel corner[k].
template <class Real>
struct Corners {
    int voxel[8];
    Real weight[8];
};

template <class Real>
inline void corners_of(const PairInterp<Real>& pi, const KernelDims& res, Corners<Real>& c) {
    const Real fx = pi.frac.x, fy = pi.frac.y, fz = pi.frac.z;
    const Real wx[2] = {Real(1) - fx, fx};
    const Real wy[2] = {Real(1) - fy, fy};
    const Real wz[2] = {Real(1) - fz, fz};
    const int bx = pi.base[0], by = pi.base[1], bz = pi.base[2];
    for (int k = 0; k < 8; ++k) {
        const int ix = bx + (k & 1);
        const int iy = by + ((k >> 1) & 1);
        const int iz = bz + (k >> 2);
        c.voxel[k] = (ix * res.ny + iy) * res.nz + iz;
        c.weight[k] = wx[k & 1] * wy[(k >> 1) & 1] * wz[k >> 2];
    }
}

/// Scatters a * w_k * f into the per-voxel accumulator of one query and
/// returns the touched-voxel mask (valid while voxels <= 64).
template <class Real, class Gather>
inline std::uint64_t scatter_query(const ConvGeometryT<Real>& geom, std::size_t q, int cin,
                                   const Gather& gather, Real* acc, Real* fpair) {
    std::uint64_t mask = 0;
    for (std::uint32_t p = geom.nl.begin(q); p < geom.nl.end(q); ++p) {
        const PairInterp<Real>& pi = geom.interp[p];
        gather(p, fpair);
        Corners<Real> c;
        corners_of(pi, geom.res, c);
        for (int k = 0; k < 8; ++k) {
            const Real coef = pi.a * c.weight[k];
            Real* dst = acc + static_cast<std::size_t>(c.voxel[k]) * cin;
            for (int ci = 0; ci < cin; ++ci) dst[ci] += coef * fpair[ci];
            if (c.voxel[k] < 64) mask |= (1ULL << c.voxel[k]);
        }
    }
    return mask;
}

}  // namespace conv_detail

/// Core continuous-convolution forward shared by CConv and ASCC. Output row
/// q is  sum_{i in N(q,R)} a(x_i,x_q) * fpair^T * G(Lambda((x_i-x_q)/R)),
/// with G trilinearly sampled at voxel centers.
template <class Real>
MatT<Real> conv_apply(const ConvGeometryT<Real>& geom, const MatT<Real>& feats,
                      const KernelTensorT<Real>& kernel, PairFeature mode) {
    PFLOW_CHECK(feats.cols == kernel.cin, "conv: feature width does not match kernel cin");
    PFLOW_CHECK(feats.rows == geom.n_points, "conv: feature rows do not match point count");
    PFLOW_CHECK(kernel.res == geom.res, "conv: kernel resolution does not match geometry");
    if (mode == PairFeature::symmetric_sum)
        PFLOW_CHECK(geom.self_graph, "conv: symmetric_sum requires queries == points");

    const std::size_t nq = geom.nl.query_count();
    const int cin = kernel.cin, cout = kernel.cout;
    const int voxels = geom.res.voxels();
    const bool maskable = voxels <= 64;
    MatT<Real> out(nq, cout);

    parallel_chunks(nq, [&](std::size_t qb, std::size_t qe) {
        // Scratch shared across the chunk's queries; zeroed selectively via
        // the touched-voxel mask.
        std::vector<Real> acc(static_cast<std::size_t>(voxels) * cin, Real(0));
        std::vector<Real> fpair(cin);
        for (std::size_t q = qb; q < qe; ++q) {
            auto gather = [&](std::uint32_t p, Real* fp) {
                const Real* fi = feats.row(geom.nl.indices[p]);
                if (mode == PairFeature::point) {
                    for (int c = 0; c < cin; ++c) fp[c] = fi[c];
                } else {
                    const Real* fq = feats.row(q);
                    for (int c = 0; c < cin; ++c) fp[c] = fq[c] + fi[c];
                }
            };
            const std::uint64_t mask =
                conv_detail::scatter_query(geom, q, cin, gather, acc.data(), fpair.data());
            Real* o = out.row(q);
            for (int v = 0; v < voxels; ++v) {
                if (maskable && !(mask & (1ULL << v))) continue;
                Real* av = acc.data() + static_cast<std::size_t>(v) * cin;
                const Real* gv = kernel.voxel(v);
                for (int ci = 0; ci < cin; ++ci) {
                    const Real x = av[ci];
                    if (x == Real(0)) continue;
                    const Real* grow = gv + static_cast<std::size_t>(ci) * cout;
                    for (int co = 0; co < cout; ++co) o[co] += x * grow[co];
                }
                for (int ci = 0; ci < cin; ++ci) av[ci] = Real(0);
            }
            if (!maskable)
                std::fill(acc.begin(), acc.end(), Real(0));
        }
    });
    return out;
}

template <class Real>
struct ConvResultT {
    MatT<Real> out;
    ConvTapeT<Real> tape;
};

/// CConv (plain filter) over a cached geometry; keeps the tape for backward.
template <class Real>
ConvResultT<Real> cconv_forward(std::shared_ptr<const ConvGeometryT<Real>> geom,
                                const MatT<Real>& feats, const KernelTensorT<Real>& kernel) {
    ConvResultT<Real> r;
    r.out = conv_apply(*geom, feats, kernel, PairFeature::point);
    r.tape = ConvTapeT<Real>{std::move(geom), feats, kernel.cin, kernel.cout, PairFeature::point};
    return r;
}

/// Convenience overload matching the operation signature: builds the
/// geometry from scratch for a one-off evaluation.
template <class Real>
ConvResultT<Real> cconv_forward(const MatT<Real>& feats, const std::vector<Vec3T<Real>>& points,
                                const std::vector<Vec3T<Real>>& queries,
                                const KernelTensorT<Real>& kernel, Real radius) {
    const bool self = points.size() == queries.size() && points.data() == queries.data();
    auto geom = build_conv_geometry<Real>(queries, points, radius, kernel.res, self);
    return cconv_forward(std::move(geom), feats, kernel);
}

/// ASCC forward on a self graph: pair feature is f_q + f_i and the kernel
/// is the materialized antisymmetric tensor. A single isolated particle
/// yields exactly zero (the interpolated kernel vanishes at the origin).
template <class Real>
ConvResultT<Real> ascc_forward(std::shared_ptr<const ConvGeometryT<Real>> geom,
                               const MatT<Real>& feats, const AsccHalfKernelT<Real>& half) {
    const KernelTensorT<Real> full = half.materialize();
    ConvResultT<Real> r;
    r.out = conv_apply(*geom, feats, full, PairFeature::symmetric_sum);
    r.tape = ConvTapeT<Real>{std::move(geom), feats, half.cin, half.cout,
                             PairFeature::symmetric_sum};
    return r;
}

template <class Real>
ConvResultT<Real> ascc_forward(const MatT<Real>& feats, const std::vector<Vec3T<Real>>& points,
                               const AsccHalfKernelT<Real>& half, Real radius) {
    auto geom = build_conv_geometry<Real>(points, points, radius, half.res, true);
    return ascc_forward(std::move(geom), feats, half);
}

/// Antisymmetric-kernel conv from one point set onto a different query set
/// (used by the type-aware input stage to pull solid features onto fluid
/// particles). No feature exists at the query, so the pair feature reduces
/// to f_i alone.
template <class Real>
ConvResultT<Real> ascc_forward_cross(std::shared_ptr<const ConvGeometryT<Real>> geom,
                                     const MatT<Real>& point_feats,
                                     const AsccHalfKernelT<Real>& half) {
    const KernelTensorT<Real> full = half.materialize();
    ConvResultT<Real> r;
    r.out = conv_apply(*geom, point_feats, full, PairFeature::point);
    r.tape = ConvTapeT<Real>{std::move(geom), point_feats, half.cin, half.cout,
                             PairFeature::point};
    return r;
}

/// Reverse-mode pass of conv_apply. Produces gradients for the input
/// features and the full kernel tensor always, and for particle positions
/// when `want_positions` is set (needed when a later simulation step feeds
/// back into the loss). Runs serially; callers parallelize across samples.
template <class Real>
ConvGradsT<Real> conv_backward(const ConvTapeT<Real>& tape, const KernelTensorT<Real>& kernel,
                               const MatT<Real>& grad_out, bool want_positions) {
    const ConvGeometryT<Real>& geom = *tape.geom;
    PFLOW_CHECK(kernel.cin == tape.cin && kernel.cout == tape.cout && kernel.res == geom.res,
                "conv_backward: kernel does not match tape");
    PFLOW_CHECK(grad_out.rows == geom.nl.query_count() && grad_out.cols == tape.cout,
                "conv_backward: grad_out shape mismatch");

    const std::size_t nq = geom.nl.query_count();
    const int cin = tape.cin, cout = tape.cout;
    const int voxels = geom.res.voxels();
    const Real radius = geom.radius;
    const Real inv_r = Real(1) / radius;
    const Real inv_r2 = inv_r * inv_r;

    ConvGradsT<Real> g;
    g.d_feats = MatT<Real>(tape.feats.rows, cin);
    g.d_kernel = KernelTensorT<Real>(geom.res, cin, cout);
    if (want_positions) {
        g.d_query_pos.assign(nq, Vec3T<Real>{});
        g.d_point_pos.assign(geom.n_points, Vec3T<Real>{});
    }

    std::vector<Real> acc(static_cast<std::size_t>(voxels) * cin);
    std::vector<Real> proj(static_cast<std::size_t>(voxels) * cin);
    std::vector<Real> fpair(cin);
    std::vector<Real> gf(cin);

    const int n_axis[3] = {geom.res.nx, geom.res.ny, geom.res.nz};

    for (std::size_t q = 0; q < nq; ++q) {
        if (geom.nl.count(q) == 0) continue;
        const Real* gq = grad_out.row(q);
        bool all_zero = true;
        for (int co = 0; co < cout; ++co)
            if (gq[co] != Real(0)) { all_zero = false; break; }
        if (all_zero) continue;

        std::fill(acc.begin(), acc.end(), Real(0));
        auto gather = [&](std::uint32_t p, Real* fp) {
            const Real* fi = tape.feats.row(geom.nl.indices[p]);
            if (tape.mode == PairFeature::point) {
                for (int c = 0; c < cin; ++c) fp[c] = fi[c];
            } else {
                const Real* fq = tape.feats.row(q);
                for (int c = 0; c < cin; ++c) fp[c] = fq[c] + fi[c];
            }
        };
        const std::uint64_t mask =
            conv_detail::scatter_query(geom, q, cin, gather, acc.data(), fpair.data());
        const bool maskable = voxels <= 64;

        // Kernel gradient: dG[v][ci][co] += acc[v][ci] * gq[co], and the
        // projected kernel P[v][ci] = sum_co G[v][ci][co] gq[co] reused by
        // the per-pair terms below.
        for (int v = 0; v < voxels; ++v) {
            const bool touched = !maskable || (mask & (1ULL << v));
            Real* pv = proj.data() + static_cast<std::size_t>(v) * cin;
            const Real* gv = kernel.voxel(v);
            Real* dkv = g.d_kernel.voxel(v);
            const Real* av = acc.data() + static_cast<std::size_t>(v) * cin;
            for (int ci = 0; ci < cin; ++ci) {
                const Real* grow = gv + static_cast<std::size_t>(ci) * cout;
                Real s = Real(0);
                for (int co = 0; co < cout; ++co) s += grow[co] * gq[co];
                pv[ci] = s;
                if (touched && av[ci] != Real(0)) {
                    Real* drow = dkv + static_cast<std::size_t>(ci) * cout;
                    const Real x = av[ci];
                    for (int co = 0; co < cout; ++co) drow[co] += x * gq[co];
                }
            }
        }

        for (std::uint32_t p = geom.nl.begin(q); p < geom.nl.end(q); ++p) {
            const PairInterp<Real>& pi = geom.interp[p];
            const std::uint32_t i = geom.nl.indices[p];
            conv_detail::Corners<Real> c;
            conv_detail::corners_of(pi, geom.res, c);

            // Feature gradient: a * sum_k w_k P[corner_k].
            std::fill(gf.begin(), gf.end(), Real(0));
            Real m[8];
            gather(p, fpair.data());
            for (int k = 0; k < 8; ++k) {
                const Real* pv = proj.data() + static_cast<std::size_t>(c.voxel[k]) * cin;
                Real mk = Real(0);
                const Real wk = c.weight[k];
                for (int ci = 0; ci < cin; ++ci) {
                    gf[ci] += wk * pv[ci];
                    mk += fpair[ci] * pv[ci];
                }
                m[k] = mk;
            }
            {
                Real* df_i = g.d_feats.row(i);
                for (int ci = 0; ci < cin; ++ci) df_i[ci] += pi.a * gf[ci];
                if (tape.mode == PairFeature::symmetric_sum) {
                    Real* df_q = g.d_feats.row(q);
                    for (int ci = 0; ci < cin; ++ci) df_q[ci] += pi.a * gf[ci];
                }
            }

            if (!want_positions) continue;
            // Self pairs have delta identically zero however the particle
            // moves, so they contribute nothing to position gradients.
            const Vec3T<Real> delta = geom.nl.rel_offsets[p];
            const Real d2 = dot(delta, delta);
            if ((geom.self_graph && i == q) || !(d2 > Real(1e-24))) continue;

            // Window term: dL/ddelta += (f^T G gq) * da/ddelta.
            Real s_tilde = Real(0);
            for (int k = 0; k < 8; ++k) s_tilde += c.weight[k] * m[k];
            const Real t = Real(1) - d2 * inv_r2;
            Vec3T<Real> d_delta{};
            if (t > Real(0)) {
                const Real da = Real(-6) * t * t * inv_r2;
                d_delta = delta * (s_tilde * da);
            }

            // Interpolation term: dL/du = a * sum_k m_k grad w_k(u), then
            // pulled back through the ball-to-cube Jacobian.
            const Real wx[2] = {Real(1) - pi.frac.x, pi.frac.x};
            const Real wy[2] = {Real(1) - pi.frac.y, pi.frac.y};
            const Real wz[2] = {Real(1) - pi.frac.z, pi.frac.z};
            Real du[3] = {Real(0), Real(0), Real(0)};
            for (int k = 0; k < 8; ++k) {
                const int kx = k & 1, ky = (k >> 1) & 1, kz = k >> 2;
                const Real sx = kx ? Real(1) : Real(-1);
                const Real sy = ky ? Real(1) : Real(-1);
                const Real sz = kz ? Real(1) : Real(-1);
                du[0] += m[k] * sx * wy[ky] * wz[kz];
                du[1] += m[k] * wx[kx] * sy * wz[kz];
                du[2] += m[k] * wx[kx] * wy[ky] * sz;
            }
            for (int a = 0; a < 3; ++a) {
                const bool active = !(pi.clamped & (1 << a));
                du[a] *= pi.a * (active ? Real(n_axis[a]) * Real(0.5) : Real(0));
            }

            double jac[3][3];
            const Vec3d r_ball = vec_cast<double>(delta * inv_r);
            ball_to_cube_jacobian(r_ball, jac);
            for (int col = 0; col < 3; ++col) {
                double s = 0;
                for (int row = 0; row < 3; ++row)
                    s += jac[row][col] * static_cast<double>(du[row]);
                d_delta[col] += static_cast<Real>(s) * inv_r;
            }

            g.d_point_pos[i] += d_delta;
            g.d_query_pos[q] -= d_delta;
        }
    }
    return g;
}

/// Backward for the plain continuous convolution.
template <class Real>
ConvGradsT<Real> cconv_backward(const ConvTapeT<Real>& tape, const KernelTensorT<Real>& kernel,
                                const MatT<Real>& grad_out, bool want_positions = false) {
    PFLOW_CHECK(tape.mode == PairFeature::point, "cconv_backward: tape is not a cconv tape");
    return conv_backward(tape, kernel, grad_out, want_positions);
}

template <class Real>
struct AsccGradsT {
    MatT<Real> d_feats;
    std::vector<Real> d_half;
    std::vector<Vec3T<Real>> d_query_pos;
    std::vector<Vec3T<Real>> d_point_pos;
};

/// Backward for the antisymmetric conv (either self or cross mode); the
/// full-kernel gradient is folded onto the stored half with negation.
template <class Real>
AsccGradsT<Real> ascc_backward(const ConvTapeT<Real>& tape, const AsccHalfKernelT<Real>& half,
                               const MatT<Real>& grad_out, bool want_positions = false) {
    const KernelTensorT<Real> full = half.materialize();
    ConvGradsT<Real> g = conv_backward(tape, full, grad_out, want_positions);
    AsccGradsT<Real> out;
    out.d_feats = std::move(g.d_feats);
    out.d_half = half.fold_gradient(g.d_kernel);
    out.d_query_pos = std::move(g.d_query_pos);
    out.d_point_pos = std::move(g.d_point_pos);
    return out;
}

}  // namespace pflow
