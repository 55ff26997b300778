#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "pflow/error.hpp"
#include "pflow/parallel.hpp"
#include "pflow/vec3.hpp"

namespace pflow {

/// Compressed fixed-radius adjacency: for query q, its pairs live in
/// [offsets[q], offsets[q+1]). Pairs satisfy |p - q| < R strictly; when
/// queries and points are the same array the self pair is included.
/// Indices are sorted ascending per query, so build order never shows.
template <class Real>
struct NeighborListT {
    std::vector<std::uint32_t> offsets;     // size Q+1, prefix sums
    std::vector<std::uint32_t> indices;     // point index per pair
    std::vector<Vec3T<Real>> rel_offsets;   // x_i - x_q, meters
    std::vector<Real> distances;            // |rel_offset|

    std::size_t query_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
    std::size_t pair_count() const { return indices.size(); }
    std::uint32_t begin(std::size_t q) const { return offsets[q]; }
    std::uint32_t end(std::size_t q) const { return offsets[q + 1]; }
    std::uint32_t count(std::size_t q) const { return offsets[q + 1] - offsets[q]; }
};

using NeighborList = NeighborListT<float>;

namespace detail {

inline std::uint64_t cell_key(std::int64_t cx, std::int64_t cy, std::int64_t cz) {
    // 21 bits per axis, offset to keep coordinates positive.
    const std::int64_t bias = 1 << 20;
    return (static_cast<std::uint64_t>((cx + bias) & 0x1FFFFF) << 42) |
           (static_cast<std::uint64_t>((cy + bias) & 0x1FFFFF) << 21) |
           static_cast<std::uint64_t>((cz + bias) & 0x1FFFFF);
}

template <class Real>
std::int64_t cell_of(Real v, Real inv_r) {
    return static_cast<std::int64_t>(std::floor(static_cast<double>(v) * inv_r));
}

}  // namespace detail

/// Uniform-grid fixed-radius search; cell edge equals the radius, so each
/// query scans its 27-cell stencil. Exact: the grid only prunes candidates,
/// membership is decided by the squared-distance test.
template <class Real>
NeighborListT<Real> build_neighbors(std::span<const Vec3T<Real>> queries,
                                    std::span<const Vec3T<Real>> points, Real radius) {
    PFLOW_CHECK(radius > Real(0) && std::isfinite(static_cast<double>(radius)),
                "build_neighbors: radius must be positive and finite");
    for (const auto& p : points)
        PFLOW_CHECK(is_finite(p), "build_neighbors: non-finite point coordinate");
    for (const auto& q : queries)
        PFLOW_CHECK(is_finite(q), "build_neighbors: non-finite query coordinate");

    const Real inv_r = Real(1) / radius;
    const Real r2 = radius * radius;

    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> grid;
    grid.reserve(points.size());
    for (std::uint32_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        grid[detail::cell_key(detail::cell_of(p.x, inv_r), detail::cell_of(p.y, inv_r),
                              detail::cell_of(p.z, inv_r))]
            .push_back(i);
    }

    const std::size_t nq = queries.size();
    std::vector<std::vector<std::uint32_t>> found(nq);
    parallel_for(nq, [&](std::size_t q) {
        const auto& xq = queries[q];
        const std::int64_t cx = detail::cell_of(xq.x, inv_r);
        const std::int64_t cy = detail::cell_of(xq.y, inv_r);
        const std::int64_t cz = detail::cell_of(xq.z, inv_r);
        auto& acc = found[q];
        for (std::int64_t dx = -1; dx <= 1; ++dx)
            for (std::int64_t dy = -1; dy <= 1; ++dy)
                for (std::int64_t dz = -1; dz <= 1; ++dz) {
                    auto it = grid.find(detail::cell_key(cx + dx, cy + dy, cz + dz));
                    if (it == grid.end()) continue;
                    for (std::uint32_t i : it->second) {
                        const Vec3T<Real> d = points[i] - xq;
                        if (dot(d, d) < r2) acc.push_back(i);
                    }
                }
        std::sort(acc.begin(), acc.end());
    });

    NeighborListT<Real> nl;
    nl.offsets.resize(nq + 1);
    nl.offsets[0] = 0;
    for (std::size_t q = 0; q < nq; ++q)
        nl.offsets[q + 1] = nl.offsets[q] + static_cast<std::uint32_t>(found[q].size());
    nl.indices.resize(nl.offsets[nq]);
    nl.rel_offsets.resize(nl.offsets[nq]);
    nl.distances.resize(nl.offsets[nq]);
    parallel_for(nq, [&](std::size_t q) {
        std::uint32_t w = nl.offsets[q];
        for (std::uint32_t i : found[q]) {
            const Vec3T<Real> d = points[i] - queries[q];
            nl.indices[w] = i;
            nl.rel_offsets[w] = d;
            nl.distances[w] = norm(d);
            ++w;
        }
    });
    return nl;
}

template <class Real>
NeighborListT<Real> build_neighbors(const std::vector<Vec3T<Real>>& queries,
                                    const std::vector<Vec3T<Real>>& points, Real radius) {
    return build_neighbors(std::span<const Vec3T<Real>>(queries),
                           std::span<const Vec3T<Real>>(points), radius);
}

}  // namespace pflow
