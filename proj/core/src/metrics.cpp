#include "pflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <unordered_map>

#include <json.hpp>

#include "pflow/error.hpp"
#include "pflow/neighbors.hpp"
#include "pflow/rng.hpp"
#include "pflow/simulator.hpp"
#include "pflow/sph_kernel.hpp"

namespace pflow {
namespace {

std::uint64_t cell_key(std::int64_t x, std::int64_t y, std::int64_t z) {
    const std::int64_t bias = 1 << 20;
    return (static_cast<std::uint64_t>((x + bias) & 0x1FFFFF) << 42) |
           (static_cast<std::uint64_t>((y + bias) & 0x1FFFFF) << 21) |
           static_cast<std::uint64_t>((z + bias) & 0x1FFFFF);
}

/// Exact nearest-neighbor distances via a uniform grid and an expanding
/// Chebyshev-shell search: a cell at shell k holds no point closer than
/// (k-1) * cell, so the scan stops once the best found distance certifies.
struct NearestIndex {
    double cell = 1.0;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> grid;
    std::span<const Vec3> pts;

    explicit NearestIndex(std::span<const Vec3> points) : pts(points) {
        Vec3 lo = points[0], hi = points[0];
        for (const auto& p : points) {
            lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
            hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
        }
        const double vol = std::max(1e-12, static_cast<double>((hi.x - lo.x) * (hi.y - lo.y)) *
                                               (hi.z - lo.z));
        cell = std::max(1e-6, std::cbrt(vol / points.size()) * 2.0);
        grid.reserve(points.size());
        for (std::uint32_t i = 0; i < points.size(); ++i)
            grid[key_of(points[i])].push_back(i);
    }

    std::uint64_t key_of(const Vec3& p) const {
        return cell_key(static_cast<std::int64_t>(std::floor(p.x / cell)),
                        static_cast<std::int64_t>(std::floor(p.y / cell)),
                        static_cast<std::int64_t>(std::floor(p.z / cell)));
    }

    double nearest(const Vec3& q) const {
        const std::int64_t cx = static_cast<std::int64_t>(std::floor(q.x / cell));
        const std::int64_t cy = static_cast<std::int64_t>(std::floor(q.y / cell));
        const std::int64_t cz = static_cast<std::int64_t>(std::floor(q.z / cell));
        double best = std::numeric_limits<double>::infinity();
        for (std::int64_t k = 0; k <= (1 << 20); ++k) {
            // Cells on shell k hold no point closer than (k-1)*cell, so once
            // best beats that bound no further shell can improve it.
            if (best < (static_cast<double>(k) - 1.0) * cell) break;
            for (std::int64_t dx = -k; dx <= k; ++dx)
                for (std::int64_t dy = -k; dy <= k; ++dy)
                    for (std::int64_t dz = -k; dz <= k; ++dz) {
                        if (std::max({std::llabs(dx), std::llabs(dy), std::llabs(dz)}) != k)
                            continue;
                        auto it = grid.find(cell_key(cx + dx, cy + dy, cz + dz));
                        if (it == grid.end()) continue;
                        for (std::uint32_t i : it->second) {
                            const Vec3 d = pts[i] - q;
                            best = std::min(best, static_cast<double>(std::sqrt(dot(d, d))));
                        }
                    }
        }
        return best;
    }
};

}  // namespace

double avg_pos_error_mm(std::span<const Vec3> pred, std::span<const Vec3> gt) {
    PFLOW_CHECK(pred.size() == gt.size(), "avg_pos_error: count mismatch");
    if (pred.empty()) return 0.0;
    double s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const Vec3 d = pred[i] - gt[i];
        s += std::sqrt(static_cast<double>(dot(d, d)));
    }
    return s / pred.size() * 1000.0;
}

double seq_distance_mm(std::span<const Vec3> gt, std::span<const Vec3> pred) {
    PFLOW_CHECK(!pred.empty(), "seq_distance: empty prediction");
    if (gt.empty()) return 0.0;
    NearestIndex idx(pred);
    double s = 0;
    for (const auto& g : gt) s += idx.nearest(g);
    return s / gt.size() * 1000.0;
}

double hungarian_assignment_cost(const std::vector<double>& cost, int n) {
    PFLOW_CHECK(n >= 1 && cost.size() == static_cast<std::size_t>(n) * n,
                "hungarian: bad cost matrix");
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0), v(n + 1, 0), minv(n + 1, 0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * static_cast<std::size_t>(n) + (j - 1)] -
                                   u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    double total = 0;
    for (int j = 1; j <= n; ++j)
        total += cost[(p[j] - 1) * static_cast<std::size_t>(n) + (j - 1)];
    return total;
}

namespace {

std::vector<Vec3> subsample(std::span<const Vec3> pts, std::size_t target, Rng& rng) {
    std::vector<Vec3> out(pts.begin(), pts.end());
    // Seeded partial Fisher-Yates, then truncate.
    for (std::size_t i = 0; i < target; ++i) {
        const std::size_t j = i + rng.uniform_index(out.size() - i);
        std::swap(out[i], out[j]);
    }
    out.resize(target);
    return out;
}

}  // namespace

double wasserstein_mm(std::span<const Vec3> pred, std::span<const Vec3> gt, std::uint64_t seed,
                      int max_points) {
    PFLOW_CHECK(pred.size() == gt.size(), "wasserstein: count mismatch");
    if (pred.empty()) return 0.0;
    std::vector<Vec3> a(pred.begin(), pred.end());
    std::vector<Vec3> b(gt.begin(), gt.end());
    if (static_cast<int>(a.size()) > max_points) {
        Rng rng(seed);
        a = subsample(pred, max_points, rng);
        b = subsample(gt, max_points, rng);
    }
    const int n = static_cast<int>(a.size());
    std::vector<double> cost(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const Vec3 d = a[i] - b[j];
            cost[i * static_cast<std::size_t>(n) + j] =
                std::sqrt(static_cast<double>(dot(d, d)));
        }
    return hungarian_assignment_cost(cost, n) / n * 1000.0;
}

std::vector<float> density(std::span<const Vec3> positions, const SimConfig& cfg) {
    // Smoothing length 2h -> cubic-spline support 4h.
    const float support = 4.f * cfg.particle_radius_h;
    const auto nl = build_neighbors(positions, positions, support);
    std::vector<float> rho(positions.size(), 0.f);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        float s = 0.f;
        for (std::uint32_t p = nl.begin(i); p < nl.end(i); ++p)
            s += cubic_spline(nl.distances[p], support);
        rho[i] = cfg.particle_mass * s;
    }
    return rho;
}

double max_density_error(std::span<const Vec3> pred, std::span<const Vec3> gt,
                         const SimConfig& cfg) {
    PFLOW_CHECK(!pred.empty() && !gt.empty(), "max_density_error: empty cloud");
    const auto rp = density(pred, cfg);
    const auto rg = density(gt, cfg);
    const float mp = *std::max_element(rp.begin(), rp.end());
    const float mg = *std::max_element(rg.begin(), rg.end());
    PFLOW_CHECK(mg > 0.f, "max_density_error: zero ground-truth max density");
    return std::abs(1.0 - static_cast<double>(mp) / static_cast<double>(mg));
}

EvalReport eval_sequences(const FrameSequence& pred, const FrameSequence& gt,
                          const SimConfig& cfg, std::uint64_t emd_seed) {
    EvalReport r;
    r.emd_subsample_seed = emd_seed;
    const std::size_t n = std::min(pred.frame_count(), gt.frame_count());
    PFLOW_CHECK(n > 0, "eval: no overlapping frames");
    double dn_sum = 0, w_sum = 0;
    for (std::size_t f = 0; f < n; ++f) {
        FrameMetrics fm;
        fm.frame = static_cast<int>(f);
        fm.index_error_mm = pred.frames[f].pos.size() == gt.frames[f].pos.size()
                                ? avg_pos_error_mm(pred.frames[f].pos, gt.frames[f].pos)
                                : std::numeric_limits<double>::quiet_NaN();
        fm.seq_distance_mm = seq_distance_mm(gt.frames[f].pos, pred.frames[f].pos);
        fm.wasserstein_mm =
            wasserstein_mm(pred.frames[f].pos, gt.frames[f].pos, emd_seed + f);
        fm.density_error = max_density_error(pred.frames[f].pos, gt.frames[f].pos, cfg);
        dn_sum += fm.seq_distance_mm;
        w_sum += fm.wasserstein_mm;
        r.max_density_error = std::max(r.max_density_error, fm.density_error);
        r.frames.push_back(fm);
    }
    r.seq_distance_dn_mm = dn_sum / n;
    r.wasserstein_mm = w_sum / n;
    if (n > 1) r.avg_pos_error_t1_mm = r.frames[1].index_error_mm;
    if (n > 2) r.avg_pos_error_t2_mm = r.frames[2].index_error_mm;
    return r;
}

void eval_model_short_horizon(const ModelParams& model, const FrameSequence& gt,
                              const SimConfig& cfg, int stride, double& t1_mm, double& t2_mm) {
    PFLOW_CHECK(gt.frame_count() >= 3, "eval: need at least 3 ground-truth frames");
    double s1 = 0, s2 = 0;
    int count = 0;
    for (std::size_t t0 = 0; t0 + 2 < gt.frame_count(); t0 += stride) {
        SimState st{gt.state_at(t0), static_cast<long>(t0)};
        const SimState s_t1 = step(st, model, cfg);
        s1 += avg_pos_error_mm(s_t1.particles.fluid_pos, gt.frames[t0 + 1].pos);
        const SimState s_t2 = step(s_t1, model, cfg);
        s2 += avg_pos_error_mm(s_t2.particles.fluid_pos, gt.frames[t0 + 2].pos);
        ++count;
    }
    t1_mm = s1 / count;
    t2_mm = s2 / count;
}

std::string report_csv(const EvalReport& r) {
    std::string out = "metric,frame,value\n";
    char buf[128];
    auto row = [&](const char* name, int frame, double v) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%.9g\n", name, frame, v);
        out += buf;
    };
    row("avg_pos_error_t1_mm", -1, r.avg_pos_error_t1_mm);
    row("avg_pos_error_t2_mm", -1, r.avg_pos_error_t2_mm);
    row("seq_distance_dn_mm", -1, r.seq_distance_dn_mm);
    row("wasserstein_mm", -1, r.wasserstein_mm);
    row("max_density_error", -1, r.max_density_error);
    for (const auto& f : r.frames) {
        row("index_error_mm", f.frame, f.index_error_mm);
        row("seq_distance_mm", f.frame, f.seq_distance_mm);
        row("wasserstein_mm", f.frame, f.wasserstein_mm);
        row("density_error", f.frame, f.density_error);
    }
    return out;
}

std::string report_json(const EvalReport& r) {
    nlohmann::json j;
    j["avg_pos_error_t1_mm"] = r.avg_pos_error_t1_mm;
    j["avg_pos_error_t2_mm"] = r.avg_pos_error_t2_mm;
    j["seq_distance_dn_mm"] = r.seq_distance_dn_mm;
    j["wasserstein_mm"] = r.wasserstein_mm;
    j["max_density_error"] = r.max_density_error;
    j["emd_subsample_seed"] = r.emd_subsample_seed;
    j["frames"] = r.frames.size();
    return j.dump(2);
}

}  // namespace pflow
