#include "pflow/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace pflow {
namespace {

void check_finite(const std::vector<Vec3>& v, const char* field, std::vector<Violation>& out) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!is_finite(v[i])) {
            out.push_back({field, static_cast<std::int64_t>(i), "component not finite"});
        }
    }
}

std::uint64_t pos_bits(const Vec3& p) {
    // Exact-duplicate detection compares bit patterns, so -0.0 and 0.0 are
    // distinct and no tolerance is involved.
    std::uint32_t b[3];
    std::memcpy(b, &p, sizeof(b));
    std::uint64_t h = 1469598103934665603ULL;
    for (std::uint32_t w : b) {
        h ^= w;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

ParticleSet FrameSequence::state_at(std::size_t t) const {
    ParticleSet p;
    p.fluid_pos = frames[t].pos;
    p.fluid_vel = frames[t].vel;
    p.solid_pos = solid_pos;
    p.solid_normal = solid_normal;
    return p;
}

std::string Violation::str() const {
    std::string s = where;
    if (index >= 0) s += "[" + std::to_string(index) + "]";
    return s + ": " + predicate;
}

std::vector<Violation> validate(const ParticleSet& scene, const SimConfig& cfg) {
    std::vector<Violation> out;

    if (scene.fluid_vel.size() != scene.fluid_pos.size())
        out.push_back({"fluid_vel", -1, "length differs from fluid_pos"});
    if (scene.solid_normal.size() != scene.solid_pos.size())
        out.push_back({"solid_normal", -1, "length differs from solid_pos"});

    check_finite(scene.fluid_pos, "fluid_pos", out);
    check_finite(scene.fluid_vel, "fluid_vel", out);
    check_finite(scene.solid_pos, "solid_pos", out);
    check_finite(scene.solid_normal, "solid_normal", out);

    for (std::size_t i = 0; i < scene.solid_normal.size(); ++i) {
        const Vec3& n = scene.solid_normal[i];
        if (!is_finite(n)) continue;  // already reported
        float len = norm(n);
        if (std::abs(len - 1.f) > 1e-6f)
            out.push_back({"solid_normal", static_cast<std::int64_t>(i),
                           "norm is " + std::to_string(len) + ", expected 1 +/- 1e-6"});
    }

    // No two fluid particles may coincide exactly (min pairwise distance > 0).
    if (scene.fluid_pos.size() > 1) {
        std::vector<std::pair<std::uint64_t, std::uint32_t>> keyed(scene.fluid_pos.size());
        for (std::size_t i = 0; i < scene.fluid_pos.size(); ++i)
            keyed[i] = {pos_bits(scene.fluid_pos[i]), static_cast<std::uint32_t>(i)};
        std::sort(keyed.begin(), keyed.end());
        for (std::size_t i = 1; i < keyed.size(); ++i) {
            if (keyed[i].first != keyed[i - 1].first) continue;
            std::uint32_t a = keyed[i - 1].second, b = keyed[i].second;
            if (scene.fluid_pos[a] == scene.fluid_pos[b])
                out.push_back({"fluid_pos", static_cast<std::int64_t>(std::max(a, b)),
                               "coincides exactly with fluid_pos[" +
                                   std::to_string(std::min(a, b)) + "]"});
        }
    }

    if (!(cfg.dt > 0.f)) out.push_back({"cfg.dt", -1, "must be > 0"});
    if (!(cfg.support_radius_R > 0.f)) out.push_back({"cfg.support_radius_R", -1, "must be > 0"});
    if (!(cfg.particle_radius_h > 0.f)) out.push_back({"cfg.particle_radius_h", -1, "must be > 0"});
    if (!(cfg.rest_density > 0.f)) out.push_back({"cfg.rest_density", -1, "must be > 0"});
    if (!(cfg.particle_mass > 0.f)) out.push_back({"cfg.particle_mass", -1, "must be > 0"});
    const int res[3] = {cfg.kernel_resolution.nx, cfg.kernel_resolution.ny,
                        cfg.kernel_resolution.nz};
    for (int a = 0; a < 3; ++a) {
        if (res[a] < 2 || res[a] % 2 != 0)
            out.push_back({"cfg.kernel_resolution", a, "components must be even and >= 2"});
    }
    return out;
}

std::vector<Violation> validate(const FrameSequence& seq, const SimConfig& cfg) {
    std::vector<Violation> out;
    if (seq.frames.empty()) {
        out.push_back({"frames", -1, "sequence has no frames"});
        return out;
    }
    const std::size_t n = seq.frames[0].pos.size();
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
        if (seq.frames[t].pos.size() != n || seq.frames[t].vel.size() != n)
            out.push_back({"frames", static_cast<std::int64_t>(t),
                           "fluid count differs from frame 0"});
    }
    if (!(seq.dt > 0.f)) out.push_back({"dt", -1, "must be > 0"});
    for (std::size_t t : {std::size_t{0}, seq.frames.size() - 1}) {
        auto frame_violations = validate(seq.state_at(t), cfg);
        for (auto& v : frame_violations) {
            v.where = "frame " + std::to_string(t) + "." + v.where;
            out.push_back(std::move(v));
        }
        if (seq.frames.size() == 1) break;
    }
    return out;
}

}  // namespace pflow
