#include "pflow/frame_io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "pflow/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "frame format writer assumes a little-endian host");

namespace pflow {
namespace {

constexpr char kMagic[4] = {'F', 'L', 'P', 'F'};

void put_u32(std::string& out, std::uint32_t v) {
    out.append(reinterpret_cast<const char*>(&v), 4);
}

void put_f32(std::string& out, float v) { out.append(reinterpret_cast<const char*>(&v), 4); }

void put_vecs(std::string& out, const std::vector<Vec3>& v) {
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(Vec3));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    const std::string& path;

    void need(std::size_t n, const char* what) {
        if (pos + n > buf.size())
            throw Error("read_frames: " + path + ": truncated " + what + " at byte offset " +
                        std::to_string(pos) + " (need " + std::to_string(n) + ", have " +
                        std::to_string(buf.size() - pos) + ")");
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    float f32(const char* what) {
        need(4, what);
        float v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    std::vector<Vec3> vecs(std::size_t n, const char* what) {
        need(n * sizeof(Vec3), what);
        std::vector<Vec3> v(n);
        std::memcpy(v.data(), buf.data() + pos, n * sizeof(Vec3));
        pos += n * sizeof(Vec3);
        return v;
    }
};

}  // namespace

void write_frames(const std::string& path, const FrameSequence& seq) {
    const std::uint32_t frames = static_cast<std::uint32_t>(seq.frame_count());
    const std::uint32_t fluid = static_cast<std::uint32_t>(seq.fluid_count());
    const std::uint32_t solid = static_cast<std::uint32_t>(seq.solid_pos.size());
    for (const auto& f : seq.frames)
        PFLOW_CHECK(f.pos.size() == fluid && f.vel.size() == fluid,
                    "write_frames: inconsistent fluid count across frames");
    PFLOW_CHECK(seq.solid_normal.size() == solid,
                "write_frames: solid_normal length differs from solid_pos");

    std::string out;
    out.reserve(24 + (solid * 2 + static_cast<std::size_t>(frames) * fluid * 2) * sizeof(Vec3));
    out.append(kMagic, 4);
    put_u32(out, kFrameFormatVersion);
    put_u32(out, frames);
    put_u32(out, fluid);
    put_u32(out, solid);
    put_f32(out, seq.dt);
    put_vecs(out, seq.solid_pos);
    put_vecs(out, seq.solid_normal);
    for (const auto& f : seq.frames) {
        put_vecs(out, f.pos);
        put_vecs(out, f.vel);
    }

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    PFLOW_CHECK(os.good(), "write_frames: cannot open " + path);
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    PFLOW_CHECK(os.good(), "write_frames: write failed for " + path);
}

FrameSequence read_frames(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    PFLOW_CHECK(is.good(), "read_frames: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    Reader r{buf, 0, path};
    r.need(4, "magic");
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw Error("read_frames: " + path + ": bad magic at byte offset 0");
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != kFrameFormatVersion)
        throw Error("read_frames: " + path + ": unsupported format_version " +
                    std::to_string(version));
    const std::uint32_t frames = r.u32("frame_count");
    const std::uint32_t fluid = r.u32("fluid_count");
    const std::uint32_t solid = r.u32("solid_count");

    FrameSequence seq;
    seq.dt = r.f32("dt");
    seq.scene_id = std::filesystem::path(path).stem().string();
    seq.solid_pos = r.vecs(solid, "solid_pos");
    seq.solid_normal = r.vecs(solid, "solid_normal");
    seq.frames.reserve(frames);
    for (std::uint32_t f = 0; f < frames; ++f) {
        FluidFrame fr;
        fr.pos = r.vecs(fluid, "fluid_pos");
        fr.vel = r.vecs(fluid, "fluid_vel");
        seq.frames.push_back(std::move(fr));
    }
    if (r.pos != buf.size())
        throw Error("read_frames: " + path + ": " + std::to_string(buf.size() - r.pos) +
                    " trailing bytes at offset " + std::to_string(r.pos));
    return seq;
}

}  // namespace pflow
