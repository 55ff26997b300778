#pragma once

#include <string>

#include "pflow/types.hpp"

namespace pflow {

/// Binary frame file, little-endian throughout:
///   magic "FLPF" | u32 format_version | u32 frame_count | u32 fluid_count |
///   u32 solid_count | f32 dt | solid_pos | solid_normal |
///   per frame: fluid_pos then fluid_vel, row-major xyz f32.
inline constexpr std::uint32_t kFrameFormatVersion = 1;

void write_frames(const std::string& path, const FrameSequence& seq);

/// Faults with the failing byte offset on a bad magic, version, or a
/// truncated payload. scene_id is restored from the file stem (the format
/// carries no name field).
FrameSequence read_frames(const std::string& path);

}  // namespace pflow
