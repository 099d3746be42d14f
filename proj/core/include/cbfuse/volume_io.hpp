#pragma once

#include <string>
#include <variant>

#include "cbfuse/volume.hpp"

namespace cbfuse {

// Native container: 4-byte magic "CBV1", u32 little-endian header length, a
// JSON header {dims, spacing, origin, dtype}, then the raw payload. dtype is
// "f32" (little-endian float32) for scalar volumes and "u8" for labels.
// Round-trips are lossless.
void store_volume(const Volume& vol, const std::string& path);
void store_labels(const LabelVolume& labels, const std::string& path);

using LoadedVolume = std::variant<Volume, LabelVolume>;

// Loads either a native .cbv file or an uncompressed single-file NIfTI-1 .nii
// (int16/float32, 348-byte header; dim/pixdim and scl_slope/scl_inter are
// honored, qoffset becomes the origin).
LoadedVolume load_volume(const std::string& path);

// Convenience wrappers that throw UnsupportedFormat on the wrong payload kind.
Volume load_scalar_volume(const std::string& path);
LabelVolume load_label_volume(const std::string& path);

}  // namespace cbfuse
