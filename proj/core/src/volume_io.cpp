#include "cbfuse/volume_io.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace cbfuse {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'C', 'B', 'V', '1'};

void write_all(std::ofstream& f, const void* p, std::size_t n, const std::string& path) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!f) throw IoFailure("write failed: " + path);
}

json grid_header(const GridGeometry& g, const char* dtype) {
  return json{{"dims", {g.dims[0], g.dims[1], g.dims[2]}},
              {"spacing", {g.spacing[0], g.spacing[1], g.spacing[2]}},
              {"origin", {g.origin[0], g.origin[1], g.origin[2]}},
              {"dtype", dtype}};
}

void store_payload(const std::string& path, const GridGeometry& grid, const char* dtype,
                   const void* payload, std::size_t payload_bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open for writing: " + path);
  std::string header = grid_header(grid, dtype).dump();
  uint32_t hlen = static_cast<uint32_t>(header.size());
  write_all(f, kMagic, 4, path);
  write_all(f, &hlen, 4, path);
  write_all(f, header.data(), header.size(), path);
  write_all(f, payload, payload_bytes, path);
}

GridGeometry grid_from_header(const json& h) {
  GridGeometry g;
  for (int a = 0; a < 3; ++a) {
    g.dims[a] = h.at("dims").at(a).get<int>();
    g.spacing[a] = h.at("spacing").at(a).get<double>();
    g.origin[a] = h.at("origin").at(a).get<double>();
  }
  g.validate();
  return g;
}

LoadedVolume load_native(const std::string& path, std::ifstream& f) {
  char magic[4];
  uint32_t hlen = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&hlen), 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) throw CorruptHeader("bad magic: " + path);
  if (hlen == 0 || hlen > (1u << 20)) throw CorruptHeader("implausible header length: " + path);
  std::string header(hlen, '\0');
  f.read(header.data(), hlen);
  if (!f) throw CorruptHeader("truncated header: " + path);

  json h;
  try {
    h = json::parse(header);
  } catch (const json::exception&) {
    throw CorruptHeader("unparsable header: " + path);
  }
  GridGeometry grid;
  std::string dtype;
  try {
    grid = grid_from_header(h);
    dtype = h.at("dtype").get<std::string>();
  } catch (const json::exception&) {
    throw CorruptHeader("incomplete header: " + path);
  }

  std::size_t n = grid.voxel_count();
  if (dtype == "f32") {
    std::vector<float> data(n);
    f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * 4));
    if (!f) throw CorruptHeader("truncated payload: " + path);
    return Volume(grid, std::move(data));
  }
  if (dtype == "u8") {
    std::vector<uint8_t> data(n);
    f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n));
    if (!f) throw CorruptHeader("truncated payload: " + path);
    return LabelVolume(grid, std::move(data));
  }
  throw UnsupportedFormat("unknown dtype '" + dtype + "': " + path);
}

template <typename T>
T read_le(const unsigned char* buf) {
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

// Minimal NIfTI-1 reader: uncompressed, single-file, int16/float32 only.
LoadedVolume load_nifti(const std::string& path, std::ifstream& f) {
  unsigned char hdr[348];
  f.read(reinterpret_cast<char*>(hdr), 348);
  if (!f) throw CorruptHeader("truncated NIfTI header: " + path);

  int32_t sizeof_hdr = read_le<int32_t>(hdr + 0);
  if (sizeof_hdr != 348) throw CorruptHeader("NIfTI sizeof_hdr != 348: " + path);
  if (std::memcmp(hdr + 344, "n+1\0", 4) != 0) {
    if (std::memcmp(hdr + 344, "ni1\0", 4) == 0)
      throw UnsupportedFormat("two-file NIfTI (.hdr/.img) not supported: " + path);
    throw CorruptHeader("NIfTI magic mismatch: " + path);
  }

  int16_t ndim = read_le<int16_t>(hdr + 40);
  if (ndim < 3) throw CorruptHeader("NIfTI dim[0] < 3: " + path);
  GridGeometry grid;
  for (int a = 0; a < 3; ++a) {
    grid.dims[a] = read_le<int16_t>(hdr + 40 + 2 * (a + 1));
    grid.spacing[a] = read_le<float>(hdr + 76 + 4 * (a + 1));
    grid.origin[a] = read_le<float>(hdr + 268 + 4 * a);  // qoffset_{x,y,z}
  }
  // trailing dims beyond the first three must be degenerate
  for (int a = 4; a <= ndim && a < 8; ++a) {
    int16_t extra = read_le<int16_t>(hdr + 40 + 2 * a);
    if (extra > 1) throw UnsupportedFormat("NIfTI with >3 non-trivial dims: " + path);
  }
  try {
    grid.validate();
  } catch (const BadGeometry&) {
    throw CorruptHeader("NIfTI dim/pixdim check failed: " + path);
  }

  int16_t datatype = read_le<int16_t>(hdr + 70);
  float vox_offset = read_le<float>(hdr + 108);
  float slope = read_le<float>(hdr + 112);
  float inter = read_le<float>(hdr + 116);
  if (slope == 0.0f) {
    slope = 1.0f;
    inter = 0.0f;
  }
  if (vox_offset < 348.0f) throw CorruptHeader("NIfTI vox_offset before header end: " + path);

  f.seekg(static_cast<std::streamoff>(vox_offset), std::ios::beg);
  std::size_t n = grid.voxel_count();
  std::vector<float> data(n);
  if (datatype == 4) {  // DT_INT16
    std::vector<int16_t> raw(n);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 2));
    if (!f) throw CorruptHeader("truncated NIfTI payload: " + path);
    for (std::size_t i = 0; i < n; ++i) data[i] = slope * static_cast<float>(raw[i]) + inter;
  } else if (datatype == 16) {  // DT_FLOAT32
    f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * 4));
    if (!f) throw CorruptHeader("truncated NIfTI payload: " + path);
    if (slope != 1.0f || inter != 0.0f)
      for (auto& v : data) v = slope * v + inter;
  } else {
    throw UnsupportedFormat("NIfTI datatype " + std::to_string(datatype) +
                            " not supported: " + path);
  }
  return Volume(grid, std::move(data));
}

bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

}  // namespace

void store_volume(const Volume& vol, const std::string& path) {
  store_payload(path, vol.grid, "f32", vol.data.data(), vol.data.size() * 4);
}

void store_labels(const LabelVolume& labels, const std::string& path) {
  store_payload(path, labels.grid, "u8", labels.labels.data(), labels.labels.size());
}

LoadedVolume load_volume(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open: " + path);

  char magic[4] = {0, 0, 0, 0};
  f.read(magic, 4);
  if (!f) throw CorruptHeader("file shorter than magic: " + path);
  f.seekg(0, std::ios::beg);

  if (std::memcmp(magic, kMagic, 4) == 0) return load_native(path, f);
  if (has_suffix(path, ".nii")) return load_nifti(path, f);
  throw UnsupportedFormat("not a native volume or .nii file: " + path);
}

Volume load_scalar_volume(const std::string& path) {
  LoadedVolume v = load_volume(path);
  if (auto* vol = std::get_if<Volume>(&v)) return std::move(*vol);
  throw UnsupportedFormat("expected a scalar volume, found labels: " + path);
}

LabelVolume load_label_volume(const std::string& path) {
  LoadedVolume v = load_volume(path);
  if (auto* lab = std::get_if<LabelVolume>(&v)) return std::move(*lab);
  throw UnsupportedFormat("expected labels, found a scalar volume: " + path);
}

}  // namespace cbfuse
