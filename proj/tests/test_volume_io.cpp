#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cbfuse/rng.hpp"
#include "cbfuse/volume_io.hpp"

using namespace cbfuse;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = CBFUSE_FIXTURE_DIR;

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("native volume round-trip is bit exact") {
  GridGeometry g;
  g.dims = {5, 6, 7};
  g.spacing = {0.5, 2.0, 1.25};
  g.origin = {-3.25, 0.0, 11.5};
  Volume v = Volume::zeros(g);
  Rng rng(99);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform(-1.0, 2.0));

  std::string path = tmp_path("roundtrip.cbv");
  store_volume(v, path);
  Volume back = load_scalar_volume(path);
  CHECK(back.grid.dims == g.dims);
  CHECK(back.grid.spacing == g.spacing);
  CHECK(back.grid.origin == g.origin);
  CHECK(back.data == v.data);
  std::remove(path.c_str());
}

TEST_CASE("native label round-trip is bit exact") {
  GridGeometry g = centered_grid({4, 4, 4}, {2, 2, 2});
  LabelVolume lab = LabelVolume::zeros(g);
  lab.at(1, 1, 1) = 1;
  lab.at(2, 2, 2) = 2;
  std::string path = tmp_path("roundtrip_labels.cbv");
  store_labels(lab, path);
  LabelVolume back = load_label_volume(path);
  CHECK(back.labels == lab.labels);
  CHECK(back.grid.same_lattice(g));
  std::remove(path.c_str());
}

TEST_CASE("loading the wrong payload kind throws") {
  GridGeometry g = centered_grid({3, 3, 3}, {1, 1, 1});
  std::string vp = tmp_path("kind_v.cbv"), lp = tmp_path("kind_l.cbv");
  store_volume(Volume::zeros(g), vp);
  store_labels(LabelVolume::zeros(g), lp);
  CHECK_THROWS_AS(load_label_volume(vp), UnsupportedFormat);
  CHECK_THROWS_AS(load_scalar_volume(lp), UnsupportedFormat);
  std::remove(vp.c_str());
  std::remove(lp.c_str());
}

TEST_CASE("truncated native file reports a corrupt header") {
  GridGeometry g = centered_grid({4, 4, 4}, {1, 1, 1});
  std::string path = tmp_path("trunc.cbv");
  store_volume(Volume::zeros(g), path);
  auto size = fs::file_size(path);
  fs::resize_file(path, size / 2);
  CHECK_THROWS_AS(load_volume(path), CorruptHeader);
  fs::resize_file(path, 6);
  CHECK_THROWS_AS(load_volume(path), CorruptHeader);
  std::remove(path.c_str());
}

TEST_CASE("unknown files are rejected as unsupported") {
  std::string path = tmp_path("noise.bin");
  std::ofstream(path) << "this is not a volume";
  CHECK_THROWS_AS(load_volume(path), UnsupportedFormat);
  std::remove(path.c_str());
}

TEST_CASE("NIfTI float32 fixture maps dims, pixdim and qoffset") {
  Volume v = load_scalar_volume(kFixtures + "/f32.nii");
  CHECK(v.grid.dims == Index3{4, 4, 4});
  CHECK(v.grid.spacing == Vec3{2.0, 2.0, 2.0});
  CHECK(v.grid.origin == Vec3{1.0, 2.0, 3.0});
  for (int i = 0; i < 64; ++i) CHECK(v.data[i] == static_cast<float>(i));
}

TEST_CASE("NIfTI int16 fixture honors scl_slope and scl_inter") {
  Volume v = load_scalar_volume(kFixtures + "/i16.nii");
  CHECK(v.grid.spacing == Vec3{1.5, 1.5, 3.0});
  for (int i = 0; i < 64; ++i) CHECK(v.data[i] == doctest::Approx(0.5 * i - 100.0));
}

TEST_CASE("truncated NIfTI files report a corrupt header") {
  CHECK_THROWS_AS(load_volume(kFixtures + "/truncated.nii"), CorruptHeader);
  CHECK_THROWS_AS(load_volume(kFixtures + "/short_payload.nii"), CorruptHeader);
}
