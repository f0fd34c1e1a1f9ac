#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "ldct/data.hpp"
#include "ldct/tensor_io.hpp"
#include "test_util.hpp"

using namespace ldct;

TEST_CASE("normalization is the documented scale and an exact inverse") {
  CHECK(normalize_hu(TensorF(1, 1, 1, 1, 512.0f))[0] == 1.0f);
  CHECK(normalize_hu(TensorF(1, 1, 1, 1, 0.0f))[0] == 0.0f);

  Rng rng(71);
  const TensorF hu = test::random_tensor<float>({1, 1, 8, 8}, rng, -1024, 3071);
  const TensorF round = denormalize_hu(normalize_hu(hu));
  CHECK(round == hu);  // /512 and *512 only shift the exponent
  const TensorF round2 = normalize_hu(denormalize_hu(hu));
  CHECK(round2 == hu);
}

TEST_CASE("extract_patches samples contained, reproducible pairs") {
  Rng rng(72);
  const TensorF stacked = test::random_tensor<float>({1, 2, 64, 48}, rng);
  const TensorF target = test::random_tensor<float>({1, 1, 64, 48}, rng);

  Rng s1(5);
  const PatchSet set = extract_patches(stacked, target, 150, 40, s1);
  CHECK(set.count() == 150);
  CHECK(set.inputs.shape() == Shape4{150, 2, 40, 40});
  CHECK(set.targets.shape() == Shape4{150, 1, 40, 40});
  for (const PatchCoord& c : set.coords) {
    CHECK(c.y >= 0);
    CHECK(c.y <= 64 - 40);
    CHECK(c.x >= 0);
    CHECK(c.x <= 48 - 40);
  }

  // Identical seed, identical coordinates and pixel data.
  Rng s2(5);
  const PatchSet again = extract_patches(stacked, target, 150, 40, s2);
  CHECK(again.inputs == set.inputs);
  CHECK(again.targets == set.targets);
  for (std::size_t i = 0; i < set.coords.size(); ++i) {
    CHECK(set.coords[i].y == again.coords[i].y);
    CHECK(set.coords[i].x == again.coords[i].x);
  }

  // Input and target crops come from the same coordinates.
  const PatchCoord& c0 = set.coords.front();
  CHECK(set.inputs(0, 0, 0, 0) ==
        stacked(0, 0, static_cast<std::size_t>(c0.y), static_cast<std::size_t>(c0.x)));
  CHECK(set.targets(0, 0, 0, 0) ==
        target(0, 0, static_cast<std::size_t>(c0.y), static_cast<std::size_t>(c0.x)));

  Rng s3(6);
  CHECK_THROWS_AS(extract_patches(stacked, target, 1, 65, s3), ParameterError);
}

namespace {

PatchSet tagged_patches(int patient, std::size_t n, float fill, Rng& rng) {
  const TensorF stacked(1, 1, 8, 8, fill);
  const TensorF target(1, 1, 8, 8, fill);
  PatchSet set = extract_patches(stacked, target, n, 4, rng);
  for (PatchCoord& c : set.coords) c.patient_index = patient;
  return set;
}

}  // namespace

TEST_CASE("shuffle_within_patient keeps patient blocks in order") {
  Rng rng(73);
  std::vector<PatientPatches> groups;
  groups.push_back({0, tagged_patches(0, 100, 0.0f, rng)});
  groups.push_back({1, tagged_patches(1, 50, 1.0f, rng)});

  Rng shuffle_rng(7);
  const PatchSet stream = shuffle_within_patient(groups, shuffle_rng);
  REQUIRE(stream.count() == 150);
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(stream.coords[i].patient_index == 0);
    CHECK(stream.inputs.plane(i, 0)[0] == 0.0f);
  }
  for (std::size_t i = 100; i < 150; ++i) {
    CHECK(stream.coords[i].patient_index == 1);
    CHECK(stream.inputs.plane(i, 0)[0] == 1.0f);
  }
}

TEST_CASE("shuffle_within_patient permutes without loss") {
  // Single patient: the multiset of coordinates is preserved exactly.
  Rng rng(74);
  PatchSet set = tagged_patches(3, 64, 0.5f, rng);
  // Make each patch identifiable through its first pixel.
  for (std::size_t i = 0; i < set.count(); ++i) {
    set.inputs.plane(i, 0)[0] = static_cast<float>(i);
  }
  std::vector<PatientPatches> groups;
  groups.push_back({3, std::move(set)});

  Rng shuffle_rng(8);
  const PatchSet stream = shuffle_within_patient(groups, shuffle_rng);
  std::vector<int> ids;
  for (std::size_t i = 0; i < stream.count(); ++i) {
    ids.push_back(static_cast<int>(stream.inputs.plane(i, 0)[0]));
  }
  std::vector<int> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 64; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  CHECK(ids != sorted);  // overwhelmingly likely for a real permutation
}

TEST_CASE("minibatch cycling carries partial batches across the boundary") {
  Rng rng(75);
  PatchSet stream = tagged_patches(0, 250, 0.0f, rng);
  for (std::size_t i = 0; i < 250; ++i) {
    stream.inputs.plane(i, 0)[0] = static_cast<float>(i);
  }
  MinibatchCycler cycler(stream, 100);
  TensorF in, tgt;
  cycler.next(in, tgt);
  CHECK(in.shape() == Shape4{100, 1, 4, 4});
  CHECK(in.plane(0, 0)[0] == 0.0f);
  cycler.next(in, tgt);
  CHECK(in.plane(0, 0)[0] == 100.0f);
  cycler.next(in, tgt);
  // Third batch: 200..249 then wraps to 0..49.
  CHECK(in.plane(0, 0)[0] == 200.0f);
  CHECK(in.plane(50, 0)[0] == 0.0f);
  CHECK(in.plane(99, 0)[0] == 49.0f);

  const PatchSet empty;
  CHECK_THROWS_AS(MinibatchCycler(empty, 10), ParameterError);
}

TEST_CASE("mlp grid covers the slice with clamped borders") {
  Rng rng(76);
  SUBCASE("512 grid arithmetic") {
    const TensorF slice = test::random_tensor<float>({1, 1, 512, 512}, rng);
    const MlpPatchGrid grid = mlp_extract(slice);
    CHECK(grid.positions.size() == 168 * 168);  // 28,224 patches
    CHECK(grid.inputs.shape() == Shape4{168 * 168, 1, 13, 13});
    // The final corner touches the border exactly.
    CHECK(grid.positions.back().first == 512 - 13);
    CHECK(grid.positions.back().second == 512 - 13);
  }
  SUBCASE("non-divisible extents still touch the border") {
    const TensorF slice = test::random_tensor<float>({1, 1, 61, 47}, rng);
    const MlpPatchGrid grid = mlp_extract(slice);
    int max_y = 0;
    int max_x = 0;
    for (const auto& [y, x] : grid.positions) {
      max_y = std::max(max_y, y);
      max_x = std::max(max_x, x);
    }
    CHECK(max_y == 61 - 13);
    CHECK(max_x == 47 - 13);
  }
  SUBCASE("too-small slices are rejected") {
    const TensorF tiny = test::random_tensor<float>({1, 1, 12, 40}, rng);
    CHECK_THROWS_AS(mlp_extract(tiny), ParameterError);
  }
}

TEST_CASE("identity predictions aggregate back to the slice") {
  Rng rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t h = 16 + rng.uniform_index(60);
    const std::size_t w = 16 + rng.uniform_index(60);
    const TensorF slice =
        test::random_tensor<float>({1, 1, h, w}, rng, -1.0, 1.0);
    const MlpPatchGrid grid = mlp_extract(slice);
    const TensorF rebuilt =
        mlp_aggregate(grid.inputs, grid.positions, h, w);
    CHECK(test::max_abs_diff(rebuilt, slice) < 1e-5);
  }
}

TEST_CASE("constant predictions aggregate to the constant") {
  Rng rng(78);
  const TensorF slice = test::random_tensor<float>({1, 1, 40, 40}, rng);
  const MlpPatchGrid grid = mlp_extract(slice);
  TensorF preds(grid.positions.size(), 1, 13, 13, 3.25f);
  const TensorF out = mlp_aggregate(preds, grid.positions, 40, 40);
  for (const float v : out.values()) CHECK(v == doctest::Approx(3.25f).epsilon(1e-6));
}

TEST_CASE("manifest round trip") {
  test::TempDir dir("manifest");
  DatasetManifest m;
  m.root = dir.path;
  m.seed = 314159;
  m.dose_fraction = 0.25;
  m.incident_photons = 1e5;
  m.size = 64;
  m.n_angles = 180;
  m.n_detectors = 95;
  m.pixel_spacing_mm = 5.3125;
  m.mu_water = 0.02;
  PatientRecord p;
  p.id = "patient_00";
  p.split = Split::train;
  p.patient_seed = 777;
  p.slices.push_back({0, "patient_00/slice_000_normal.ten",
                      "patient_00/slice_000_low.ten", 11, 12});
  m.patients.push_back(p);
  p.id = "patient_01";
  p.split = Split::test;
  m.patients.push_back(p);

  save_manifest(m);
  const DatasetManifest back = load_manifest(dir.path);
  CHECK(back.seed == m.seed);
  CHECK(back.dose_fraction == m.dose_fraction);
  CHECK(back.n_detectors == 95);
  REQUIRE(back.patients.size() == 2);
  CHECK(back.patients[0].split == Split::train);
  CHECK(back.patients[1].split == Split::test);
  CHECK(back.patients[0].slices[0].seed_low == 12);
  CHECK(back.split_patients(Split::train).size() == 1);
  CHECK(back.slice_count(Split::test) == 1);

  CHECK_THROWS_AS(load_manifest(dir.path / "absent"), FormatError);
}

TEST_CASE("patch audit csv") {
  test::TempDir dir("audit");
  const std::vector<PatchCoord> coords{{0, 3, 7, 9}, {1, 0, 2, 4}};
  const auto path = dir.path / "audit.csv";
  write_patch_audit_csv(coords, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "patient,slice,y,x");
  std::getline(f, line);
  CHECK(line == "0,3,7,9");
}
