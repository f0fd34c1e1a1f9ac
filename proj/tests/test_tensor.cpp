#include <doctest.h>

#include <cstring>
#include <fstream>

#include "ldct/tensor.hpp"
#include "ldct/tensor_io.hpp"
#include "test_util.hpp"

using namespace ldct;

TEST_CASE("tensor shape and indexing") {
  TensorF t(2, 3, 4, 5);
  CHECK(t.size() == 120);
  CHECK(t.batch() == 2);
  CHECK(t.channels() == 3);
  CHECK(t.height() == 4);
  CHECK(t.width() == 5);
  t(1, 2, 3, 4) = 7.0f;
  CHECK(t[t.size() - 1] == 7.0f);
  CHECK(t.plane(1, 2)[3 * 5 + 4] == 7.0f);
}

TEST_CASE("from_external validates length and finiteness") {
  CHECK_THROWS_AS(TensorF::from_external({1, 1, 2, 2}, {1.f, 2.f, 3.f}),
                  ShapeError);
  std::vector<float> bad{1.f, 2.f, 3.f, std::numeric_limits<float>::quiet_NaN()};
  CHECK_THROWS_AS(TensorF::from_external({1, 1, 2, 2}, std::move(bad)),
                  NumericError);
  std::vector<float> good{1.f, 2.f, 3.f, 4.f};
  const TensorF t = TensorF::from_external({1, 1, 2, 2}, std::move(good));
  CHECK(t(0, 0, 1, 1) == 4.0f);
}

TEST_CASE("reshaped preserves data and rejects volume changes") {
  Rng rng(1);
  const TensorF t = test::random_tensor<float>({2, 3, 4, 5}, rng);
  const TensorF r = t.reshaped({1, 1, 6, 20});
  CHECK(r.values()[17] == t.values()[17]);
  CHECK_THROWS_AS(t.reshaped({1, 1, 1, 7}), ShapeError);
}

TEST_CASE("ten file round trip is bitwise") {
  test::TempDir dir("ten");
  Rng rng(2);
  TensorF t = test::random_tensor<float>({2, 3, 5, 7}, rng, -100.0, 100.0);
  t[0] = -0.0f;
  const auto path = dir.path / "t.ten";
  write_tensor(path, t);
  const TensorF back = read_tensor(path);
  CHECK(back.shape() == t.shape());
  REQUIRE(back.size() == t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(std::memcmp(&back[i], &t[i], sizeof(float)) == 0);
  }
}

TEST_CASE("rank-2 slices load with unit leading extents") {
  test::TempDir dir("ten2");
  Rng rng(3);
  const TensorF slice = test::random_tensor<float>({1, 1, 6, 4}, rng);
  const auto path = dir.path / "s.ten";
  write_tensor(path, slice);
  const TensorF back = read_tensor(path);
  CHECK(back.shape() == Shape4{1, 1, 6, 4});
  CHECK(test::max_abs_diff(back, slice) == 0.0);

  // On-disk rank should actually be 2 for a slice.
  std::ifstream f(path, std::ios::binary);
  char header[8];
  f.read(header, 8);
  CHECK(header[4] == 2);
}

TEST_CASE("ten reader rejects corruption") {
  test::TempDir dir("tenbad");
  Rng rng(4);
  const TensorF t = test::random_tensor<float>({1, 1, 4, 4}, rng);
  const auto path = dir.path / "t.ten";
  write_tensor(path, t);

  SUBCASE("truncated payload") {
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
    CHECK_THROWS_AS(read_tensor(path), FormatError);
  }
  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
    f.close();
    CHECK_THROWS_AS(read_tensor(path), FormatError);
  }
  SUBCASE("non-finite payload") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8 + 8);  // past magic, rank, two extents
    const std::uint32_t nan_bits = 0x7fc00000u;
    f.write(reinterpret_cast<const char*>(&nan_bits), 4);
    f.close();
    CHECK_THROWS_AS(read_tensor(path), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_tensor(dir.path / "absent.ten"), FormatError);
  }
}
