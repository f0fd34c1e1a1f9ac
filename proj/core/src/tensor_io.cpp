#include "ldct/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace ldct {

namespace {

constexpr char kMagic[4] = {'C', 'D', 'T', '1'};

void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void write_tensor(const std::filesystem::path& path, const TensorF& t) {
  const Shape4& s = t.shape();
  // Drop leading unit extents, keeping at least rank 2.
  std::size_t first = 0;
  while (first < 2 && s[first] == 1) ++first;
  const std::size_t rank = 4 - first;

  std::vector<unsigned char> buf;
  buf.reserve(4 + 4 + 4 * rank + 4 * t.size());
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u32_le(buf, static_cast<std::uint32_t>(rank));
  for (std::size_t i = first; i < 4; ++i) {
    put_u32_le(buf, static_cast<std::uint32_t>(s[i]));
  }
  for (const float v : t.values()) {
    put_u32_le(buf, std::bit_cast<std::uint32_t>(v));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw FormatError("cannot open for writing: " + path.string());
  }
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (!f) {
    throw FormatError("short write: " + path.string());
  }
}

TensorF read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw FormatError("cannot open for reading: " + path.string());
  }
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());

  if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError("not a .ten file (bad magic): " + path.string());
  }
  const std::uint32_t rank = get_u32_le(buf.data() + 4);
  if (rank < 1 || rank > 4) {
    throw FormatError("unsupported tensor rank " + std::to_string(rank) + ": " +
                      path.string());
  }
  if (buf.size() < 8 + 4 * static_cast<std::size_t>(rank)) {
    throw FormatError("truncated header: " + path.string());
  }

  Shape4 shape{1, 1, 1, 1};
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[4 - rank + i] = get_u32_le(buf.data() + 8 + 4 * i);
  }
  const std::size_t count = shape_volume(shape);
  const std::size_t expected = 8 + 4 * static_cast<std::size_t>(rank) + 4 * count;
  if (buf.size() != expected) {
    throw FormatError("payload size mismatch (" + std::to_string(buf.size()) +
                      " bytes, expected " + std::to_string(expected) + "): " +
                      path.string());
  }

  std::vector<float> values(count);
  const unsigned char* p = buf.data() + 8 + 4 * rank;
  for (std::size_t i = 0; i < count; ++i, p += 4) {
    values[i] = std::bit_cast<float>(get_u32_le(p));
  }

  try {
    return TensorF::from_external(shape, std::move(values));
  } catch (const NumericError&) {
    throw FormatError("non-finite value in tensor payload: " + path.string());
  }
}

}  // namespace ldct
