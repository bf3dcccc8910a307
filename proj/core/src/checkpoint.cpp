#include "tacvit/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace tacvit {

namespace {

void put_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}
void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}
uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

}  // namespace

void save_tvt1(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  f.write("TVT1", 4);
  put_u32(f, static_cast<uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xffff) throw UsageError("checkpoint: tensor name too long: " + t.name);
    if (shape_numel(t.shape) != static_cast<int64_t>(t.values.size()))
      throw ShapeError("checkpoint: shape/value mismatch for " + t.name);
    put_u16(f, static_cast<uint16_t>(t.name.size()));
    f.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    f.put(static_cast<char>(t.shape.size()));
    for (int64_t d : t.shape) put_u32(f, static_cast<uint32_t>(d));
    static_assert(sizeof(float) == 4);
    // f32 little-endian; this targets little-endian hosts
    f.write(reinterpret_cast<const char*>(t.values.data()),
            static_cast<std::streamsize>(t.values.size() * 4));
  }
  if (!f) throw IoError("short write on checkpoint: " + path);
}

std::vector<NamedTensor> load_tvt1(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "TVT1", 4) != 0)
    throw IoError("not a TVT1 checkpoint: " + path);
  uint32_t count = get_u32(f);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    uint16_t nlen = get_u16(f);
    t.name.resize(nlen);
    f.read(t.name.data(), nlen);
    int rank = f.get();
    if (rank < 0) throw IoError("truncated checkpoint: " + path);
    int64_t n = 1;
    for (int r = 0; r < rank; ++r) {
      int64_t d = get_u32(f);
      t.shape.push_back(d);
      n *= d;
    }
    t.values.resize(static_cast<size_t>(n));
    f.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(n * 4));
    if (!f) throw IoError("truncated checkpoint: " + path);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace tacvit
