#include "ood/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

#include "ood/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes a little-endian host");

namespace ood {

namespace {

constexpr char kMagic[6] = {'O', 'T', 'N', 'S', 'R', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw ConfigError(std::string("tensor load: truncated ") + what);
  }
  return v;
}

}  // namespace

void save_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic, sizeof kMagic);
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) write_u32(os, static_cast<std::uint32_t>(e));
  const std::uint8_t tag = static_cast<std::uint8_t>(t.dtype());
  os.write(reinterpret_cast<const char*>(&tag), 1);
  if (t.dtype() == DType::F32) {
    std::vector<float> buf(t.values().begin(), t.values().end());
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  } else {
    os.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.values().size() * sizeof(double)));
  }
  if (!os) throw ConfigError("tensor save: write failed");
}

Tensor load_tensor(std::istream& is) {
  char magic[6] = {};
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw ConfigError("tensor load: bad magic (expected OTNSR1)");
  }
  const std::uint32_t rank = read_u32(is, "rank");
  if (rank > 8) throw ConfigError("tensor load: rank " + std::to_string(rank) + " unreasonable");
  Shape shape(rank);
  for (auto& e : shape) e = read_u32(is, "extent");
  std::uint8_t tag = 0;
  if (!is.read(reinterpret_cast<char*>(&tag), 1)) {
    throw ConfigError("tensor load: truncated dtype tag");
  }
  if (tag > 1) throw ConfigError("tensor load: unknown dtype tag " + std::to_string(tag));
  const DType dt = static_cast<DType>(tag);
  const std::int64_t n = numel(shape);
  std::vector<double> data(static_cast<std::size_t>(n));
  if (dt == DType::F32) {
    std::vector<float> buf(static_cast<std::size_t>(n));
    if (!is.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
      throw ConfigError("tensor load: truncated f32 payload");
    }
    for (std::size_t i = 0; i < buf.size(); ++i) data[i] = buf[i];
  } else {
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw ConfigError("tensor load: truncated f64 payload");
    }
  }
  return Tensor::from_data(std::move(shape), data, dt);
}

void save_tensor_file(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open for write: " + path);
  save_tensor(f, t);
}

Tensor load_tensor_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open for read: " + path);
  return load_tensor(f);
}

}  // namespace ood
