#include "sofpi/jrrt.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sofpi {
namespace {

constexpr char kMagic[8] = {'J', 'R', 'R', 'T', '0', '0', '0', '1'};

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("JRRT: truncated input");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    value |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return value;
}

}  // namespace

std::string encode_jrrt(const Tensor& t) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
  out.reserve(out.size() + 8 * t.size());
  for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Tensor decode_jrrt(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw IoError("JRRT: bad magic");
  std::size_t pos = sizeof(kMagic);
  const auto rank = get_le<std::uint32_t>(bytes, pos);
  if (rank == 0) throw IoError("JRRT: rank 0 is not supported");
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::size_t>(get_le<std::uint64_t>(bytes, pos));
  const std::size_t n = shape_numel(shape);
  if (bytes.size() - pos != 8 * n) throw IoError("JRRT: payload length does not match shape " + shape_string(shape));
  std::vector<double> data(n);
  for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
  return Tensor(std::move(shape), std::move(data));
}

void write_jrrt(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_jrrt(t);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

Tensor read_jrrt(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return decode_jrrt(ss.str());
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace sofpi
