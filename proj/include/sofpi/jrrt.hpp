// JRRT tensor files: magic "JRRT0001", u32 LE rank, rank x u64 LE extents,
// then the payload as little-endian IEEE-754 doubles in row-major order.

#pragma once

#include <filesystem>
#include <string>

#include "sofpi/tensor.hpp"

namespace sofpi {

class IoError : public Error {
 public:
  using Error::Error;
};

std::string encode_jrrt(const Tensor& t);
Tensor decode_jrrt(const std::string& bytes);

void write_jrrt(const std::filesystem::path& path, const Tensor& t);
Tensor read_jrrt(const std::filesystem::path& path);

}  // namespace sofpi
