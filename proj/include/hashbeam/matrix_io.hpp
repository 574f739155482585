#pragma once

// Debug dump format for complex matrices: a little-endian header of two
// uint64 values (rows, cols) followed by the column-major payload with each
// entry stored as interleaved real/imaginary IEEE float64, little-endian.

#include <Eigen/Dense>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "hashbeam/errors.hpp"

namespace hashbeam {

static_assert(std::endian::native == std::endian::little,
              "matrix dump assumes a little-endian host");

inline void dump_matrix(const Eigen::MatrixXcd& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::uint64_t rows = static_cast<std::uint64_t>(m.rows());
  const std::uint64_t cols = static_cast<std::uint64_t>(m.cols());
  out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
  out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
  // Eigen stores column-major with std::complex<double> laid out as
  // (real, imag) pairs, which is exactly the payload format.
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(std::complex<double>) * m.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline Eigen::MatrixXcd load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::uint64_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
  in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
  if (!in) throw IoError("'" + path.string() + "' is truncated");
  if (rows > (1u << 20) || cols > (1u << 20))
    throw IoError("'" + path.string() + "' has implausible dimensions");
  Eigen::MatrixXcd m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(std::complex<double>) * m.size()));
  if (!in) throw IoError("'" + path.string() + "' is truncated");
  return m;
}

}  // namespace hashbeam
