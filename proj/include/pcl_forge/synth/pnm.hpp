#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <string>

#include "pcl_forge/common/error.hpp"
#include "pcl_forge/synth/image.hpp"

namespace pclf::synth {

// Binary PPM (P6) / PGM (P5), 8-bit.

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::string buf(img.pixels.size(), '\0');
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    buf[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0)));
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

inline void write_pgm(const std::filesystem::path& path, const Mask& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "P5\n" << m.width << " " << m.height << "\n255\n";
  std::string buf(m.bits.size(), '\0');
  for (std::size_t i = 0; i < m.bits.size(); ++i) buf[i] = static_cast<char>(m.bits[i] ? 255 : 0);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

namespace detail {

inline int read_pnm_int(std::istream& is) {
  int c = is.peek();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else {
      is.get();
    }
    c = is.peek();
  }
  int v = -1;
  is >> v;
  if (!is || v < 0) throw IoError("malformed PNM header");
  return v;
}

inline std::string read_pnm(const std::filesystem::path& path, const char* magic, int channels, int& w, int& h) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  std::string m(2, '\0');
  is.read(m.data(), 2);
  if (m != magic) throw IoError("unexpected PNM magic in " + path.string());
  w = read_pnm_int(is);
  h = read_pnm_int(is);
  const int maxval = read_pnm_int(is);
  if (maxval != 255) throw IoError("only 8-bit PNM supported: " + path.string());
  is.get();
  std::string buf(static_cast<std::size_t>(w) * h * channels, '\0');
  is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (is.gcount() != static_cast<std::streamsize>(buf.size())) throw IoError("truncated PNM: " + path.string());
  return buf;
}

}  // namespace detail

inline Image read_ppm(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const std::string buf = detail::read_pnm(path, "P6", 3, w, h);
  Image img(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) img.pixels[i] = static_cast<unsigned char>(buf[i]) / 255.0;
  return img;
}

inline Mask read_pgm(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const std::string buf = detail::read_pnm(path, "P5", 1, w, h);
  Mask m(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) m.bits[i] = static_cast<unsigned char>(buf[i]) >= 128 ? 1 : 0;
  return m;
}

}  // namespace pclf::synth
