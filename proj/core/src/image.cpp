#include "wukong/image.hpp"

#include <fstream>
#include <stdexcept>

namespace wukong {

void write_pgm(const std::string& path, const Image& img) {
  if (img.width < 1 || img.height < 1 ||
      img.pixels.size() != static_cast<size_t>(img.width) * img.height)
    throw std::invalid_argument("write_pgm: inconsistent image dimensions");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_pgm: cannot open '" + path + "'");
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw std::runtime_error("write_pgm: short write to '" + path + "'");
}

Image read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_pgm: cannot open '" + path + "'");
  std::string magic;
  f >> magic;
  if (magic != "P5") throw std::runtime_error("read_pgm: not a P5 PGM");
  int w, h, maxval;
  f >> w >> h >> maxval;
  if (maxval != 255) throw std::runtime_error("read_pgm: unsupported maxval");
  f.get();  // single whitespace after header
  Image img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<size_t>(w) * h);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw std::runtime_error("read_pgm: truncated pixel data");
  return img;
}

}  // namespace wukong
