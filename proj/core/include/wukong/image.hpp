#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace wukong {

// 8-bit grayscale image.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major, height*width
};

// Binary PGM (P5), maxval 255.
void write_pgm(const std::string& path, const Image& img);
Image read_pgm(const std::string& path);

}  // namespace wukong
