#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace pdcvit {

// 8-bit interleaved pixels, channels 1 (gray) or 3 (RGB).
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;
};

// PNG (8-bit gray, gray+alpha, RGB, RGBA; alpha dropped) or binary PNM
// (P5/P6, maxval 255), picked by file signature.
Image8 read_image(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const Image8& image);
void write_ppm(const std::filesystem::path& path, const Image8& image);

bool is_supported_image(const std::filesystem::path& path);

}  // namespace pdcvit
