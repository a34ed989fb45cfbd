#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tsinet/metrics.hpp"
#include "tsinet/morphology.hpp"

namespace tsinet {

struct GrayImage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;
};

/// Binary PGM (P5, maxval 255) and PPM (P6) with a minimal header.
std::vector<std::uint8_t> encode_pgm(const GrayImage& img);
std::vector<std::uint8_t> encode_ppm(const RgbImage& img);
GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes);
RgbImage decode_ppm(const std::vector<std::uint8_t>& bytes);

void write_pgm(const GrayImage& img, const std::filesystem::path& path);
void write_ppm(const RgbImage& img, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);
RgbImage read_ppm(const std::filesystem::path& path);

/// Vessel pixels 255, background 0.
GrayImage mask_image(const BinaryMask& m);

}  // namespace tsinet
