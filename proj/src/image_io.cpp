#include "tsinet/image_io.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include "tsinet/errors.hpp"

namespace tsinet {

namespace {

std::vector<std::uint8_t> encode(const char* magic, std::size_t h, std::size_t w, const std::vector<std::uint8_t>& px,
                                 std::size_t channels) {
  if (px.size() != h * w * channels) throw ShapeError(std::string(magic) + ": pixel buffer does not match size");
  const std::string header = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), px.begin(), px.end());
  return out;
}

struct Header {
  std::size_t width, height, offset;
};

Header parse_header(const std::vector<std::uint8_t>& b, const char* magic) {
  if (b.size() < 2 || b[0] != magic[0] || b[1] != magic[1]) {
    throw DataError(std::string("expected ") + magic + " image", 0);
  }
  std::size_t pos = 2;
  auto number = [&]() {
    // Whitespace and '#' comments may precede each field.
    while (pos < b.size()) {
      if (std::isspace(b[pos])) {
        ++pos;
      } else if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    if (pos >= b.size() || !std::isdigit(b[pos])) throw DataError("malformed image header", std::int64_t(pos));
    std::size_t v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) v = v * 10 + std::size_t(b[pos++] - '0');
    return v;
  };
  Header h{};
  h.width = number();
  h.height = number();
  const std::size_t maxval = number();
  if (maxval != 255) throw DataError("only maxval 255 is supported", std::int64_t(pos));
  if (pos >= b.size() || !std::isspace(b[pos])) throw DataError("malformed image header", std::int64_t(pos));
  h.offset = pos + 1;
  return h;
}

std::vector<std::uint8_t> payload(const std::vector<std::uint8_t>& b, const Header& h, std::size_t channels) {
  const std::size_t expected = h.width * h.height * channels;
  if (b.size() - h.offset != expected) {
    throw DataError("image payload: expected " + std::to_string(expected) + " bytes, found " +
                        std::to_string(b.size() - h.offset),
                    std::int64_t(h.offset));
  }
  return {b.begin() + std::ptrdiff_t(h.offset), b.end()};
}

void write_bytes(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw DataError("write failed for " + path.string());
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) { return encode("P5", img.height, img.width, img.pixels, 1); }
std::vector<std::uint8_t> encode_ppm(const RgbImage& img) { return encode("P6", img.height, img.width, img.pixels, 3); }

GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
  const Header h = parse_header(bytes, "P5");
  return {h.height, h.width, payload(bytes, h, 1)};
}

RgbImage decode_ppm(const std::vector<std::uint8_t>& bytes) {
  const Header h = parse_header(bytes, "P6");
  return {h.height, h.width, payload(bytes, h, 3)};
}

void write_pgm(const GrayImage& img, const std::filesystem::path& path) { write_bytes(encode_pgm(img), path); }
void write_ppm(const RgbImage& img, const std::filesystem::path& path) { write_bytes(encode_ppm(img), path); }
GrayImage read_pgm(const std::filesystem::path& path) { return decode_pgm(read_bytes(path)); }
RgbImage read_ppm(const std::filesystem::path& path) { return decode_ppm(read_bytes(path)); }

GrayImage mask_image(const BinaryMask& m) {
  GrayImage img{m.height(), m.width(), std::vector<std::uint8_t>(m.size())};
  for (std::size_t i = 0; i < m.size(); ++i) img.pixels[i] = m[i] ? 255 : 0;
  return img;
}

}  // namespace tsinet
