#include "lnl/image.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

namespace lnl {

namespace {

// Reads one header integer, skipping whitespace and '#' comment lines.
int read_header_int(const std::vector<uint8_t>& bytes, size_t& pos,
                    const char* field) {
  while (pos < bytes.size()) {
    if (std::isspace(bytes[pos])) {
      ++pos;
    } else if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  if (pos >= bytes.size() || !std::isdigit(bytes[pos]))
    throw ParseError(std::string("pgm: malformed header, expected ") + field);
  long value = 0;
  while (pos < bytes.size() && std::isdigit(bytes[pos])) {
    value = value * 10 + (bytes[pos] - '0');
    if (value > 1 << 30)
      throw ParseError(std::string("pgm: header field out of range: ") + field);
    ++pos;
  }
  return static_cast<int>(value);
}

}  // namespace

GrayImage parse_pgm(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P')
    throw ParseError("pgm: not a PNM file (missing magic)");
  if (bytes[1] != '5')
    throw ParseError(std::string("pgm: unsupported format P") +
                     static_cast<char>(bytes[1]) + ", only binary P5");
  size_t pos = 2;
  const int width = read_header_int(bytes, pos, "width");
  const int height = read_header_int(bytes, pos, "height");
  const int maxval = read_header_int(bytes, pos, "maxval");
  if (width < 1 || height < 1)
    throw ParseError("pgm: non-positive dimensions");
  if (maxval != 255)
    throw ParseError("pgm: maxval " + std::to_string(maxval) +
                     " unsupported, must be 255");
  if (pos >= bytes.size() || !std::isspace(bytes[pos]))
    throw ParseError("pgm: missing whitespace after maxval");
  ++pos;  // exactly one whitespace byte separates header from payload

  const size_t need = static_cast<size_t>(width) * height;
  if (bytes.size() - pos < need)
    throw ParseError("pgm: truncated payload, need " + std::to_string(need) +
                     " bytes, have " + std::to_string(bytes.size() - pos));
  GrayImage img(width, height);
  std::copy(bytes.begin() + pos, bytes.begin() + pos + need,
            img.samples.begin());
  return img;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return parse_pgm(bytes);
}

std::vector<uint8_t> serialize_pgm(const GrayImage& img) {
  char header[64];
  const int n =
      std::snprintf(header, sizeof header, "P5\n%d %d\n255\n", img.width,
                    img.height);
  std::vector<uint8_t> out(header, header + n);
  out.insert(out.end(), img.samples.begin(), img.samples.end());
  return out;
}

void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  const auto bytes = serialize_pgm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<GrayImage> extract_patches(const GrayImage& img, int size,
                                       int stride) {
  std::vector<GrayImage> patches;
  if (size > img.width || size > img.height) return patches;
  for (int r = 0; r + size <= img.height; r += stride) {
    for (int c = 0; c + size <= img.width; c += stride) {
      GrayImage p(size, size);
      for (int y = 0; y < size; ++y)
        std::copy_n(&img.samples[static_cast<size_t>(r + y) * img.width + c],
                    size, &p.samples[static_cast<size_t>(y) * size]);
      patches.push_back(std::move(p));
    }
  }
  return patches;
}

Tensor to_normalized(const GrayImage& img) {
  Tensor t({1, 1, img.height, img.width});
  for (size_t i = 0; i < img.samples.size(); ++i)
    t.data[i] = static_cast<float>(img.samples[i]) / 255.0f;
  return t;
}

GrayImage from_normalized(const Tensor& t) {
  if (t.shape.n != 1 || t.shape.c != 1)
    throw ShapeError("from_normalized: expected shape (1,1,H,W), got " +
                     t.shape.str());
  GrayImage img(t.shape.w, t.shape.h);
  for (size_t i = 0; i < t.data.size(); ++i) {
    float v = t.data[i];
    v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    img.samples[i] = static_cast<uint8_t>(std::round(v * 255.0f));
  }
  return img;
}

}  // namespace lnl
