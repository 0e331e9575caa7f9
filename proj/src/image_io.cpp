// Copyright 2026 The Sparse Sampler Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sparse/image_io.hpp"

#include <png.h>

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

namespace sparse {
namespace {

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Whitespace-delimited token starting at `pos`; advances past it.
std::string next_token(const std::vector<char>& bytes, std::size_t& pos) {
  while (pos < bytes.size() &&
         std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    ++pos;
  }
  std::string tok;
  while (pos < bytes.size() &&
         !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    tok.push_back(bytes[pos++]);
  }
  return tok;
}

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

RgbField parse_pfm(const std::filesystem::path& path) {
  const std::vector<char> bytes = read_all(path);
  std::size_t pos = 0;
  const std::string magic = next_token(bytes, pos);
  if (magic == "Pf") {
    throw FormatError(path.string() + ": non-3-channel PFM (grayscale 'Pf')");
  }
  if (magic != "PF") throw FormatError(path.string() + ": bad PFM magic");

  int width = 0;
  int height = 0;
  double scale = 0.0;
  try {
    std::size_t used = 0;
    const std::string ws = next_token(bytes, pos);
    width = std::stoi(ws, &used);
    if (used != ws.size()) throw std::invalid_argument("width");
    const std::string hs = next_token(bytes, pos);
    height = std::stoi(hs, &used);
    if (used != hs.size()) throw std::invalid_argument("height");
    const std::string ss = next_token(bytes, pos);
    scale = std::stod(ss, &used);
    if (used != ss.size()) throw std::invalid_argument("scale");
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PFM header");
  }
  if (width <= 0 || height <= 0 || scale == 0.0 || !std::isfinite(scale)) {
    throw FormatError(path.string() + ": malformed PFM header");
  }
  // Exactly one whitespace byte separates the header from the payload.
  if (pos >= bytes.size() ||
      !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError(path.string() + ": truncated PFM payload");
  }
  ++pos;

  const std::size_t count = static_cast<std::size_t>(width) * height * 3;
  if (bytes.size() - pos < count * 4) {
    throw FormatError(path.string() + ": truncated PFM payload");
  }
  const bool file_little = scale < 0.0;
  const bool host_little = std::endian::native == std::endian::little;

  RgbField img(width, height);
  for (int row = 0; row < height; ++row) {
    const int y = height - 1 - row;  // bottom-up
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        std::uint32_t bits;
        std::memcpy(&bits, bytes.data() + pos, 4);
        pos += 4;
        if (file_little != host_little) bits = byteswap32(bits);
        img.at(x, y, c) = static_cast<double>(std::bit_cast<float>(bits));
      }
    }
  }
  return img;
}

template <int C, typename Tag>
void write_pfm_impl(const Image<C, Tag>& image,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "PF\n" << image.width() << " " << image.height() << "\n-1.0\n";
  const bool host_little = std::endian::native == std::endian::little;
  std::vector<char> row(static_cast<std::size_t>(image.width()) * 12);
  for (int y = image.height() - 1; y >= 0; --y) {
    char* p = row.data();
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = image.at(x, y, C == 1 ? 0 : c);
        std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        if (!host_little) bits = byteswap32(bits);
        std::memcpy(p, &bits, 4);
        p += 4;
      }
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

RadianceImage read_pfm(const std::filesystem::path& path) {
  RadianceImage img = parse_pfm(path).retag<RadianceTag>();
  require_valid_radiance(img, path.string().c_str());
  return img;
}

RgbField read_pfm_field(const std::filesystem::path& path) {
  return parse_pfm(path);
}

template <typename Tag>
void write_pfm(const Image<3, Tag>& image, const std::filesystem::path& path) {
  write_pfm_impl(image, path);
}

template void write_pfm(const Image<3, GenericTag>&,
                        const std::filesystem::path&);
template void write_pfm(const Image<3, RadianceTag>&,
                        const std::filesystem::path&);
template void write_pfm(const Image<3, LdrTag>&, const std::filesystem::path&);
template void write_pfm(const Image<3, DemodTag>&,
                        const std::filesystem::path&);

void write_pfm(const ScalarField& field, const std::filesystem::path& path) {
  write_pfm_impl(field, path);
}

std::uint8_t quantize_unorm8(double v) noexcept {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

void write_png_srgb(const LdrImage& image, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(image.pixel_count() * 3);
  const auto values = image.values();
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = quantize_unorm8(values[i]);
  }
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, bytes.data(), 0,
                               nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw std::runtime_error("PNG write failed for " + path.string() + ": " +
                             msg);
  }
}

void write_png_gray16(const Gray16& image, const std::filesystem::path& path) {
  if (image.values.size() !=
      static_cast<std::size_t>(image.width) * image.height) {
    throw std::invalid_argument("Gray16 size does not match its dimensions");
  }
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_LINEAR_Y;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0,
                               image.values.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw std::runtime_error("PNG write failed for " + path.string() + ": " +
                             msg);
  }
}

Gray16 read_png_gray16(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw FormatError(path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_LINEAR_Y;
  Gray16 out;
  out.width = static_cast<int>(png.width);
  out.height = static_cast<int>(png.height);
  out.values.resize(static_cast<std::size_t>(out.width) * out.height);
  if (!png_image_finish_read(&png, nullptr, out.values.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw FormatError(path.string() + ": " + msg);
  }
  return out;
}

}  // namespace sparse
