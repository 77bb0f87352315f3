#pragma once

#include <png.h>

#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "geneic/binary_io.hpp"
#include "geneic/types.hpp"

namespace geneic {

namespace detail {

inline ImageSample from_bytes(std::string id, int h, int w, int c,
                              const std::vector<std::uint8_t>& data, double maxval) {
  ImageSample img(std::move(id), h, w, c);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = data[i] / maxval;
  return img;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline ImageSample read_png(const std::filesystem::path& path, std::string id) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw Error("cannot read PNG " + path.string() + ": " + image.message);
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr))
    throw Error("cannot decode PNG " + path.string() + ": " + image.message);
  return from_bytes(std::move(id), static_cast<int>(image.height), static_cast<int>(image.width),
                    gray ? 1 : 3, buf, 255.0);
}

// Binary PGM (P5) or PPM (P6), maxval <= 255.
inline ImageSample read_netpbm(const std::filesystem::path& path, std::string id) {
  const auto bytes = read_file_bytes(path);
  std::size_t pos = 0;
  auto token = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    if (t.empty()) throw FormatError("netpbm header truncated in " + path.string(), pos);
    return t;
  };
  const auto magic = token();
  if (magic != "P5" && magic != "P6") throw FormatError("unsupported netpbm type " + magic, 0);
  const int w = std::stoi(token()), h = std::stoi(token()), maxval = std::stoi(token());
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw FormatError("unsupported netpbm geometry in " + path.string(), pos);
  ++pos;  // single whitespace before raster
  const int c = magic == "P5" ? 1 : 3;
  const std::size_t n = static_cast<std::size_t>(w) * h * c;
  if (bytes.size() < pos + n) throw FormatError("netpbm raster truncated in " + path.string(), bytes.size());
  std::vector<std::uint8_t> raster(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return from_bytes(std::move(id), h, w, c, raster, maxval);
}

}  // namespace detail

/// Converts between gray and RGB (luma average / replication).
inline ImageSample convert_channels(const ImageSample& img, int channels) {
  if (img.channels == channels) return img;
  ImageSample out(img.id, img.height, img.width, channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (channels == 1) {
        double s = 0.0;
        for (int c = 0; c < img.channels; ++c) s += img.at(y, x, c);
        out.at(y, x, 0) = s / img.channels;
      } else if (img.channels == 1) {
        for (int c = 0; c < channels; ++c) out.at(y, x, c) = img.at(y, x, 0);
      } else {
        throw ShapeError("cannot convert " + std::to_string(img.channels) + " channels to " +
                         std::to_string(channels));
      }
    }
  return out;
}

/// Reads PNG, PGM or PPM by extension.
inline ImageSample read_image(const std::filesystem::path& path, std::string id) {
  if (!std::filesystem::exists(path)) throw Error("image file not found: " + path.string());
  auto ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (ext == ".png") return detail::read_png(path, std::move(id));
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return detail::read_netpbm(path, std::move(id));
  throw Error("unsupported image format: " + path.string());
}

inline void write_png(const ImageSample& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) throw ShapeError("write_png: need 1 or 3 channels");
  std::vector<std::uint8_t> buf(img.pixels.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = detail::to_byte(img.pixels[i]);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  auto tmp = path;
  tmp += ".tmp";
  if (!png_image_write_to_file(&image, tmp.c_str(), 0, buf.data(), 0, nullptr))
    throw Error("cannot write PNG " + path.string() + ": " + image.message);
  std::filesystem::rename(tmp, path);
}

inline void write_netpbm(const ImageSample& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) throw ShapeError("write_netpbm: need 1 or 3 channels");
  std::string data = (img.channels == 1 ? "P5\n" : "P6\n") + std::to_string(img.width) + " " +
                     std::to_string(img.height) + "\n255\n";
  for (double p : img.pixels) data.push_back(static_cast<char>(detail::to_byte(p)));
  write_file_atomic(path, data);
}

}  // namespace geneic
