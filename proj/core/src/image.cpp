#include "celmnav/image.hpp"

#include <png.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>

#include "celmnav/error.hpp"

namespace celmnav {

static_assert(std::endian::native == std::endian::little, "raw f32 IO assumes a little-endian host");

GrayImage::GrayImage(int width, int height, float fill)
    : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {
  if (width < 0 || height < 0) throw ShapeError("negative image dimensions");
}

void quantize_8bit(GrayImage& image) {
  for (float& p : image.pixels()) p = static_cast<float>(to_8bit(p)) / 255.0f;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

}  // namespace

void write_png(const GrayImage& image, const std::filesystem::path& path) {
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(image.width()));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width(), image.height(), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int v = 0; v < image.height(); ++v) {
    for (int u = 0; u < image.width(); ++u) row[u] = static_cast<png_byte>(to_8bit(image.at(u, v)));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

GrayImage read_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  GrayImage image;
  std::vector<png_byte> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed reading " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  const auto color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  image = GrayImage(width, height);
  row.resize(png_get_rowbytes(png, info));
  for (int v = 0; v < height; ++v) {
    png_read_row(png, row.data(), nullptr);
    for (int u = 0; u < width; ++u) image.at(u, v) = static_cast<float>(row[u]) / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_raw_f32(const GrayImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  const std::int32_t dims[2] = {image.width(), image.height()};
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  out.write(reinterpret_cast<const char*>(image.pixels().data()),
            static_cast<std::streamsize>(image.size() * sizeof(float)));
  if (!out) throw IoError("failed writing " + path.string());
}

GrayImage read_raw_f32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::int32_t dims[2] = {0, 0};
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!in || dims[0] < 0 || dims[1] < 0) throw IoError("bad raw image header in " + path.string());
  GrayImage image(dims[0], dims[1]);
  in.read(reinterpret_cast<char*>(image.pixels().data()),
          static_cast<std::streamsize>(image.size() * sizeof(float)));
  if (!in) throw IoError("truncated raw image " + path.string());
  return image;
}

GrayImage read_image(const std::filesystem::path& path) {
  if (path.extension() == ".png") return read_png(path);
  return read_raw_f32(path);
}

void write_image(const GrayImage& image, const std::filesystem::path& path) {
  if (path.extension() == ".png") {
    write_png(image, path);
  } else {
    write_raw_f32(image, path);
  }
}

}  // namespace celmnav
