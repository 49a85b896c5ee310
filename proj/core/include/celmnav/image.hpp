#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace celmnav {

/// Single-channel image with intensities in [0, 1].
///
/// Pixel (u, v) is column u, row v of the UV frame (origin top-left);
/// storage is row-major.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, float fill = 0.0f);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  float& at(int u, int v) { return data_[static_cast<std::size_t>(v) * width_ + u]; }
  float at(int u, int v) const { return data_[static_cast<std::size_t>(v) * width_ + u]; }
  bool contains(int u, int v) const { return u >= 0 && v >= 0 && u < width_ && v < height_; }

  std::span<float> pixels() { return data_; }
  std::span<const float> pixels() const { return data_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// Rounds every pixel to the nearest of 256 levels.
void quantize_8bit(GrayImage& image);
inline int to_8bit(float value) {
  const float clamped = value < 0.0f ? 0.0f : (value > 1.0f ? 1.0f : value);
  return static_cast<int>(clamped * 255.0f + 0.5f);
}

void write_png(const GrayImage& image, const std::filesystem::path& path);
GrayImage read_png(const std::filesystem::path& path);

/// Raw little-endian f32 plane with an 8-byte (width, height as int32) header.
void write_raw_f32(const GrayImage& image, const std::filesystem::path& path);
GrayImage read_raw_f32(const std::filesystem::path& path);

/// Reads either format, chosen by file extension (.png or .f32).
GrayImage read_image(const std::filesystem::path& path);
void write_image(const GrayImage& image, const std::filesystem::path& path);

}  // namespace celmnav
