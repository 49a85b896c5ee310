#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <span>

#include "celmnav/image.hpp"
#include "celmnav/labels.hpp"

namespace celmnav {

inline constexpr int kNetworkSide = 128;
inline constexpr std::array<int, 4> kPadSizes = {128, 256, 512, 1024};

/// Otsu threshold on the 256-level histogram. Pixels whose 8-bit level is
/// strictly greater than `bin` are foreground.
struct Threshold {
  int bin = 0;
  /// Intensity boundary between `bin` and `bin + 1`.
  double level() const { return (bin + 0.5) / 255.0; }
};

Threshold otsu_threshold(const GrayImage& image);
/// Otsu on an explicit (possibly non-integer) 256-bin histogram.
Threshold otsu_threshold(std::span<const double, 256> histogram);

enum class CentroidWeighting { Intensity, Binary };

/// Bounding box in UV pixels: corner (u, v), width and height.
struct BoundingBox {
  int u = 0, v = 0, width = 0, height = 0;
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct BlobResult {
  Eigen::Vector2d cob = Eigen::Vector2d::Zero();
  BoundingBox box;
  Threshold threshold;
};

/// Centroid and bounding box of the pixels above the threshold.
/// Throws EmptyBlobError when no pixel is above it.
BlobResult blob_analysis(const GrayImage& image, Threshold threshold,
                         CentroidWeighting weighting = CentroidWeighting::Intensity);

/// Per-image bookkeeping needed to take S2 estimates back to S0.
struct PreprocessRecord {
  BlobResult blob;
  int gamma = kNetworkSide;  ///< padded square side in S1
  int alpha_u = 0;
  int alpha_v = 0;
  bool noise_applied = false;
  std::uint64_t seed = 0;

  double scale() const { return static_cast<double>(kNetworkSide) / gamma; }
};

/// Smallest admissible padded side that bounds the box; throws when the box
/// exceeds the largest size.
int select_gamma(const BoundingBox& box);

struct S1Result {
  GrayImage image;
  LabelSet labels;
  PreprocessRecord record;
};

/// Crop to the blob box and pad to gamma with random offsets. Padding copies
/// S0 pixels where they exist and zero-fills outside the sensor.
S1Result to_s1(const GrayImage& image, const LabelSet& labels, const BlobResult& blob, std::uint64_t rng_seed);

/// Same as to_s1 with explicit pad offsets (validated against their ranges).
S1Result to_s1_with_offsets(const GrayImage& image, const LabelSet& labels, const BlobResult& blob, int alpha_u,
                            int alpha_v);

/// Zero-mean Gaussian noise, clipped to [0, 1].
struct NoiseSpec {
  double sigma = 2.0 / 255.0;
  std::uint64_t seed = 0;
};

struct S2Sample {
  GrayImage image;  ///< 128 x 128
  LabelSet labels;  ///< S2 units
  PreprocessRecord record;
};

/// Optional noise, then resize to 128 x 128 with labels scaled by 128 / gamma.
S2Sample to_s2(const GrayImage& image_s1, const LabelSet& labels_s1, const PreprocessRecord& record,
               const std::optional<NoiseSpec>& noise);

/// Triangle-filter (antialiased bilinear) resize of a square image. Output
/// pixel x samples the input around x * in / out, so pixel coordinates map by
/// the plain ratio and intensity centroids scale exactly.
GrayImage resize_square(const GrayImage& image, int out_side);

/// Scales the S2 labels back by gamma / 128: CoB, CoF, delta, range and
/// position; angles unchanged.
LabelSet invert_labels(const LabelSet& labels_s2, const PreprocessRecord& record);

/// S0 labels carried into S2 for an existing record: shift by the crop and
/// pad offsets, then scale by 128 / gamma.
LabelSet labels_to_s2(const LabelSet& labels_s0, const PreprocessRecord& record);

struct PipelineOptions {
  std::optional<NoiseSpec> noise;  ///< seed is replaced by the per-image seed when set
  CentroidWeighting weighting = CentroidWeighting::Intensity;
};

/// Full S0 -> S2 pipeline for one image.
S2Sample preprocess_image(const GrayImage& image_s0, const LabelSet& labels_s0, std::uint64_t seed,
                          const PipelineOptions& options = {});

}  // namespace celmnav
