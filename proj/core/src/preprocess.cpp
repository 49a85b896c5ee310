#include "celmnav/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "celmnav/error.hpp"
#include "celmnav/rng.hpp"

namespace celmnav {

Threshold otsu_threshold(std::span<const double, 256> hist) {
  double total = 0.0, total_sum = 0.0;
  for (int k = 0; k < 256; ++k) {
    total += hist[k];
    total_sum += k * hist[k];
  }
  double best = -1.0;
  int best_bin = -1;
  double w0 = 0.0, s0 = 0.0;
  for (int t = 0; t < 255; ++t) {
    w0 += hist[t];
    s0 += t * hist[t];
    const double w1 = total - w0;
    if (w0 <= 0.0 || w1 <= 0.0) continue;
    const double diff = s0 / w0 - (total_sum - s0) / w1;
    const double between = w0 * w1 * diff * diff;
    if (between > best) {
      best = between;
      best_bin = t;
    }
  }
  if (best_bin < 0) {
    // Single occupied level (or empty histogram): everything is background.
    best_bin = 0;
    for (int k = 255; k >= 0; --k) {
      if (hist[k] > 0.0) {
        best_bin = k;
        break;
      }
    }
  }
  return {best_bin};
}

Threshold otsu_threshold(const GrayImage& image) {
  if (image.empty()) throw ShapeError("Otsu threshold of an empty image");
  std::array<double, 256> hist{};
  for (float p : image.pixels()) hist[to_8bit(p)] += 1.0;
  return otsu_threshold(std::span<const double, 256>(hist));
}

BlobResult blob_analysis(const GrayImage& image, Threshold threshold, CentroidWeighting weighting) {
  int u_min = image.width(), v_min = image.height(), u_max = -1, v_max = -1;
  double sw = 0.0, su = 0.0, sv = 0.0;
  for (int v = 0; v < image.height(); ++v) {
    for (int u = 0; u < image.width(); ++u) {
      const float p = image.at(u, v);
      if (to_8bit(p) <= threshold.bin) continue;
      const double w = weighting == CentroidWeighting::Intensity ? p : 1.0;
      sw += w;
      su += w * u;
      sv += w * v;
      u_min = std::min(u_min, u);
      u_max = std::max(u_max, u);
      v_min = std::min(v_min, v);
      v_max = std::max(v_max, v);
    }
  }
  if (u_max < 0 || sw <= 0.0) throw EmptyBlobError("empty blob: no pixel above the threshold");
  BlobResult out;
  out.cob = {su / sw, sv / sw};
  out.box = {u_min, v_min, u_max - u_min + 1, v_max - v_min + 1};
  out.threshold = threshold;
  return out;
}

int select_gamma(const BoundingBox& box) {
  const int side = std::max(box.width, box.height);
  for (int g : kPadSizes) {
    if (g >= side) return g;
  }
  throw Error("body exceeds sensor: bounding box side " + std::to_string(side) + " > " +
              std::to_string(kPadSizes.back()));
}

S1Result to_s1_with_offsets(const GrayImage& image, const LabelSet& labels, const BlobResult& blob, int alpha_u,
                            int alpha_v) {
  const BoundingBox& box = blob.box;
  if (box.width < 1 || box.height < 1 || !image.contains(box.u, box.v) ||
      !image.contains(box.u + box.width - 1, box.v + box.height - 1))
    throw ShapeError("blob bounding box is not inside the image");
  const int gamma = select_gamma(box);
  if (alpha_u < 0 || alpha_u > gamma - box.width || alpha_v < 0 || alpha_v > gamma - box.height)
    throw Error("pad offsets outside their admissible range");

  S1Result out;
  out.record.blob = blob;
  out.record.gamma = gamma;
  out.record.alpha_u = alpha_u;
  out.record.alpha_v = alpha_v;
  out.image = GrayImage(gamma, gamma);
  const int du = box.u - alpha_u;
  const int dv = box.v - alpha_v;
  for (int y = 0; y < gamma; ++y) {
    for (int x = 0; x < gamma; ++x) {
      const int u = x + du, v = y + dv;
      if (image.contains(u, v)) out.image.at(x, y) = image.at(u, v);
    }
  }
  const Eigen::Vector2d shift(-box.u + alpha_u, -box.v + alpha_v);
  out.labels = labels;
  out.labels.cob += shift;
  out.labels.cof += shift;
  return out;
}

S1Result to_s1(const GrayImage& image, const LabelSet& labels, const BlobResult& blob, std::uint64_t rng_seed) {
  const int gamma = select_gamma(blob.box);
  Rng rng(rng_seed);
  std::uniform_int_distribution<int> du(0, gamma - blob.box.width);
  std::uniform_int_distribution<int> dv(0, gamma - blob.box.height);
  const int alpha_u = du(rng);
  const int alpha_v = dv(rng);
  S1Result out = to_s1_with_offsets(image, labels, blob, alpha_u, alpha_v);
  out.record.seed = rng_seed;
  return out;
}

namespace {

// One-dimensional triangle-filter resampling along rows (u) of a w x h image.
std::vector<float> resample_rows(const std::vector<float>& in, int w, int h, int out_w) {
  std::vector<float> out(static_cast<std::size_t>(out_w) * h, 0.0f);
  const double ratio = static_cast<double>(w) / out_w;  // input px per output px
  const double support = std::max(1.0, ratio);
  for (int x = 0; x < out_w; ++x) {
    const double center = x * ratio;
    const int i0 = std::max(0, static_cast<int>(std::floor(center - support)) + 1);
    const int i1 = std::min(w - 1, static_cast<int>(std::ceil(center + support)) - 1);
    for (int i = i0; i <= i1; ++i) {
      const double weight = std::max(0.0, 1.0 - std::abs(i - center) / support) / support;
      if (weight == 0.0) continue;
      for (int y = 0; y < h; ++y) {
        out[static_cast<std::size_t>(y) * out_w + x] +=
            static_cast<float>(weight * in[static_cast<std::size_t>(y) * w + i]);
      }
    }
  }
  return out;
}

std::vector<float> transpose(const std::vector<float>& in, int w, int h) {
  std::vector<float> out(in.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out[static_cast<std::size_t>(x) * h + y] = in[static_cast<std::size_t>(y) * w + x];
  return out;
}

}  // namespace

GrayImage resize_square(const GrayImage& image, int out_side) {
  if (image.width() != image.height()) throw ShapeError("resize_square expects a square image");
  const int n = image.width();
  if (n == out_side) return image;
  std::vector<float> data(image.pixels().begin(), image.pixels().end());
  auto rows = resample_rows(data, n, n, out_side);       // out_side x n (w x h)
  auto cols = resample_rows(transpose(rows, out_side, n), n, out_side, out_side);
  auto final_data = transpose(cols, out_side, out_side);
  GrayImage out(out_side, out_side);
  std::copy(final_data.begin(), final_data.end(), out.pixels().begin());
  for (float& p : out.pixels()) p = std::clamp(p, 0.0f, 1.0f);
  return out;
}

S2Sample to_s2(const GrayImage& image_s1, const LabelSet& labels_s1, const PreprocessRecord& record,
               const std::optional<NoiseSpec>& noise) {
  if (image_s1.width() != record.gamma || image_s1.height() != record.gamma)
    throw ShapeError("S1 image side does not match gamma");
  S2Sample out;
  out.record = record;
  if (noise) {
    GrayImage noisy = image_s1;
    Rng rng(noise->seed);
    std::normal_distribution<double> gauss(0.0, noise->sigma);
    for (float& p : noisy.pixels()) p = static_cast<float>(std::clamp(p + gauss(rng), 0.0, 1.0));
    out.image = resize_square(noisy, kNetworkSide);
    out.record.noise_applied = true;
  } else {
    out.image = resize_square(image_s1, kNetworkSide);
    out.record.noise_applied = false;
  }
  const double s = record.scale();
  out.labels = labels_s1;
  out.labels.cob *= s;
  out.labels.cof *= s;
  out.labels.delta *= s;
  out.labels.range *= s;
  out.labels.position *= s;
  return out;
}

LabelSet invert_labels(const LabelSet& labels_s2, const PreprocessRecord& record) {
  const double s = 1.0 / record.scale();
  LabelSet out = labels_s2;
  out.cob *= s;
  out.cof *= s;
  out.delta *= s;
  out.range *= s;
  out.position *= s;
  return out;
}

LabelSet labels_to_s2(const LabelSet& labels_s0, const PreprocessRecord& record) {
  const BoundingBox& box = record.blob.box;
  const Eigen::Vector2d shift(-box.u + record.alpha_u, -box.v + record.alpha_v);
  const double s = record.scale();
  LabelSet out = labels_s0;
  out.cob = (out.cob + shift) * s;
  out.cof = (out.cof + shift) * s;
  out.delta *= s;
  out.range *= s;
  out.position *= s;
  return out;
}

S2Sample preprocess_image(const GrayImage& image_s0, const LabelSet& labels_s0, std::uint64_t seed,
                          const PipelineOptions& options) {
  const Threshold t = otsu_threshold(image_s0);
  const BlobResult blob = blob_analysis(image_s0, t, options.weighting);
  S1Result s1 = to_s1(image_s0, labels_s0, blob, derive_seed(seed, 1));
  std::optional<NoiseSpec> noise = options.noise;
  if (noise) noise->seed = derive_seed(seed, 2);
  S2Sample s2 = to_s2(s1.image, s1.labels, s1.record, noise);
  s2.record.seed = seed;
  return s2;
}

}  // namespace celmnav
