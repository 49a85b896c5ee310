#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "celmnav/archgen.hpp"
#include "celmnav/image.hpp"

namespace celmnav {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Height x width x channels tensor, row-major over (y, x, c).
struct Tensor3 {
  int height = 0, width = 0, channels = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int h, int w, int c, double fill = 0.0);

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int y, int x, int c) { return data[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data[index(y, x, c)]; }
  std::size_t size() const { return data.size(); }

  /// (h*w) x c view, one row per pixel.
  Eigen::Map<RowMatrix> matrix() { return {data.data(), static_cast<Eigen::Index>(height) * width, channels}; }
  Eigen::Map<const RowMatrix> matrix() const {
    return {data.data(), static_cast<Eigen::Index>(height) * width, channels};
  }
  Eigen::Map<const Eigen::VectorXd> flat() const { return {data.data(), static_cast<Eigen::Index>(data.size())}; }
};

Tensor3 to_tensor(const GrayImage& image);

/// 3x3 kernels stored as a (9 c_in) x c_out matrix; row (ky*3 + kx)*c_in + ci.
struct LayerParams {
  Eigen::MatrixXd weights;
  Eigen::VectorXd biases;

  int c_in() const { return static_cast<int>(weights.rows() / 9); }
  int c_out() const { return static_cast<int>(weights.cols()); }
  double& kernel(int ky, int kx, int ci, int co) { return weights((ky * 3 + kx) * c_in() + ci, co); }
  double kernel(int ky, int kx, int ci, int co) const { return weights((ky * 3 + kx) * c_in() + ci, co); }
};

struct HeadParams {
  Eigen::MatrixXd beta;                 ///< L x n_o
  std::optional<Eigen::VectorXd> beta0;  ///< absent for CELM heads
};

struct ModelParams {
  std::vector<LayerParams> layers;
  HeadParams head;

  /// Throws ShapeError unless the layers and head match the spec.
  void validate(const ArchSpec& spec) const;
};

/// Patch matrix of a same-padded 3x3 convolution: (h*w) x (9 c), zero outside the input.
RowMatrix im2col(const Tensor3& input);
/// Adjoint of im2col: scatters patch-matrix rows back onto an h x w x c tensor.
Tensor3 col2im(const RowMatrix& cols, int height, int width, int channels);

Tensor3 conv2d_same(const Tensor3& input, const LayerParams& layer);

/// Negative ReLU is min(0, x).
double activate(double x, Activation kind);
/// Derivative with respect to the pre-activation x.
double activate_grad(double x, Activation kind);
Tensor3 activate(const Tensor3& input, Activation kind);

Tensor3 pool2(const Tensor3& input, Pooling kind);

struct ForwardResult {
  Eigen::VectorXd features;
  Eigen::VectorXd output;
};

/// Encoder features flattened in (y, x, c) order.
Eigen::VectorXd encode(const Tensor3& input, const ModelParams& params, const ArchSpec& spec);
ForwardResult forward(const Tensor3& input, const ModelParams& params, const ArchSpec& spec);

/// Seeded kernel draw. The head is left at zero with no beta0.
ModelParams init_kernels(const ArchSpec& spec, std::uint64_t seed);

/// FNV-1a over the encoder weights and biases; changes with any bit.
std::uint64_t encoder_hash(const ModelParams& params);

// ------------------------------------------------------------ model io ---

inline constexpr std::uint32_t kModelFormatVersion = 1;

struct StoredModel {
  ArchSpec spec;
  ModelParams params;
  std::string metadata_json = "{}";
};

/// Binary blob (header, then little-endian f32 arrays per layer and the head)
/// plus a JSON sidecar at `path + ".json"` holding the spec and metadata.
void save_model(const std::filesystem::path& path, const StoredModel& model);
StoredModel load_model(const std::filesystem::path& path);

}  // namespace celmnav
