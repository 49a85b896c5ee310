#include "celmnav/neural.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "celmnav/error.hpp"
#include "celmnav/rng.hpp"

namespace celmnav {

Tensor3::Tensor3(int h, int w, int c, double fill)
    : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {
  if (h < 0 || w < 0 || c < 0) throw ShapeError("negative tensor dimension");
}

Tensor3 to_tensor(const GrayImage& image) {
  Tensor3 t(image.height(), image.width(), 1);
  const auto px = image.pixels();
  std::copy(px.begin(), px.end(), t.data.begin());
  return t;
}

void ModelParams::validate(const ArchSpec& spec) const {
  if (static_cast<int>(layers.size()) != spec.depth)
    throw ShapeError("model has " + std::to_string(layers.size()) + " layers, spec depth " +
                     std::to_string(spec.depth));
  for (int i = 1; i <= spec.depth; ++i) {
    const LayerParams& l = layers[static_cast<std::size_t>(i - 1)];
    if (l.weights.rows() != 9 * ArchSpec::kernels_at(i - 1) || l.c_out() != ArchSpec::kernels_at(i) ||
        l.biases.size() != l.c_out())
      throw ShapeError("layer " + std::to_string(i) + " shape does not follow the kernel rule");
  }
  const auto features = static_cast<Eigen::Index>(spec.feature_size());
  if (head.beta.size() != 0 && (head.beta.rows() != features || head.beta.cols() != spec.n_outputs))
    throw ShapeError("head is " + std::to_string(head.beta.rows()) + "x" + std::to_string(head.beta.cols()) +
                     ", expected " + std::to_string(features) + "x" + std::to_string(spec.n_outputs));
  if (head.beta0 && head.beta0->size() != spec.n_outputs) throw ShapeError("beta0 size mismatch");
}

RowMatrix im2col(const Tensor3& in) {
  const int h = in.height, w = in.width, c = in.channels;
  RowMatrix cols = RowMatrix::Zero(static_cast<Eigen::Index>(h) * w, 9 * c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double* row = cols.data() + (static_cast<std::size_t>(y) * w + x) * 9 * c;
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = x + kx - 1;
          if (sx < 0 || sx >= w) continue;
          std::memcpy(row + (ky * 3 + kx) * c, in.data.data() + in.index(sy, sx, 0), sizeof(double) * c);
        }
      }
    }
  }
  return cols;
}

Tensor3 col2im(const RowMatrix& cols, int h, int w, int c) {
  if (cols.rows() != static_cast<Eigen::Index>(h) * w || cols.cols() != 9 * c)
    throw ShapeError("col2im: patch matrix shape mismatch");
  Tensor3 out(h, w, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double* row = cols.data() + (static_cast<std::size_t>(y) * w + x) * 9 * c;
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = x + kx - 1;
          if (sx < 0 || sx >= w) continue;
          double* dst = out.data.data() + out.index(sy, sx, 0);
          const double* src = row + (ky * 3 + kx) * c;
          for (int k = 0; k < c; ++k) dst[k] += src[k];
        }
      }
    }
  }
  return out;
}

Tensor3 conv2d_same(const Tensor3& input, const LayerParams& layer) {
  if (layer.weights.rows() != 9 * input.channels)
    throw ShapeError("conv input has " + std::to_string(input.channels) + " channels, kernels expect " +
                     std::to_string(layer.c_in()));
  if (layer.biases.size() != layer.c_out()) throw ShapeError("bias count does not match kernel count");
  Tensor3 out(input.height, input.width, layer.c_out());
  auto m = out.matrix();
  m.noalias() = im2col(input) * layer.weights;
  m.rowwise() += layer.biases.transpose();
  return out;
}

double activate(double x, Activation kind) {
  switch (kind) {
    case Activation::NRelu: return std::min(0.0, x);
    case Activation::Relu: return std::max(0.0, x);
    case Activation::Tanh: return std::tanh(x);
    case Activation::None: return x;
  }
  return x;
}

double activate_grad(double x, Activation kind) {
  switch (kind) {
    case Activation::NRelu: return x < 0.0 ? 1.0 : 0.0;
    case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::None: return 1.0;
  }
  return 1.0;
}

Tensor3 activate(const Tensor3& input, Activation kind) {
  Tensor3 out = input;
  if (kind != Activation::None)
    for (double& v : out.data) v = activate(v, kind);
  return out;
}

Tensor3 pool2(const Tensor3& in, Pooling kind) {
  if (in.height % 2 != 0 || in.width % 2 != 0)
    throw ShapeError("pooling needs even spatial dimensions, got " + std::to_string(in.height) + "x" +
                     std::to_string(in.width));
  Tensor3 out(in.height / 2, in.width / 2, in.channels);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const double* a = in.data.data() + in.index(2 * y, 2 * x, 0);
      const double* b = in.data.data() + in.index(2 * y, 2 * x + 1, 0);
      const double* c = in.data.data() + in.index(2 * y + 1, 2 * x, 0);
      const double* d = in.data.data() + in.index(2 * y + 1, 2 * x + 1, 0);
      double* o = out.data.data() + out.index(y, x, 0);
      if (kind == Pooling::Mean) {
        for (int k = 0; k < in.channels; ++k) o[k] = 0.25 * (a[k] + b[k] + c[k] + d[k]);
      } else {
        for (int k = 0; k < in.channels; ++k) o[k] = std::max(std::max(a[k], b[k]), std::max(c[k], d[k]));
      }
    }
  }
  return out;
}

Eigen::VectorXd encode(const Tensor3& input, const ModelParams& params, const ArchSpec& spec) {
  if (input.height != spec.input_side || input.width != spec.input_side || input.channels != 1)
    throw ShapeError("encoder input must be " + std::to_string(spec.input_side) + "x" +
                     std::to_string(spec.input_side) + "x1");
  if (static_cast<int>(params.layers.size()) != spec.depth) throw ShapeError("layer count does not match depth");
  if (spec.depth == 0) return input.flat();
  Tensor3 x = pool2(activate(conv2d_same(input, params.layers[0]), spec.activation), spec.pooling);
  for (int i = 1; i < spec.depth; ++i)
    x = pool2(activate(conv2d_same(x, params.layers[static_cast<std::size_t>(i)]), spec.activation), spec.pooling);
  return x.flat();
}

ForwardResult forward(const Tensor3& input, const ModelParams& params, const ArchSpec& spec) {
  params.validate(spec);
  if (params.head.beta.size() == 0) throw ShapeError("model has no head");
  ForwardResult r;
  r.features = encode(input, params, spec);
  r.output = params.head.beta.transpose() * r.features;
  if (params.head.beta0) r.output += *params.head.beta0;
  return r;
}

namespace {

Eigen::MatrixXd orthogonal(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const bool tall = rows >= cols;
  const int r = tall ? rows : cols, c = tall ? cols : rows;
  Eigen::MatrixXd a(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) a(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
  const Eigen::MatrixXd& packed = qr.matrixQR();
  for (int j = 0; j < c; ++j)
    if (packed(j, j) < 0) q.col(j) = -q.col(j);
  if (tall) return q;
  return q.transpose();
}

}  // namespace

ModelParams init_kernels(const ArchSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelParams p;
  for (int i = 1; i <= spec.depth; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const int rows = 9 * ArchSpec::kernels_at(i - 1), cols = ArchSpec::kernels_at(i);
    LayerParams l;
    l.weights.resize(rows, cols);
    l.biases.resize(cols);
    switch (spec.distribution) {
      case Distribution::Uniform: {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) l.weights(r, c) = u(rng);
        for (int c = 0; c < cols; ++c) l.biases[c] = u(rng);
        break;
      }
      case Distribution::Normal: {
        std::normal_distribution<double> n(0.0, 1.0);
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) l.weights(r, c) = n(rng);
        for (int c = 0; c < cols; ++c) l.biases[c] = n(rng);
        break;
      }
      case Distribution::Orthogonal:
        l.weights = orthogonal(rows, cols, rng);
        l.biases.setZero();
        break;
    }
    p.layers.push_back(std::move(l));
  }
  p.head.beta = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.feature_size()), spec.n_outputs);
  return p;
}

std::uint64_t encoder_hash(const ModelParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto mix = [&h](const double* data, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& l : params.layers) {
    mix(l.weights.data(), l.weights.size());
    mix(l.biases.data(), l.biases.size());
  }
  return h;
}

}  // namespace celmnav
