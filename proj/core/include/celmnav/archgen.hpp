#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "celmnav/labels.hpp"

namespace celmnav {

enum class Distribution { Uniform, Normal, Orthogonal };
enum class Activation { NRelu, Relu, Tanh, None };
enum class Pooling { Mean, Max };

std::string_view to_string(Distribution d);
std::string_view to_string(Activation a);
std::string_view to_string(Pooling p);
Distribution parse_distribution(std::string_view text);
Activation parse_activation(std::string_view text);
Pooling parse_pooling(std::string_view text);

inline constexpr std::array<double, 9> kPaperCGrid = {1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2, 1e3, 1e4};
inline constexpr std::array<int, 3> kPaperBatchSizes = {64, 128, 256};
inline constexpr std::array<double, 5> kPaperLearningRates = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
inline constexpr int kMaxDepth = 5;
inline constexpr int kThetaFormatVersion = 1;

/// Hyper-parameters of one architecture. Depth i in 1..d has spatial side
/// input_side / 2^i after pooling and 2^(3+i) kernels.
struct ArchSpec {
  int depth = 1;
  Distribution distribution = Distribution::Uniform;
  Activation activation = Activation::Relu;
  Pooling pooling = Pooling::Mean;
  int n_outputs = 3;
  std::vector<double> c_grid{kPaperCGrid.begin(), kPaperCGrid.end()};
  int batch_size = 64;
  double learning_rate = 1e-3;
  int input_side = 128;

  /// Kernel count at depth i (1 for the input, i = 0).
  static int kernels_at(int i) { return i == 0 ? 1 : 1 << (3 + i); }
  /// Spatial side of the feature map leaving depth i.
  int side_at(int i) const { return input_side >> i; }
  std::size_t feature_size() const;
  void validate() const;
  /// Stable identifier, e.g. "d3-orthogonal-relu-mean-o3".
  std::string key() const;

  /// Architecture identity only; the C grid and training knobs are not part of it.
  auto arch_tuple() const { return std::tuple(depth, distribution, activation, pooling, n_outputs, input_side); }
};

bool same_architecture(const ArchSpec& a, const ArchSpec& b);
/// True when the encoders are interchangeable: same depth, activation,
/// pooling and input side. The kernel distribution and output count do not
/// constrain a trained encoder.
bool same_encoder(const ArchSpec& a, const ArchSpec& b);
/// Lexicographic order on (depth, distribution, activation, pooling, n_outputs).
bool spec_less(const ArchSpec& a, const ArchSpec& b);

struct LayerCount {
  int depth = 0;
  int side = 0;       ///< conv output side (before pooling)
  int channels = 0;
  std::int64_t weights = 0;
  std::int64_t biases = 0;
};

struct ParamCount {
  std::vector<LayerCount> layers;
  std::int64_t fc_features = 0;
  std::int64_t beta = 0;
  std::int64_t beta0 = 0;

  /// Encoder weights and biases up to and including depth `depth`.
  std::int64_t cumulative(int depth) const;
  std::int64_t encoder_total() const { return cumulative(static_cast<int>(layers.size())); }
  std::int64_t head_total() const { return beta + beta0; }
};

/// Exact parameter accounting; the head count includes beta0 (n_outputs)
/// as in the gradient-trained network.
ParamCount count_params(const ArchSpec& spec);

/// One row of the layer table: name, type, output shape without the batch axis, parameters.
struct LayerShape {
  std::string name;
  std::string type;
  std::vector<int> shape;
  std::int64_t params = 0;
};
std::vector<LayerShape> layer_shapes(const ArchSpec& spec);

struct GridAxes {
  std::vector<int> depths;
  std::vector<Distribution> distributions;
  std::vector<Activation> activations;
  std::vector<Pooling> poolings;

  static GridAxes paper();
  /// Small grid for quick runs: d in {1, 2, 3}, uniform kernels, relu and tanh, both poolings.
  static GridAxes desk();
  std::size_t size() const { return depths.size() * distributions.size() * activations.size() * poolings.size(); }
};

/// Cartesian product of the axes in lexicographic order, n_outputs set by the strategy.
std::vector<ArchSpec> enumerate_specs(LabelStrategy strategy, const GridAxes& axes = GridAxes::paper());

struct SeededSpec {
  ArchSpec spec;
  int replicate = 0;
  std::uint64_t seed = 0;
};

/// Every spec with n_seeds replicates. Seeds depend on the master seed, the
/// spec key and the replicate only, so they survive grid reordering.
std::vector<SeededSpec> with_seeds(const std::vector<ArchSpec>& specs, std::uint64_t master_seed, int n_seeds);

/// Grid CSV, one row per (spec, seed), preceded by a format-version line.
void write_grid_csv(const std::vector<SeededSpec>& grid, const std::filesystem::path& path);
std::vector<SeededSpec> read_grid_csv(const std::filesystem::path& path);

std::string spec_to_json(const ArchSpec& spec);
ArchSpec spec_from_json(std::string_view text);

struct ReferenceTheta {
  std::string dataset;
  int depth = 0;
  Distribution distribution = Distribution::Uniform;
  Activation activation = Activation::Relu;
  Pooling pooling = Pooling::Mean;
  double c = 0;
  int batch_size = 0;
  double learning_rate = 0;
};
/// Parses the published best-hyper-parameter fixture (data/best_theta_reference.csv).
std::vector<ReferenceTheta> read_reference_thetas(const std::filesystem::path& path);

}  // namespace celmnav
