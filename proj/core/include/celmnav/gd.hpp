#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "celmnav/archgen.hpp"
#include "celmnav/dataset.hpp"
#include "celmnav/elm.hpp"
#include "celmnav/neural.hpp"

namespace celmnav {

struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 1e-3;
  int epochs = 30;
  std::uint64_t seed = 0;

  void validate(std::size_t train_size) const;
};

/// Adam moments shaped like the model (beta0 included).
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  std::int64_t step = 0;
  ModelParams m, v;

  static AdamState like(const ModelParams& params);
  void update(ModelParams& params, const ModelParams& grads, double learning_rate);
};

struct Checkpoint {
  ArchSpec spec;
  ModelParams params;
  Normalizer normalizer;
  int epoch = 0;
  double val_loss = 0;
};

struct LossGrad {
  double loss = 0;
  ModelParams grads;
};

/// Every parameter array of the model in a fixed order: per layer weights
/// then biases, then beta and beta0 when present.
std::vector<std::span<double>> parameter_buffers(ModelParams& params);

/// Head for gradient training: beta uniform in +-1/sqrt(L), beta0 zero.
ModelParams init_cnn(const ArchSpec& spec, std::uint64_t seed);

/// Mean squared error over batch and outputs against normalized targets
/// (one row per input) and its exact gradient. Max-pool ties route the
/// gradient to the first window element in scan order.
LossGrad loss_and_grad(std::span<const Tensor3> inputs, const Eigen::MatrixXd& targets, const ModelParams& params,
                       const ArchSpec& spec);
LossGrad loss_and_grad(std::span<const Sample> batch, const ModelParams& params, const ArchSpec& spec,
                       const Normalizer& normalizer);

/// Loss only, in fixed-order batches.
double dataset_loss(const Dataset& data, const ModelParams& params, const ArchSpec& spec,
                    const Normalizer& normalizer);

/// Network outputs for every sample, denormalized to S2 target units.
Eigen::MatrixXd predict_cnn(const Dataset& data, const Checkpoint& checkpoint);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0, val_loss = 0, seconds = 0;
};

struct CnnResult {
  Checkpoint best;
  std::vector<EpochLog> log;
  double seconds = 0;
};

/// Shuffled mini-batch Adam for a fixed epoch budget; returns the checkpoint
/// with the lowest validation loss (the initialization counts as epoch 0).
CnnResult train_cnn(const Dataset& train, const Dataset& val, const ArchSpec& spec, const TrainConfig& config);

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);

struct HybridResult {
  ModelParams params;  ///< source encoder with the least-squares head
  CelmResult celm;
  std::uint64_t encoder_hash = 0;
};

/// Keeps the source encoder frozen and retrains the head by least squares.
HybridResult train_hybrid(const Checkpoint& source, const Dataset& train, const Dataset& val, const ArchSpec& spec,
                          std::span<const double> c_grid);

}  // namespace celmnav
