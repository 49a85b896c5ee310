#include "celmnav/gd.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>

#include "celmnav/error.hpp"
#include "celmnav/parallel.hpp"
#include "celmnav/rng.hpp"

namespace celmnav {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z;
  for (const auto& l : p.layers)
    z.layers.push_back({Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()), Eigen::VectorXd::Zero(l.biases.size())});
  z.head.beta = Eigen::MatrixXd::Zero(p.head.beta.rows(), p.head.beta.cols());
  z.head.beta0 = Eigen::VectorXd::Zero(p.head.beta.cols());
  return z;
}

void add_into(ModelParams& acc, const ModelParams& g) {
  for (std::size_t i = 0; i < acc.layers.size(); ++i) {
    acc.layers[i].weights += g.layers[i].weights;
    acc.layers[i].biases += g.layers[i].biases;
  }
  acc.head.beta += g.head.beta;
  *acc.head.beta0 += *g.head.beta0;
}

/// Max pooling that also records the winning window slot (0..3, scan order).
Tensor3 pool_max_indexed(const Tensor3& in, std::vector<std::uint8_t>& slot) {
  Tensor3 out(in.height / 2, in.width / 2, in.channels);
  slot.assign(out.size(), 0);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int k = 0; k < in.channels; ++k) {
        double best = in.at(2 * y, 2 * x, k);
        std::uint8_t arg = 0;
        for (std::uint8_t s = 1; s < 4; ++s) {
          const double v = in.at(2 * y + s / 2, 2 * x + s % 2, k);
          if (v > best) {
            best = v;
            arg = s;
          }
        }
        out.at(y, x, k) = best;
        slot[out.index(y, x, k)] = arg;
      }
  return out;
}

Tensor3 unpool(const Tensor3& grad, Pooling kind, const std::vector<std::uint8_t>& slot) {
  Tensor3 out(grad.height * 2, grad.width * 2, grad.channels);
  for (int y = 0; y < grad.height; ++y)
    for (int x = 0; x < grad.width; ++x)
      for (int k = 0; k < grad.channels; ++k) {
        const double g = grad.at(y, x, k);
        if (kind == Pooling::Mean) {
          for (int s = 0; s < 4; ++s) out.at(2 * y + s / 2, 2 * x + s % 2, k) = 0.25 * g;
        } else {
          const int s = slot[grad.index(y, x, k)];
          out.at(2 * y + s / 2, 2 * x + s % 2, k) = g;
        }
      }
  return out;
}

struct LayerCache {
  RowMatrix cols;
  Tensor3 pre;
  std::vector<std::uint8_t> slot;
};

Eigen::VectorXd head_output(const ModelParams& p, const Eigen::VectorXd& f) {
  Eigen::VectorXd y = p.head.beta.transpose() * f;
  if (p.head.beta0) y += *p.head.beta0;
  return y;
}

/// Adds scale * d(squared error)/d(theta) of one sample into g; returns the squared error.
double backprop_sample(const Tensor3& x, const Eigen::VectorXd& target, const ModelParams& p, const ArchSpec& spec,
                       double scale, ModelParams& g) {
  std::vector<LayerCache> cache(static_cast<std::size_t>(spec.depth));
  Tensor3 cur = x;
  for (int i = 0; i < spec.depth; ++i) {
    LayerCache& c = cache[static_cast<std::size_t>(i)];
    const LayerParams& l = p.layers[static_cast<std::size_t>(i)];
    c.cols = im2col(cur);
    c.pre = Tensor3(cur.height, cur.width, l.c_out());
    auto pre = c.pre.matrix();
    pre.noalias() = c.cols * l.weights;
    pre.rowwise() += l.biases.transpose();
    const Tensor3 act = activate(c.pre, spec.activation);
    cur = spec.pooling == Pooling::Max ? pool_max_indexed(act, c.slot) : pool2(act, Pooling::Mean);
  }
  const Eigen::VectorXd f = cur.flat();
  const Eigen::VectorXd r = head_output(p, f) - target;
  const Eigen::VectorXd dy = 2.0 * scale * r;
  g.head.beta.noalias() += f * dy.transpose();
  *g.head.beta0 += dy;

  Tensor3 grad(cur.height, cur.width, cur.channels);
  Eigen::Map<Eigen::VectorXd>(grad.data.data(), static_cast<Eigen::Index>(grad.size())) = p.head.beta * dy;
  for (int i = spec.depth - 1; i >= 0; --i) {
    LayerCache& c = cache[static_cast<std::size_t>(i)];
    const LayerParams& l = p.layers[static_cast<std::size_t>(i)];
    Tensor3 dz = unpool(grad, spec.pooling, c.slot);
    if (spec.activation != Activation::None)
      for (std::size_t k = 0; k < dz.size(); ++k) dz.data[k] *= activate_grad(c.pre.data[k], spec.activation);
    const auto dzm = dz.matrix();
    LayerParams& gl = g.layers[static_cast<std::size_t>(i)];
    gl.weights.noalias() += c.cols.transpose() * dzm;
    gl.biases += dzm.colwise().sum().transpose();
    if (i > 0) {
      const RowMatrix dcols = dzm * l.weights.transpose();
      grad = col2im(dcols, dz.height, dz.width, l.c_in());
    }
  }
  return r.squaredNorm();
}

double sample_error(const Tensor3& x, const Eigen::VectorXd& target, const ModelParams& p, const ArchSpec& spec) {
  return (head_output(p, encode(x, p, spec)) - target).squaredNorm();
}

}  // namespace

void TrainConfig::validate(std::size_t train_size) const {
  if (batch_size < 1 || static_cast<std::size_t>(batch_size) > train_size)
    throw Error("batch size " + std::to_string(batch_size) + " must be in 1.." + std::to_string(train_size));
  if (!(learning_rate > 0)) throw Error("learning rate must be positive");
  if (epochs < 0) throw Error("epoch count must be non-negative");
}

std::vector<std::span<double>> parameter_buffers(ModelParams& p) {
  std::vector<std::span<double>> out;
  const auto add = [&out](auto& m) { out.emplace_back(m.data(), static_cast<std::size_t>(m.size())); };
  for (auto& l : p.layers) {
    add(l.weights);
    add(l.biases);
  }
  add(p.head.beta);
  if (p.head.beta0) add(*p.head.beta0);
  return out;
}

AdamState AdamState::like(const ModelParams& params) {
  AdamState s;
  s.m = zeros_like(params);
  s.v = zeros_like(params);
  return s;
}

void AdamState::update(ModelParams& params, const ModelParams& grads, double lr) {
  ++step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  auto pb = parameter_buffers(params);
  std::vector<std::span<const double>> gb;
  for (const auto& l : grads.layers) {
    gb.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
    gb.emplace_back(l.biases.data(), static_cast<std::size_t>(l.biases.size()));
  }
  gb.emplace_back(grads.head.beta.data(), static_cast<std::size_t>(grads.head.beta.size()));
  if (grads.head.beta0) gb.emplace_back(grads.head.beta0->data(), static_cast<std::size_t>(grads.head.beta0->size()));
  auto mb = parameter_buffers(m);
  auto vb = parameter_buffers(v);
  if (pb.size() != gb.size() || pb.size() > mb.size()) throw ShapeError("optimizer state does not mirror the model");
  for (std::size_t a = 0; a < pb.size(); ++a) {
    for (std::size_t k = 0; k < pb[a].size(); ++k) {
      const double g = gb[a][k];
      mb[a][k] = beta1 * mb[a][k] + (1.0 - beta1) * g;
      vb[a][k] = beta2 * vb[a][k] + (1.0 - beta2) * g * g;
      const double mh = mb[a][k] / c1, vh = vb[a][k] / c2;
      pb[a][k] -= lr * mh / (std::sqrt(vh) + epsilon);
    }
  }
}

ModelParams init_cnn(const ArchSpec& spec, std::uint64_t seed) {
  ModelParams p = init_kernels(spec, seed);
  const auto l = static_cast<double>(spec.feature_size());
  const double bound = 1.0 / std::sqrt(l);
  Rng rng(derive_seed(seed, 0x68656164ULL));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index r = 0; r < p.head.beta.rows(); ++r)
    for (Eigen::Index c = 0; c < p.head.beta.cols(); ++c) p.head.beta(r, c) = u(rng);
  p.head.beta0 = Eigen::VectorXd::Zero(spec.n_outputs);
  return p;
}

LossGrad loss_and_grad(std::span<const Tensor3> inputs, const Eigen::MatrixXd& targets, const ModelParams& params,
                       const ArchSpec& spec) {
  if (inputs.empty()) throw Error("empty batch");
  if (targets.rows() != static_cast<Eigen::Index>(inputs.size()) || targets.cols() != spec.n_outputs)
    throw ShapeError("target matrix does not match the batch");
  params.validate(spec);
  ModelParams p = params;
  if (!p.head.beta0) p.head.beta0 = Eigen::VectorXd::Zero(spec.n_outputs);

  const std::size_t n = inputs.size();
  const double scale = 1.0 / (static_cast<double>(n) * spec.n_outputs);
  const std::size_t chunks = chunk_count(n);
  std::vector<ModelParams> partial(chunks, zeros_like(p));
  std::vector<double> sq(chunks, 0.0);
  parallel_chunks(n, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      sq[chunk] += backprop_sample(inputs[i], targets.row(static_cast<Eigen::Index>(i)).transpose(), p, spec, scale,
                                   partial[chunk]);
  });
  LossGrad out;
  out.grads = std::move(partial[0]);
  double total = sq[0];
  for (std::size_t c = 1; c < chunks; ++c) {
    add_into(out.grads, partial[c]);
    total += sq[c];
  }
  out.loss = total * scale;
  if (!params.head.beta0) out.grads.head.beta0.reset();
  return out;
}

LossGrad loss_and_grad(std::span<const Sample> batch, const ModelParams& params, const ArchSpec& spec,
                       const Normalizer& normalizer) {
  std::vector<Tensor3> inputs;
  inputs.reserve(batch.size());
  Eigen::MatrixXd t(static_cast<Eigen::Index>(batch.size()), spec.n_outputs);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    inputs.push_back(to_tensor(batch[i].s2.image));
    t.row(static_cast<Eigen::Index>(i)) = target_vector(batch[i].s2.labels).transpose();
  }
  return loss_and_grad(inputs, normalizer.normalize(t), params, spec);
}

double dataset_loss(const Dataset& data, const ModelParams& params, const ArchSpec& spec,
                    const Normalizer& normalizer) {
  if (data.size() == 0) throw Error("loss over an empty dataset");
  const Eigen::MatrixXd t = normalizer.normalize(data.targets());
  std::vector<double> err(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    err[i] = sample_error(to_tensor(data.samples[i].s2.image), t.row(static_cast<Eigen::Index>(i)).transpose(),
                          params, spec);
  });
  return std::accumulate(err.begin(), err.end(), 0.0) / (static_cast<double>(data.size()) * spec.n_outputs);
}

Eigen::MatrixXd predict_cnn(const Dataset& data, const Checkpoint& ck) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(data.size()), ck.spec.n_outputs);
  parallel_for(data.size(), [&](std::size_t i) {
    const Tensor3 x = to_tensor(data.samples[i].s2.image);
    out.row(static_cast<Eigen::Index>(i)) = head_output(ck.params, encode(x, ck.params, ck.spec)).transpose();
  });
  return ck.normalizer.denormalize(out);
}

CnnResult train_cnn(const Dataset& train, const Dataset& val, const ArchSpec& spec, const TrainConfig& config) {
  config.validate(train.size());
  spec.validate();
  if (spec.n_outputs != output_size(train.strategy)) throw ShapeError("spec outputs do not match the labels");
  const auto t0 = Clock::now();

  CnnResult result;
  Checkpoint current;
  current.spec = spec;
  current.spec.batch_size = config.batch_size;
  current.spec.learning_rate = config.learning_rate;
  current.normalizer = Normalizer::fit(train.targets());
  current.params = init_cnn(spec, config.seed);
  current.val_loss = dataset_loss(val, current.params, spec, current.normalizer);
  if (!std::isfinite(current.val_loss)) throw DivergenceError("non-finite validation loss at initialization");
  result.best = current;
  result.log.push_back({0, std::nan(""), current.val_loss, seconds_since(t0)});

  AdamState adam = AdamState::like(current.params);
  std::vector<std::size_t> order(train.size());
  const auto bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, 0x65706f6368ULL + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double train_sum = 0.0;
    std::size_t batch_id = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++batch_id) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<Sample> batch;
      batch.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) batch.push_back(train.samples[order[k]]);
      LossGrad lg = loss_and_grad(batch, current.params, spec, current.normalizer);
      if (!std::isfinite(lg.loss))
        throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_id) + " (lr " + std::to_string(config.learning_rate) + ")");
      adam.update(current.params, lg.grads, config.learning_rate);
      train_sum += lg.loss * static_cast<double>(end - start);
    }
    current.epoch = epoch;
    current.val_loss = dataset_loss(val, current.params, spec, current.normalizer);
    if (!std::isfinite(current.val_loss))
      throw DivergenceError("validation loss became non-finite at epoch " + std::to_string(epoch));
    result.log.push_back({epoch, train_sum / static_cast<double>(train.size()), current.val_loss, seconds_since(t0)});
    if (current.val_loss < result.best.val_loss) result.best = current;
  }
  result.seconds = seconds_since(t0);
  return result;
}

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(10) << "epoch,train_loss,val_loss,seconds\n";
  for (const auto& e : log) {
    out << e.epoch << ',';
    if (std::isfinite(e.train_loss)) out << e.train_loss;
    out << ',' << e.val_loss << ',' << e.seconds << '\n';
  }
}

HybridResult train_hybrid(const Checkpoint& source, const Dataset& train, const Dataset& val, const ArchSpec& spec,
                          std::span<const double> c_grid) {
  if (!same_encoder(source.spec, spec))
    throw ShapeError("source encoder " + source.spec.key() + " does not match target " + spec.key());
  HybridResult r;
  r.params.layers = source.params.layers;
  r.params.head.beta = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.feature_size()), spec.n_outputs);
  r.celm = train_celm(train, val, r.params, spec, c_grid);
  r.params.head.beta = r.celm.beta;
  r.encoder_hash = encoder_hash(r.params);
  return r;
}

}  // namespace celmnav
