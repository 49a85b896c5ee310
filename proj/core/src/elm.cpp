#include "celmnav/elm.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <chrono>
#include <cmath>

#include "celmnav/error.hpp"
#include "celmnav/parallel.hpp"

namespace celmnav {

Normalizer Normalizer::fit(const Eigen::MatrixXd& targets) {
  if (targets.rows() == 0) throw Error("cannot fit a normalizer on an empty set");
  Normalizer n;
  n.min = targets.colwise().minCoeff().transpose();
  n.max = targets.colwise().maxCoeff().transpose();
  for (Eigen::Index k = 0; k < n.min.size(); ++k)
    if (!(n.max[k] > n.min[k]))
      throw Error("label component " + std::to_string(k) + " is constant over the training set");
  return n;
}

Eigen::MatrixXd Normalizer::normalize(const Eigen::MatrixXd& t) const {
  return (t.rowwise() - min.transpose()).array().rowwise() / (max - min).transpose().array();
}

Eigen::MatrixXd Normalizer::denormalize(const Eigen::MatrixXd& z) const {
  return (z.array().rowwise() * (max - min).transpose().array()).matrix().rowwise() + min.transpose();
}

Eigen::VectorXd Normalizer::denormalize(const Eigen::VectorXd& z) const {
  return min + z.cwiseProduct(max - min);
}

HiddenMatrix assemble_H(std::span<const Sample> samples, const ModelParams& params, const ArchSpec& spec) {
  params.validate(spec);
  HiddenMatrix out;
  out.h.resize(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(spec.feature_size()));
  out.ids.resize(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const Sample& s = samples[i];
    const Eigen::VectorXd f = encode(to_tensor(s.s2.image), params, spec);
    if (!f.allFinite()) throw DivergenceError("non-finite feature for sample " + std::to_string(s.id));
    out.h.row(static_cast<Eigen::Index>(i)) = f.transpose();
    out.ids[i] = s.id;
  });
  return out;
}

namespace {

RidgeBranch resolve(RidgeBranch b, const Eigen::MatrixXd& h) {
  if (b != RidgeBranch::Auto) return b;
  return h.rows() <= h.cols() ? RidgeBranch::Dual : RidgeBranch::Primal;
}

}  // namespace

RidgeSolver::RidgeSolver(const Eigen::MatrixXd& h, const Eigen::MatrixXd& t, RidgeBranch branch)
    : h_(h), branch_(resolve(branch, h)) {
  if (t.rows() != h.rows()) throw ShapeError("H and T disagree on the sample count");
  if (branch_ == RidgeBranch::Dual) {
    gram_ = Eigen::MatrixXd::Zero(h.rows(), h.rows());
    gram_.selfadjointView<Eigen::Lower>().rankUpdate(h);
    rhs_ = t;
  } else {
    gram_ = Eigen::MatrixXd::Zero(h.cols(), h.cols());
    gram_.selfadjointView<Eigen::Lower>().rankUpdate(h.transpose());
    rhs_ = h.transpose() * t;
  }
}

Eigen::MatrixXd RidgeSolver::solve(double c) {
  if (!(c > 0)) throw Error("regularization coefficient must be positive");
  ++solves_;
  Eigen::MatrixXd a = gram_;
  a.diagonal().array() += 1.0 / c;
  Eigen::LLT<Eigen::MatrixXd, Eigen::Lower> llt(a);
  if (llt.info() != Eigen::Success)
    throw FactorizationError("Cholesky factorization failed at C=" + std::to_string(c) +
                             "; a smaller C (larger 1/C) regularizes the system");
  Eigen::MatrixXd x = llt.solve(rhs_);
  if (!x.allFinite()) throw FactorizationError("non-finite ridge solution at C=" + std::to_string(c));
  if (branch_ == RidgeBranch::Dual) return h_.transpose() * x;
  return x;
}

Eigen::MatrixXd solve_beta(const Eigen::MatrixXd& h, const Eigen::MatrixXd& t, double c, RidgeBranch branch) {
  RidgeSolver solver(h, t, branch);
  return solver.solve(c);
}

LabelSet predict(const Eigen::VectorXd& features, const Eigen::MatrixXd& beta, const Normalizer& normalizer,
                 LabelStrategy strategy) {
  if (features.size() != beta.rows() || beta.cols() != normalizer.min.size())
    throw ShapeError("feature, head and normalizer sizes disagree");
  const Eigen::VectorXd raw = beta.transpose() * features;
  return labels_from_target(strategy, normalizer.denormalize(raw));
}

Eigen::MatrixXd predict_targets(const HiddenMatrix& h, const Eigen::MatrixXd& beta, const Normalizer& normalizer) {
  return normalizer.denormalize(Eigen::MatrixXd(h.h * beta));
}

std::vector<PositionEstimate> estimate_positions(const Dataset& dataset, const Eigen::MatrixXd& predictions,
                                                 MethodTag method) {
  if (predictions.rows() != static_cast<Eigen::Index>(dataset.size()) ||
      predictions.cols() != output_size(dataset.strategy))
    throw ShapeError("prediction matrix does not match the dataset");
  std::vector<PositionEstimate> out;
  out.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Sample& s = dataset.samples[i];
    const Eigen::VectorXd row = predictions.row(static_cast<Eigen::Index>(i)).transpose();
    PositionEstimate e = reconstruct_position(labels_from_target(dataset.strategy, row), s.s2.record, dataset.camera,
                                              s.truth.q_cam_to_w);
    e.method = method;
    e.sample_id = s.id;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<MetricRow> evaluate_predictions(const Dataset& dataset, const Eigen::MatrixXd& predictions,
                                            MethodTag method) {
  const auto estimates = estimate_positions(dataset, predictions, method);
  const auto truths = dataset.truths();
  return compute_metrics(estimates, truths, dataset.strategy);
}

CelmResult fit_head(const HiddenMatrix& h_train, const Dataset& train, const HiddenMatrix& h_val, const Dataset& val,
                    std::span<const double> c_grid) {
  if (c_grid.empty()) throw Error("the C grid is empty");
  if (h_train.h.rows() != static_cast<Eigen::Index>(train.size()) ||
      h_val.h.rows() != static_cast<Eigen::Index>(val.size()))
    throw ShapeError("hidden matrices do not match their datasets");
  CelmResult r;
  r.normalizer = Normalizer::fit(train.targets());
  const Eigen::MatrixXd t = r.normalizer.normalize(train.targets());
  RidgeSolver solver(h_train.h, t);

  std::vector<double> grid(c_grid.begin(), c_grid.end());
  std::sort(grid.begin(), grid.end());
  bool found = false;
  for (double c : grid) {
    CScore s;
    s.c = c;
    try {
      Eigen::MatrixXd beta = solver.solve(c);
      s.beta_norm = beta.norm();
      const auto rows = evaluate_predictions(val, predict_targets(h_val, beta, r.normalizer));
      s.val_score = mean_eps_n(rows);
      s.ok = std::isfinite(s.val_score);
      if (s.ok && (!found || s.val_score < r.val_score)) {
        found = true;
        r.val_score = s.val_score;
        r.c = c;
        r.beta = std::move(beta);
      }
    } catch (const FactorizationError& e) {
      s.error = e.what();
    }
    r.scores.push_back(std::move(s));
  }
  r.solve_count = solver.solve_count();
  if (!found) throw FactorizationError("every regularization coefficient failed");
  return r;
}

CelmResult train_celm(const Dataset& train, const Dataset& val, const ModelParams& params, const ArchSpec& spec,
                      std::span<const double> c_grid) {
  const auto t0 = std::chrono::steady_clock::now();
  const HiddenMatrix h_train = assemble_H(train, params, spec);
  const HiddenMatrix h_val = assemble_H(val, params, spec);
  CelmResult r = fit_head(h_train, train, h_val, val, c_grid);
  r.h_assemblies = 1;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace celmnav
