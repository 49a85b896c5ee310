#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <vector>

#include "celmnav/archgen.hpp"
#include "celmnav/dataset.hpp"
#include "celmnav/navmetrics.hpp"
#include "celmnav/neural.hpp"

namespace celmnav {

/// Per-component min-max scaling of targets to [0, 1], fitted on a training set.
struct Normalizer {
  Eigen::VectorXd min, max;

  /// Throws Error when a component is constant.
  static Normalizer fit(const Eigen::MatrixXd& targets);
  Eigen::MatrixXd normalize(const Eigen::MatrixXd& targets) const;
  Eigen::MatrixXd denormalize(const Eigen::MatrixXd& normalized) const;
  Eigen::VectorXd denormalize(const Eigen::VectorXd& normalized) const;
};

struct HiddenMatrix {
  Eigen::MatrixXd h;              ///< N x L, row i = features of sample i
  std::vector<std::size_t> ids;   ///< sample id of each row
};

HiddenMatrix assemble_H(std::span<const Sample> samples, const ModelParams& params, const ArchSpec& spec);
inline HiddenMatrix assemble_H(const Dataset& d, const ModelParams& params, const ArchSpec& spec) {
  return assemble_H(std::span<const Sample>(d.samples), params, spec);
}

enum class RidgeBranch { Auto, Dual, Primal };

/// Minimizer of |beta|^2 + C |H beta - T|^2. Dual: H^T (I/C + H H^T)^-1 T,
/// primal: (I/C + H^T H)^-1 H^T T; Auto picks dual when N <= L. Both go
/// through a Cholesky factorization.
Eigen::MatrixXd solve_beta(const Eigen::MatrixXd& h, const Eigen::MatrixXd& t, double c,
                           RidgeBranch branch = RidgeBranch::Auto);

/// Keeps the Gram matrix of one H so that a sweep over C costs one
/// factorization per value.
class RidgeSolver {
 public:
  RidgeSolver(const Eigen::MatrixXd& h, const Eigen::MatrixXd& t, RidgeBranch branch = RidgeBranch::Auto);
  Eigen::MatrixXd solve(double c);
  RidgeBranch branch() const { return branch_; }
  int solve_count() const { return solves_; }

 private:
  const Eigen::MatrixXd& h_;
  RidgeBranch branch_;
  Eigen::MatrixXd gram_;
  Eigen::MatrixXd rhs_;  ///< T (dual) or H^T T (primal)
  int solves_ = 0;
};

/// Denormalized S2 label estimate from one feature vector.
LabelSet predict(const Eigen::VectorXd& features, const Eigen::MatrixXd& beta, const Normalizer& normalizer,
                 LabelStrategy strategy);

/// S0 position estimates for rows of S2 target predictions (N x m, denormalized).
std::vector<PositionEstimate> estimate_positions(const Dataset& dataset, const Eigen::MatrixXd& predictions,
                                                 MethodTag method);
/// Metric rows for S2 target predictions against the dataset truth.
std::vector<MetricRow> evaluate_predictions(const Dataset& dataset, const Eigen::MatrixXd& predictions,
                                            MethodTag method = MethodTag::CELM);

struct CScore {
  double c = 0;
  bool ok = false;
  double val_score = 0;  ///< mean eps_n on the validation set
  double beta_norm = 0;
  std::string error;
};

struct CelmResult {
  Eigen::MatrixXd beta;
  double c = 0;
  double val_score = 0;
  Normalizer normalizer;
  std::vector<CScore> scores;
  int solve_count = 0;
  int h_assemblies = 0;
  double seconds = 0;  ///< wall time of H assembly and the C sweep
};

/// Fits the normalizer on train, solves one beta per C and keeps the C with
/// the lowest validation eps_n (ties go to the smaller C).
CelmResult train_celm(const Dataset& train, const Dataset& val, const ModelParams& params, const ArchSpec& spec,
                      std::span<const double> c_grid);
/// Same, on hidden matrices already assembled.
CelmResult fit_head(const HiddenMatrix& h_train, const Dataset& train, const HiddenMatrix& h_val, const Dataset& val,
                    std::span<const double> c_grid);

/// S2 predictions (denormalized) for every row of H.
Eigen::MatrixXd predict_targets(const HiddenMatrix& h, const Eigen::MatrixXd& beta, const Normalizer& normalizer);

}  // namespace celmnav
