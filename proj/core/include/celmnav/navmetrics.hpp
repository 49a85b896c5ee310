#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "celmnav/imagery.hpp"
#include "celmnav/labels.hpp"
#include "celmnav/preprocess.hpp"

namespace celmnav {

enum class MethodTag { CELM, CNN, HCELM, HCELM3 };
std::string_view to_string(MethodTag m);
MethodTag parse_method(std::string_view text);

/// Spherical (azimuth, elevation in deg; range) to Cartesian:
/// X = r cos(el) cos(az), Y = r cos(el) sin(az), Z = r sin(el).
Eigen::Vector3d spherical_to_cartesian(double azimuth_deg, double elevation_deg, double range);

struct PositionEstimate {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  ///< spacecraft position, km
  Frame frame = Frame::W;
  MethodTag method = MethodTag::CELM;
  std::size_t sample_id = 0;
  /// Set on the (delta, rho) path only.
  std::optional<Eigen::Vector2d> cof_s0;
  std::optional<double> range_s0;
};

/// Optical-observable path: CoF = CoB_S0 + delta * gamma / 128, range scaled
/// likewise, line of sight through the inverse calibration, rotated to W.
///
/// The line of sight points from the camera to the body, so the spacecraft
/// position in W is -q * (range * LOS).
PositionEstimate observables_to_position(const Eigen::Vector2d& delta_s2, double range_s2,
                                         const PreprocessRecord& record, const CameraModel& camera,
                                         const Eigen::Quaterniond& q_cam_to_w);

/// Reconstructs an S0 position for any strategy from S2 label estimates.
PositionEstimate reconstruct_position(const LabelSet& estimate_s2, const PreprocessRecord& record,
                                      const CameraModel& camera, const Eigen::Quaterniond& q_cam_to_w);

struct TruthSample {
  std::size_t id = 0;
  GroundTruth truth;
};

struct MetricRow {
  std::size_t sample_id = 0;
  Eigen::Vector3d eps_p = Eigen::Vector3d::Zero();    ///< km, strategy frame
  double eps_n = 0.0;                                 ///< percent of the true range
  Eigen::Vector3d eps_cam = Eigen::Vector3d::Zero();  ///< eps_p resolved on CAM axes
  std::optional<double> eps_cof_u, eps_cof_v, eps_cof;  ///< px, (delta, rho) only
  std::optional<double> eps_rho;                        ///< km, (delta, rho) only
};

double position_error_percent(const Eigen::Vector3d& eps_p, double true_range);

/// Metrics for estimates aligned one-to-one with truths by sample id.
std::vector<MetricRow> compute_metrics(std::span<const PositionEstimate> estimates,
                                       std::span<const TruthSample> truths, LabelStrategy strategy);

double mean_eps_n(std::span<const MetricRow> rows);

// -------------------------------------------------------------- report ---

struct FiveNumber {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
};
/// Quartiles by linear interpolation between order statistics.
FiveNumber five_number_summary(std::vector<double> values);

struct ErrorEllipse {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero();
  double sigma_major = 0, sigma_minor = 0;  ///< 1-sigma semi-axes
  double angle_deg = 0;                     ///< major axis from +u toward +v
};
ErrorEllipse error_ellipse(std::span<const Eigen::Vector2d> errors);

struct HistogramBin {
  double lo = 0, hi = 0, density = 0;
};
std::vector<HistogramBin> histogram(std::span<const double> values, int bins);

struct MetricTable {
  std::string dataset_id;
  std::string body;
  LabelStrategy strategy = LabelStrategy::DeltaRange;
  MethodTag method = MethodTag::CELM;
  std::vector<MetricRow> rows;
};

/// Best-method share per dataset: fraction of samples (by id) on which each
/// method has the lowest eps_n. Ties go to the earlier method tag.
struct ShareRow {
  std::string dataset_id;
  MethodTag method;
  double share_percent;
};
std::vector<ShareRow> best_method_shares(std::span<const MetricTable> tables);

/// Writes quantiles.csv, mean_matrix.csv, best_share.csv, hist_cof.csv,
/// hist_rho.csv, ellipses.csv, cam_errors.csv and series.json to out_dir.
void emit_report(std::span<const MetricTable> tables, const std::filesystem::path& out_dir, int histogram_bins = 30);

void write_metric_rows(const MetricTable& table, const std::filesystem::path& path);
MetricTable read_metric_rows(const std::filesystem::path& path);

}  // namespace celmnav
