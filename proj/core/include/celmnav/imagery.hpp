#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "celmnav/image.hpp"
#include "celmnav/labels.hpp"

namespace celmnav {

/// Pinhole camera with a square sensor and square field of view.
///
/// CAM axes: +Z boresight, +X right (increasing u), +Y down (increasing v).
class CameraModel {
 public:
  explicit CameraModel(double fov_deg = 10.0, int sensor_px = 1024);

  double fov_deg() const { return fov_deg_; }
  int sensor_px() const { return sensor_px_; }
  double focal_px() const { return focal_px_; }
  Eigen::Vector2d principal_point() const { return {sensor_px_ / 2.0, sensor_px_ / 2.0}; }
  const Eigen::Matrix3d& calibration() const { return k_; }
  const Eigen::Matrix3d& inverse_calibration() const { return k_inv_; }

  /// Pixel coordinates of a CAM-frame point (z > 0).
  Eigen::Vector2d project(const Eigen::Vector3d& p_cam) const;
  /// Unit line of sight in CAM through pixel (u, v).
  Eigen::Vector3d line_of_sight(const Eigen::Vector2d& uv) const;

 private:
  double fov_deg_;
  int sensor_px_;
  double focal_px_;
  Eigen::Matrix3d k_;
  Eigen::Matrix3d k_inv_;
};

/// Crater (negative) or boulder (positive) radial perturbation of the surface.
struct SurfaceFeature {
  Eigen::Vector3d direction;  ///< unit vector, body-fixed (AS) frame
  double angular_radius;      ///< rad
  double relief;              ///< depth or height as a fraction of the local radius
};

/// Procedural small body: triaxial ellipsoid with radial craters and boulders.
/// Lengths are in km and expressed in the body-fixed AS frame.
struct BodyModel {
  Eigen::Vector3d semi_axes{1.0, 1.0, 1.0};
  std::vector<SurfaceFeature> craters;
  std::vector<SurfaceFeature> boulders;
  double albedo = 1.0;
  double rotation_phase_deg = 0.0;  ///< AS frame rotation about W's Z at epoch

  /// Upper bound on the surface radius.
  double max_radius() const;
  /// Lower bound on the surface radius.
  double min_radius() const;
  void validate() const;
};

/// Uniformly rescales the body so that its maximum apparent diameter seen
/// from `reference_range_km` is `fill_fraction` of the field of view.
BodyModel scale_to_fov(BodyModel body, const CameraModel& camera, double reference_range_km = 5.0,
                       double fill_fraction = 0.9);

/// Apparent angular diameter (deg) of the bounding sphere from a given range.
double max_apparent_diameter_deg(const BodyModel& body, double range_km);

/// Seeded crater and boulder population on an ellipsoid.
BodyModel make_body(const Eigen::Vector3d& semi_axes, int n_craters, int n_boulders, std::uint64_t seed,
                    double albedo = 0.9);

/// Procedural stand-ins for the four small bodies, keyed "D", "H", "L", "P".
/// Already scaled to fill the field of view at 5 km.
BodyModel body_preset(const std::string& name, const CameraModel& camera = CameraModel{});

struct ViewpointSample {
  double range_km = 5.0;
  double azimuth_deg = 0.0;    ///< phi_1 in W
  double elevation_deg = 0.0;  ///< phi_2 in W
  double body_phase_deg = 0.0; ///< body rotation at the time of the image, added to the epoch phase
  Frame frame = Frame::W;
  Eigen::Vector3d sun_w = Eigen::Vector3d::UnitX();

  void validate() const;
};

struct GroundTruth {
  Eigen::Vector3d position_w = Eigen::Vector3d::Zero();
  Eigen::Vector3d position_as = Eigen::Vector3d::Zero();
  double azimuth_w_deg = 0, elevation_w_deg = 0;
  double azimuth_as_deg = 0, elevation_as_deg = 0;
  double range_km = 0;
  Eigen::Vector2d cob = Eigen::Vector2d::Zero();  ///< intensity centroid of the Otsu foreground
  Eigen::Vector2d cof = Eigen::Vector2d::Zero();  ///< projection of the center of mass
  Eigen::Vector2d delta = Eigen::Vector2d::Zero();
  Eigen::Quaterniond q_cam_to_w = Eigen::Quaterniond::Identity();
  double body_phase_deg = 0;  ///< total AS rotation about Z (epoch + sample)

  /// Position in the frame used by the strategy's labels.
  Eigen::Vector3d position_in(Frame frame) const;
};

/// S0 labels for a strategy, derived from the ground truth.
LabelSet labels_for(const GroundTruth& truth, LabelStrategy strategy);

/// Camera attitude for ideal pointing at the body CoM from `position_w`.
Eigen::Matrix3d camera_to_w(const Eigen::Vector3d& position_w);

/// Rotation from AS to W for a body phase.
Eigen::Matrix3d as_to_w(double phase_deg);

struct RenderResult {
  GrayImage image;
  GroundTruth truth;
};

/// Ray-traced Lambertian image of the body at a viewpoint, quantized to 8 bits.
/// `sun_w` is the unit direction toward the Sun in W.
RenderResult render(const BodyModel& body, const CameraModel& camera, const ViewpointSample& view,
                    const Eigen::Vector3d& sun_w);

/// Geometry-only ground truth for a viewpoint (no rendering; CoB is left at the CoF).
GroundTruth viewpoint_truth(const BodyModel& body, const CameraModel& camera, const ViewpointSample& view);

struct CloudBounds {
  double range_min_km = 5.0, range_max_km = 30.0;
  double azimuth_min_deg = -90.0, azimuth_max_deg = 90.0;
  double elevation_min_deg = -45.0, elevation_max_deg = 45.0;
};

/// Seeded uniform viewpoints; the sun is along +X of W and the body phase uniform in [0, 360).
std::vector<ViewpointSample> sample_cloud(std::size_t n, std::uint64_t seed, const CloudBounds& bounds = {});

enum class Split { Train, Val, Test };
std::string_view to_string(Split s);
Split parse_split(std::string_view text);

struct SplitSizes {
  std::size_t train = 7500, val = 5000, test = 5000;
  std::size_t total() const { return train + val + test; }
};

/// Split assignment by contiguous index ranges of the cloud.
std::vector<Split> assign_splits(std::size_t n, const SplitSizes& sizes);

struct ManifestRecord {
  std::size_t index = 0;
  std::string image_path;  ///< relative to the manifest directory
  Split split = Split::Train;
  std::uint64_t seed = 0;
  LabelStrategy strategy = LabelStrategy::DeltaRange;
  ViewpointSample view;
  GroundTruth truth;
};

struct DatasetManifest {
  std::string body_name;
  LabelStrategy strategy = LabelStrategy::DeltaRange;
  CameraModel camera;
  std::filesystem::path path;  ///< manifest.jsonl location
  std::vector<ManifestRecord> records;

  std::string dataset_id() const;  ///< e.g. "D1"
};

enum class ImageFormat { Png, RawF32 };

struct BuildOptions {
  ImageFormat format = ImageFormat::Png;
  SplitSizes splits{};
  std::uint64_t seed = 0;
  std::string body_name = "body";
};

/// Renders every viewpoint and writes images plus `manifest.jsonl` in out_dir.
/// On failure the partial manifest and the images written by this call are removed.
DatasetManifest build_dataset(const BodyModel& body, const CameraModel& camera,
                              const std::vector<ViewpointSample>& cloud, LabelStrategy strategy,
                              const std::filesystem::path& out_dir, const BuildOptions& options = {});

/// Builds one manifest per strategy over a single set of rendered images.
std::vector<DatasetManifest> build_datasets(const BodyModel& body, const CameraModel& camera,
                                            const std::vector<ViewpointSample>& cloud,
                                            const std::vector<LabelStrategy>& strategies,
                                            const std::filesystem::path& out_dir, const BuildOptions& options = {});

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Dataset notation: body letter followed by the strategy number.
std::string dataset_id(const std::string& body_name, LabelStrategy strategy);

}  // namespace celmnav
