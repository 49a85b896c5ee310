#include "celmnav/imagery.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <random>

#include <json.hpp>

#include "celmnav/error.hpp"
#include "celmnav/navmetrics.hpp"
#include "celmnav/parallel.hpp"
#include "celmnav/preprocess.hpp"
#include "celmnav/rng.hpp"

namespace celmnav {

namespace fs = std::filesystem;
using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Crater rims extend to 1.5 crater radii.
constexpr double kRimExtent = 1.5;
constexpr double kRimHeight = 0.2;
constexpr double kRimWidth = 0.2;

double crater_profile(double t2, double depth) {
  if (t2 >= kRimExtent * kRimExtent) return 0.0;
  const double t = std::sqrt(t2);
  double f = depth * kRimHeight * std::exp(-((t - 1.0) / kRimWidth) * ((t - 1.0) / kRimWidth));
  if (t2 < 1.0) {
    const double s = 1.0 - t2;
    f -= depth * s * s;
  }
  return f;
}

double boulder_profile(double t2, double height) {
  if (t2 >= 1.0) return 0.0;
  const double s = 1.0 - t2;
  return height * s * std::sqrt(s);
}

double influence_radius(const SurfaceFeature& f, bool crater) {
  const double extent = crater ? kRimExtent * kRimExtent : 1.0;
  const double c = 1.0 - extent * (1.0 - std::cos(f.angular_radius));
  return std::acos(std::clamp(c, -1.0, 1.0));
}

// Cube-map bucketing of surface features so that evaluating the radius at a
// direction only visits the features that can reach it.
class SurfaceField {
 public:
  static constexpr int kGrid = 16;

  explicit SurfaceField(const BodyModel& body) : body_(body) {
    inv_axes2_ = body.semi_axes.cwiseProduct(body.semi_axes).cwiseInverse();
    static const std::vector<std::pair<Vector3d, double>> caps = [] {
      std::vector<std::pair<Vector3d, double>> c;
      for (int cell = 0; cell < 6 * kGrid * kGrid; ++cell) c.push_back(cell_cap(cell));
      return c;
    }();
    const auto add = [&](const SurfaceFeature& f, bool crater, int id) {
      const double reach = influence_radius(f, crater);
      for (int cell = 0; cell < 6 * kGrid * kGrid; ++cell) {
        const auto& [center, radius] = caps[static_cast<std::size_t>(cell)];
        const double ang = std::acos(std::clamp(center.dot(f.direction), -1.0, 1.0));
        if (ang <= reach + radius) cells_[cell].push_back(id);
      }
    };
    cells_.resize(6 * kGrid * kGrid);
    for (std::size_t i = 0; i < body.craters.size(); ++i) add(body.craters[i], true, static_cast<int>(i));
    for (std::size_t i = 0; i < body.boulders.size(); ++i)
      add(body.boulders[i], false, static_cast<int>(body.craters.size() + i));
    for (const auto* list : {&body.craters, &body.boulders})
      for (const auto& f : *list) inv_cap_.push_back(1.0 / (1.0 - std::cos(f.angular_radius)));
    for (const auto& ids : cells_) {
      double up = 0.0, down = 0.0;
      for (int id : ids) {
        const bool crater = id < static_cast<int>(body.craters.size());
        const double relief = crater ? body.craters[id].relief : body.boulders[id - body.craters.size()].relief;
        if (crater) {
          up += kRimHeight * relief;
          down += relief;
        } else {
          up += relief;
        }
      }
      max_up_ = std::max(max_up_, up);
      max_down_ = std::max(max_down_, down);
    }
  }

  double max_up() const { return max_up_; }
  double max_down() const { return max_down_; }

  double perturbation(const Vector3d& u) const {
    double p = 0.0;
    const std::size_t n_craters = body_.craters.size();
    for (int id : cells_[cell_of(u)]) {
      if (static_cast<std::size_t>(id) < n_craters) {
        const auto& f = body_.craters[id];
        p += crater_profile((1.0 - u.dot(f.direction)) * inv_cap_[id], f.relief);
      } else {
        const auto& f = body_.boulders[id - n_craters];
        p += boulder_profile((1.0 - u.dot(f.direction)) * inv_cap_[id], f.relief);
      }
    }
    return p;
  }

  double ellipsoid_radius(const Vector3d& u) const {
    return 1.0 / std::sqrt(u.cwiseProduct(u).dot(inv_axes2_));
  }

  // Signed radial gap: positive outside the surface.
  double gap(const Vector3d& p) const {
    const double r = p.norm();
    const Vector3d u = p / r;
    return r - ellipsoid_radius(u) * (1.0 + perturbation(u));
  }

  // Forward differences; the gap at a surface point is already ~0.
  Vector3d normal(const Vector3d& p) const {
    const double h = 1e-6 * body_.semi_axes.maxCoeff();
    const double g0 = gap(p);
    Vector3d g;
    for (int i = 0; i < 3; ++i) {
      Vector3d a = p;
      a[i] += h;
      g[i] = gap(a) - g0;
    }
    return g.normalized();
  }

 private:
  static int cell_of(const Vector3d& u) {
    const Vector3d a = u.cwiseAbs();
    int axis = 0;
    if (a[1] > a[axis]) axis = 1;
    if (a[2] > a[axis]) axis = 2;
    const int face = axis * 2 + (u[axis] < 0 ? 1 : 0);
    const double s = u[(axis + 1) % 3] / a[axis];
    const double t = u[(axis + 2) % 3] / a[axis];
    const int i = std::clamp(static_cast<int>((s + 1.0) * 0.5 * kGrid), 0, kGrid - 1);
    const int j = std::clamp(static_cast<int>((t + 1.0) * 0.5 * kGrid), 0, kGrid - 1);
    return (face * kGrid + j) * kGrid + i;
  }

  static Vector3d face_direction(int face, double s, double t) {
    const int axis = face / 2;
    Vector3d d;
    d[axis] = (face % 2 == 0) ? 1.0 : -1.0;
    d[(axis + 1) % 3] = s;
    d[(axis + 2) % 3] = t;
    return d.normalized();
  }

  static std::pair<Vector3d, double> cell_cap(int cell) {
    const int i = cell % kGrid;
    const int j = (cell / kGrid) % kGrid;
    const int face = cell / (kGrid * kGrid);
    const auto coord = [](int k) { return -1.0 + 2.0 * k / kGrid; };
    const double s0 = coord(i), s1 = coord(i + 1), t0 = coord(j), t1 = coord(j + 1);
    const Vector3d center = face_direction(face, 0.5 * (s0 + s1), 0.5 * (t0 + t1));
    double radius = 0.0;
    for (double s : {s0, s1}) {
      for (double t : {t0, t1}) {
        radius = std::max(radius, std::acos(std::clamp(center.dot(face_direction(face, s, t)), -1.0, 1.0)));
      }
    }
    return {center, radius};
  }

  const BodyModel& body_;
  Vector3d inv_axes2_;
  std::vector<std::vector<int>> cells_;
  std::vector<double> inv_cap_;
  double max_up_ = 0.0;
  double max_down_ = 0.0;
};

// Entry and exit of a ray with an axis-aligned ellipsoid.
bool intersect_ellipsoid(const Vector3d& o, const Vector3d& d, const Vector3d& axes, double& t_in,
                         double& t_out) {
  const Vector3d os = o.cwiseQuotient(axes);
  const Vector3d ds = d.cwiseQuotient(axes);
  const double a = ds.squaredNorm();
  const double b = os.dot(ds);
  const double c = os.squaredNorm() - 1.0;
  const double disc = b * b - a * c;
  if (disc < 0.0) return false;
  const double sq = std::sqrt(disc);
  t_in = (-b - sq) / a;
  t_out = (-b + sq) / a;
  return t_out > 0.0;
}

}  // namespace

// ---------------------------------------------------------------- camera ---

CameraModel::CameraModel(double fov_deg, int sensor_px) : fov_deg_(fov_deg), sensor_px_(sensor_px) {
  if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw Error("field of view must be in (0, 180) deg");
  if (sensor_px < 2) throw Error("sensor must be at least 2 px");
  focal_px_ = (sensor_px / 2.0) / std::tan(fov_deg * kDeg / 2.0);
  k_ << focal_px_, 0.0, sensor_px / 2.0, 0.0, focal_px_, sensor_px / 2.0, 0.0, 0.0, 1.0;
  k_inv_ = k_.inverse();
}

Vector2d CameraModel::project(const Vector3d& p_cam) const {
  const Vector3d h = k_ * (p_cam / p_cam.z());
  return h.head<2>();
}

Vector3d CameraModel::line_of_sight(const Vector2d& uv) const {
  return (k_inv_ * Vector3d(uv.x(), uv.y(), 1.0)).normalized();
}

// ------------------------------------------------------------------ body ---

double BodyModel::max_radius() const {
  const SurfaceField field(*this);
  return semi_axes.maxCoeff() * (1.0 + field.max_up());
}

double BodyModel::min_radius() const {
  const SurfaceField field(*this);
  return semi_axes.minCoeff() * (1.0 - field.max_down());
}

void BodyModel::validate() const {
  if ((semi_axes.array() <= 0.0).any()) throw Error("semi-axes must be strictly positive");
  if (!(albedo > 0.0 && albedo <= 1.0)) throw Error("albedo must be in (0, 1]");
  for (const auto* list : {&craters, &boulders}) {
    for (const auto& f : *list) {
      if (!(f.relief >= 0.0 && f.relief < 1.0)) throw Error("feature relief must be in [0, 1)");
      if (!(f.angular_radius > 0.0 && f.angular_radius < std::numbers::pi / 2))
        throw Error("feature angular radius must be in (0, pi/2)");
      if (std::abs(f.direction.norm() - 1.0) > 1e-9) throw Error("feature direction must be a unit vector");
    }
  }
  if (min_radius() <= 0.0) throw Error("surface features invert the surface");
}

double max_apparent_diameter_deg(const BodyModel& body, double range_km) {
  return 2.0 * std::asin(std::min(1.0, body.max_radius() / range_km)) / kDeg;
}

BodyModel scale_to_fov(BodyModel body, const CameraModel& camera, double reference_range_km, double fill_fraction) {
  const double target_half = 0.5 * fill_fraction * camera.fov_deg() * kDeg;
  const double target_radius = reference_range_km * std::sin(target_half);
  body.semi_axes *= target_radius / body.max_radius();
  return body;
}

BodyModel make_body(const Vector3d& semi_axes, int n_craters, int n_boulders, std::uint64_t seed, double albedo) {
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto direction = [&] {
    Vector3d d(gauss(rng), gauss(rng), gauss(rng));
    return d.normalized();
  };
  BodyModel body;
  body.semi_axes = semi_axes;
  body.albedo = albedo;
  for (int i = 0; i < n_craters; ++i) {
    const Vector3d d = direction();
    const double radius = 0.06 + 0.18 * unit(rng);
    const double depth = 0.015 + 0.035 * unit(rng);
    body.craters.push_back({d, radius, depth});
  }
  for (int i = 0; i < n_boulders; ++i) {
    const Vector3d d = direction();
    const double radius = 0.02 + 0.04 * unit(rng);
    const double height = 0.008 + 0.02 * unit(rng);
    body.boulders.push_back({d, radius, height});
  }
  body.validate();
  return body;
}

BodyModel body_preset(const std::string& name, const CameraModel& camera) {
  BodyModel body;
  if (name == "D") {
    body = make_body({1.0, 0.97, 0.9}, 25, 60, 0xD1D1);
  } else if (name == "H") {
    body = make_body({2.3, 0.9, 0.85}, 30, 40, 0x4A47);
  } else if (name == "L") {
    body = make_body({1.3, 1.0, 0.75}, 45, 50, 0x1E7E);
  } else if (name == "P") {
    body = make_body({1.6, 1.1, 0.95}, 35, 80, 0x67F0);
  } else if (name == "sphere") {
    body.semi_axes = {1.0, 1.0, 1.0};
  } else {
    throw Error("unknown body preset '" + name + "' (expected D, H, L, P or sphere)");
  }
  return scale_to_fov(body, camera);
}

// -------------------------------------------------------------- geometry ---

void ViewpointSample::validate() const {
  constexpr double eps = 1e-9;
  if (range_km < 5.0 - eps || range_km > 30.0 + eps) throw Error("range outside [5, 30] km");
  if (azimuth_deg < -90.0 - eps || azimuth_deg > 90.0 + eps) throw Error("azimuth outside [-90, 90] deg");
  if (elevation_deg < -45.0 - eps || elevation_deg > 45.0 + eps) throw Error("elevation outside [-45, 45] deg");
}

Vector3d GroundTruth::position_in(Frame frame) const {
  switch (frame) {
    case Frame::W: return position_w;
    case Frame::AS: return position_as;
    case Frame::Cam: return q_cam_to_w.conjugate() * position_w;
  }
  return position_w;
}

Matrix3d camera_to_w(const Vector3d& position_w) {
  const Vector3d z = (-position_w).normalized();
  Vector3d up = Vector3d::UnitZ() - Vector3d::UnitZ().dot(z) * z;
  if (up.norm() < 1e-9) {
    up = Vector3d::UnitX() - Vector3d::UnitX().dot(z) * z;
  }
  const Vector3d y = -up.normalized();
  const Vector3d x = y.cross(z);
  Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

Matrix3d as_to_w(double phase_deg) {
  return Eigen::AngleAxisd(phase_deg * kDeg, Vector3d::UnitZ()).toRotationMatrix();
}

GroundTruth viewpoint_truth(const BodyModel& body, const CameraModel& camera, const ViewpointSample& view) {
  GroundTruth truth;
  truth.range_km = view.range_km;
  truth.azimuth_w_deg = view.azimuth_deg;
  truth.elevation_w_deg = view.elevation_deg;
  truth.position_w = spherical_to_cartesian(view.azimuth_deg, view.elevation_deg, view.range_km);
  truth.body_phase_deg = body.rotation_phase_deg + view.body_phase_deg;
  truth.position_as = as_to_w(truth.body_phase_deg).transpose() * truth.position_w;
  truth.azimuth_as_deg = std::atan2(truth.position_as.y(), truth.position_as.x()) / kDeg;
  truth.elevation_as_deg = std::asin(std::clamp(truth.position_as.z() / view.range_km, -1.0, 1.0)) / kDeg;
  const Matrix3d r_cw = camera_to_w(truth.position_w);
  truth.q_cam_to_w = Eigen::Quaterniond(r_cw).normalized();
  const Vector3d com_cam = r_cw.transpose() * (-truth.position_w);
  truth.cof = camera.project(com_cam);
  truth.cob = truth.cof;
  return truth;
}

LabelSet labels_for(const GroundTruth& truth, LabelStrategy strategy) {
  LabelSet l;
  l.strategy = strategy;
  l.cob = truth.cob;
  l.cof = truth.cof;
  l.delta = truth.delta;
  l.range = truth.range_km;
  const Frame frame = position_frame(strategy);
  l.position = truth.position_in(frame);
  l.azimuth_deg = frame == Frame::AS ? truth.azimuth_as_deg : truth.azimuth_w_deg;
  l.elevation_deg = frame == Frame::AS ? truth.elevation_as_deg : truth.elevation_w_deg;
  return l;
}

// ------------------------------------------------------------- rendering ---

RenderResult render(const BodyModel& body, const CameraModel& camera, const ViewpointSample& view,
                    const Vector3d& sun_w) {
  view.validate();
  RenderResult out;
  out.truth = viewpoint_truth(body, camera, view);
  const GroundTruth& truth = out.truth;

  const SurfaceField field(body);
  const double r_out = body.semi_axes.maxCoeff() * (1.0 + field.max_up());
  if (view.range_km <= r_out) throw OutOfViewError("camera inside the body bounding sphere");

  const Matrix3d w_to_as = as_to_w(truth.body_phase_deg).transpose();
  const Matrix3d cam_to_as = w_to_as * truth.q_cam_to_w.toRotationMatrix();
  const Vector3d origin = w_to_as * truth.position_w;
  const Vector3d sun = (w_to_as * sun_w).normalized();
  const Vector3d outer_axes = body.semi_axes * (1.0 + field.max_up());
  const Vector3d inner_axes = body.semi_axes * (1.0 - field.max_down());

  const int n = camera.sensor_px();
  out.image = GrayImage(n, n);
  const Vector2d pp = camera.principal_point();
  const double half_angle = std::asin(r_out / view.range_km);
  const double radius_px = camera.focal_px() * std::tan(half_angle) + 2.0;
  const int u0 = std::max(0, static_cast<int>(std::floor(pp.x() - radius_px)));
  const int u1 = std::min(n - 1, static_cast<int>(std::ceil(pp.x() + radius_px)));
  const int v0 = std::max(0, static_cast<int>(std::floor(pp.y() - radius_px)));
  const int v1 = std::min(n - 1, static_cast<int>(std::ceil(pp.y() + radius_px)));
  if (u0 > u1 || v0 > v1) throw OutOfViewError("body bounding circle outside the sensor");

  constexpr int kSteps = 16;
  constexpr int kBisections = 12;
  std::vector<char> hit_rows(static_cast<std::size_t>(v1 - v0 + 1), 0);
  const double inv_f = 1.0 / camera.focal_px();

  parallel_for(static_cast<std::size_t>(v1 - v0 + 1), [&](std::size_t row) {
    const int v = v0 + static_cast<int>(row);
    for (int u = u0; u <= u1; ++u) {
      const Vector3d d_cam = Vector3d((u - pp.x()) * inv_f, (v - pp.y()) * inv_f, 1.0).normalized();
      const Vector3d d = cam_to_as * d_cam;
      double t_in, t_out;
      if (!intersect_ellipsoid(origin, d, outer_axes, t_in, t_out)) continue;
      double t_end = t_out;
      double i_in, i_out;
      if (intersect_ellipsoid(origin, d, inner_axes, i_in, i_out)) t_end = i_in;
      t_in = std::max(t_in, 0.0);
      double t_prev = t_in;
      double t_hit = -1.0;
      for (int k = 1; k <= kSteps; ++k) {
        const double t = t_in + (t_end - t_in) * k / kSteps;
        if (field.gap(origin + t * d) <= 0.0) {
          double lo = t_prev, hi = t;
          for (int b = 0; b < kBisections; ++b) {
            const double mid = 0.5 * (lo + hi);
            if (field.gap(origin + mid * d) > 0.0) {
              lo = mid;
            } else {
              hi = mid;
            }
          }
          t_hit = hi;
          break;
        }
        t_prev = t;
      }
      if (t_hit < 0.0) continue;
      hit_rows[row] = 1;
      const Vector3d n_surf = field.normal(origin + t_hit * d);
      const double shade = body.albedo * std::max(0.0, n_surf.dot(sun));
      out.image.at(u, v) = static_cast<float>(shade);
    }
  });
  if (std::none_of(hit_rows.begin(), hit_rows.end(), [](char c) { return c != 0; }))
    throw OutOfViewError("no camera ray hits the body");
  quantize_8bit(out.image);

  // CoB as the navigation pipeline measures it: Otsu foreground centroid.
  out.truth.cob = blob_analysis(out.image, otsu_threshold(out.image)).cob;
  out.truth.delta = out.truth.cof - out.truth.cob;
  return out;
}

// ----------------------------------------------------------------- cloud ---

std::vector<ViewpointSample> sample_cloud(std::size_t n, std::uint64_t seed, const CloudBounds& b) {
  if (n == 0) throw Error("cloud size must be at least 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ViewpointSample> cloud(n);
  for (auto& s : cloud) {
    s.range_km = b.range_min_km + (b.range_max_km - b.range_min_km) * unit(rng);
    s.azimuth_deg = b.azimuth_min_deg + (b.azimuth_max_deg - b.azimuth_min_deg) * unit(rng);
    s.elevation_deg = b.elevation_min_deg + (b.elevation_max_deg - b.elevation_min_deg) * unit(rng);
    s.body_phase_deg = 360.0 * unit(rng);
    s.frame = Frame::W;
    s.sun_w = Vector3d::UnitX();
  }
  return cloud;
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw Error("unknown split '" + std::string(text) + "'");
}

std::vector<Split> assign_splits(std::size_t n, const SplitSizes& sizes) {
  if (sizes.total() != n) throw Error("split sizes do not add up to the cloud size");
  std::vector<Split> out(n, Split::Test);
  std::fill_n(out.begin(), sizes.train, Split::Train);
  std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(sizes.train), sizes.val, Split::Val);
  return out;
}

std::string dataset_id(const std::string& body_name, LabelStrategy strategy) {
  return body_name + std::to_string(static_cast<int>(strategy));
}

std::string DatasetManifest::dataset_id() const { return celmnav::dataset_id(body_name, strategy); }

// -------------------------------------------------------------- manifest ---

namespace {

using nlohmann::json;

json vec_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

template <int N>
Eigen::Matrix<double, N, 1> json_vec(const json& a) {
  Eigen::Matrix<double, N, 1> v;
  if (!a.is_array() || a.size() != N) throw IoError("malformed vector in manifest");
  for (int i = 0; i < N; ++i) v[i] = a[i].get<double>();
  return v;
}

json record_json(const DatasetManifest& m, const ManifestRecord& r) {
  const GroundTruth& t = r.truth;
  json j;
  j["index"] = r.index;
  j["path"] = r.image_path;
  j["split"] = to_string(r.split);
  j["seed"] = r.seed;
  j["strategy"] = to_string(r.strategy);
  j["body"] = m.body_name;
  j["camera"] = {{"fov_deg", m.camera.fov_deg()}, {"sensor_px", m.camera.sensor_px()}};
  j["view"] = {{"range_km", r.view.range_km},
               {"azimuth_deg", r.view.azimuth_deg},
               {"elevation_deg", r.view.elevation_deg},
               {"body_phase_deg", r.view.body_phase_deg},
               {"sun_w", vec_json(r.view.sun_w)}};
  j["truth"] = {{"position_w", vec_json(t.position_w)},
                {"position_as", vec_json(t.position_as)},
                {"spherical_w", {t.azimuth_w_deg, t.elevation_w_deg, t.range_km}},
                {"spherical_as", {t.azimuth_as_deg, t.elevation_as_deg, t.range_km}},
                {"range_km", t.range_km},
                {"cob", vec_json(t.cob)},
                {"cof", vec_json(t.cof)},
                {"delta", vec_json(t.delta)},
                {"q_cam_to_w", {t.q_cam_to_w.w(), t.q_cam_to_w.x(), t.q_cam_to_w.y(), t.q_cam_to_w.z()}},
                {"body_phase_deg", t.body_phase_deg}};
  j["labels"] = vec_json(target_vector(labels_for(t, r.strategy)));
  return j;
}

ManifestRecord parse_record(const json& j, DatasetManifest& m) {
  ManifestRecord r;
  r.index = j.at("index").get<std::size_t>();
  r.image_path = j.at("path").get<std::string>();
  r.split = parse_split(j.at("split").get<std::string>());
  r.seed = j.at("seed").get<std::uint64_t>();
  r.strategy = parse_strategy(j.at("strategy").get<std::string>());
  m.body_name = j.at("body").get<std::string>();
  m.strategy = r.strategy;
  m.camera = CameraModel(j.at("camera").at("fov_deg").get<double>(), j.at("camera").at("sensor_px").get<int>());
  const json& v = j.at("view");
  r.view.range_km = v.at("range_km").get<double>();
  r.view.azimuth_deg = v.at("azimuth_deg").get<double>();
  r.view.elevation_deg = v.at("elevation_deg").get<double>();
  r.view.body_phase_deg = v.at("body_phase_deg").get<double>();
  r.view.sun_w = json_vec<3>(v.at("sun_w"));
  const json& t = j.at("truth");
  GroundTruth& g = r.truth;
  g.position_w = json_vec<3>(t.at("position_w"));
  g.position_as = json_vec<3>(t.at("position_as"));
  const auto sw = json_vec<3>(t.at("spherical_w"));
  const auto sa = json_vec<3>(t.at("spherical_as"));
  g.azimuth_w_deg = sw[0];
  g.elevation_w_deg = sw[1];
  g.azimuth_as_deg = sa[0];
  g.elevation_as_deg = sa[1];
  g.range_km = t.at("range_km").get<double>();
  g.cob = json_vec<2>(t.at("cob"));
  g.cof = json_vec<2>(t.at("cof"));
  g.delta = json_vec<2>(t.at("delta"));
  const auto q = json_vec<4>(t.at("q_cam_to_w"));
  g.q_cam_to_w = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
  g.body_phase_deg = t.at("body_phase_deg").get<double>();
  return r;
}

}  // namespace

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string());
  for (const auto& r : manifest.records) out << record_json(manifest, r).dump() << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  DatasetManifest m;
  m.path = path;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      m.records.push_back(parse_record(json::parse(line), m));
    } catch (const json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return m;
}

namespace {

struct RenderedSet {
  std::vector<std::string> paths;  // relative to the image root
  std::vector<GroundTruth> truths;
};

RenderedSet render_all(const BodyModel& body, const CameraModel& camera, const std::vector<ViewpointSample>& cloud,
                       const fs::path& image_dir, ImageFormat format, std::vector<fs::path>& written) {
  fs::create_directories(image_dir);
  RenderedSet set;
  set.paths.resize(cloud.size());
  set.truths.resize(cloud.size());
  std::mutex written_mutex;
  const char* ext = format == ImageFormat::Png ? ".png" : ".f32";
  // Rendering parallelizes internally over rows; images are produced in order.
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%06zu%s", i, ext);
    const fs::path file = image_dir / name;
    RenderResult r = render(body, camera, cloud[i], cloud[i].sun_w);
    write_image(r.image, file);
    {
      std::lock_guard lock(written_mutex);
      written.push_back(file);
    }
    set.paths[i] = name;
    set.truths[i] = std::move(r.truth);
  }
  return set;
}

void cleanup(const std::vector<fs::path>& files) {
  std::error_code ec;
  for (const auto& f : files) fs::remove(f, ec);
}

}  // namespace

std::vector<DatasetManifest> build_datasets(const BodyModel& body, const CameraModel& camera,
                                            const std::vector<ViewpointSample>& cloud,
                                            const std::vector<LabelStrategy>& strategies, const fs::path& out_dir,
                                            const BuildOptions& options) {
  body.validate();
  const auto splits = assign_splits(cloud.size(), options.splits);
  std::vector<fs::path> written;
  std::vector<DatasetManifest> manifests;
  try {
    fs::create_directories(out_dir);
    const fs::path image_dir = out_dir / "images";
    const RenderedSet set = render_all(body, camera, cloud, image_dir, options.format, written);
    for (LabelStrategy strategy : strategies) {
      DatasetManifest m;
      m.body_name = options.body_name;
      m.strategy = strategy;
      m.camera = camera;
      const fs::path dir = strategies.size() == 1 ? out_dir : out_dir / dataset_id(options.body_name, strategy);
      fs::create_directories(dir);
      m.path = dir / "manifest.jsonl";
      for (std::size_t i = 0; i < cloud.size(); ++i) {
        ManifestRecord r;
        r.index = i;
        r.image_path = fs::relative(image_dir / set.paths[i], dir).generic_string();
        r.split = splits[i];
        r.seed = derive_seed(options.seed, i);
        r.strategy = strategy;
        r.view = cloud[i];
        r.truth = set.truths[i];
        m.records.push_back(std::move(r));
      }
      written.push_back(m.path);
      write_manifest(m, m.path);
      manifests.push_back(std::move(m));
    }
  } catch (...) {
    cleanup(written);
    throw;
  }
  return manifests;
}

DatasetManifest build_dataset(const BodyModel& body, const CameraModel& camera,
                              const std::vector<ViewpointSample>& cloud, LabelStrategy strategy,
                              const fs::path& out_dir, const BuildOptions& options) {
  return build_datasets(body, camera, cloud, {strategy}, out_dir, options).front();
}

}  // namespace celmnav
