#include "celmnav/labels.hpp"

#include <cmath>
#include <numbers>

#include "celmnav/error.hpp"

namespace celmnav {

std::string_view to_string(LabelStrategy s) {
  switch (s) {
    case LabelStrategy::DeltaRange: return "delta_rho";
    case LabelStrategy::AsSpherical: return "as_spherical";
    case LabelStrategy::AsCartesian: return "as_cartesian";
    case LabelStrategy::WSpherical: return "w_spherical";
    case LabelStrategy::WCartesian: return "w_cartesian";
  }
  return "?";
}

std::string_view to_string(Frame f) {
  switch (f) {
    case Frame::Cam: return "CAM";
    case Frame::W: return "W";
    case Frame::AS: return "AS";
  }
  return "?";
}

std::string_view to_string(FrameGroup g) {
  switch (g) {
    case FrameGroup::ImageObservables: return "image";
    case FrameGroup::AS: return "AS";
    case FrameGroup::W: return "W";
  }
  return "?";
}

LabelStrategy parse_strategy(std::string_view text) {
  for (auto s : kAllStrategies) {
    if (text == to_string(s)) return s;
  }
  if (text.size() == 1 && text[0] >= '1' && text[0] <= '5') return static_cast<LabelStrategy>(text[0] - '0');
  throw Error("unknown labeling strategy '" + std::string(text) + "'");
}

bool is_spherical(LabelStrategy s) { return s == LabelStrategy::AsSpherical || s == LabelStrategy::WSpherical; }
bool is_cartesian(LabelStrategy s) { return s == LabelStrategy::AsCartesian || s == LabelStrategy::WCartesian; }

Frame position_frame(LabelStrategy s) {
  return (s == LabelStrategy::AsSpherical || s == LabelStrategy::AsCartesian) ? Frame::AS : Frame::W;
}

FrameGroup frame_group(LabelStrategy s) {
  if (s == LabelStrategy::DeltaRange) return FrameGroup::ImageObservables;
  return position_frame(s) == Frame::AS ? FrameGroup::AS : FrameGroup::W;
}

int output_size(LabelStrategy s) { return is_spherical(s) ? 4 : 3; }

Eigen::VectorXd target_vector(const LabelSet& labels) {
  Eigen::VectorXd t(output_size(labels.strategy));
  if (labels.strategy == LabelStrategy::DeltaRange) {
    t << labels.delta.x(), labels.delta.y(), labels.range;
  } else if (is_spherical(labels.strategy)) {
    const double az = labels.azimuth_deg * std::numbers::pi / 180.0;
    t << std::sin(az), std::cos(az), labels.elevation_deg, labels.range;
  } else {
    t = labels.position;
  }
  return t;
}

LabelSet labels_from_target(LabelStrategy strategy, const Eigen::Ref<const Eigen::VectorXd>& target) {
  if (target.size() != output_size(strategy)) throw ShapeError("target size does not match strategy");
  LabelSet out;
  out.strategy = strategy;
  if (strategy == LabelStrategy::DeltaRange) {
    out.delta = target.head<2>();
    out.range = target[2];
  } else if (is_spherical(strategy)) {
    out.azimuth_deg = std::atan2(target[0], target[1]) * 180.0 / std::numbers::pi;
    out.elevation_deg = target[2];
    out.range = target[3];
  } else {
    out.position = target.head<3>();
  }
  return out;
}

}  // namespace celmnav
