#pragma once

#include <Eigen/Core>
#include <array>
#include <string>
#include <string_view>

namespace celmnav {

/// The five labeling strategies. Numbering follows the dataset notation
/// (D1 ... D5): 1 = (delta, rho), 2 = AS spherical, 3 = AS Cartesian,
/// 4 = W spherical, 5 = W Cartesian.
enum class LabelStrategy { DeltaRange = 1, AsSpherical = 2, AsCartesian = 3, WSpherical = 4, WCartesian = 5 };

enum class Frame { Cam, W, AS };

/// Reference-frame families that share an encoder for HCELM3.
enum class FrameGroup { ImageObservables, AS, W };

inline constexpr std::array<LabelStrategy, 5> kAllStrategies = {
    LabelStrategy::DeltaRange, LabelStrategy::AsSpherical, LabelStrategy::AsCartesian,
    LabelStrategy::WSpherical, LabelStrategy::WCartesian};

std::string_view to_string(LabelStrategy s);
std::string_view to_string(Frame f);
std::string_view to_string(FrameGroup g);
LabelStrategy parse_strategy(std::string_view text);

bool is_spherical(LabelStrategy s);
bool is_cartesian(LabelStrategy s);
/// Frame in which position labels (and the reconstructed position) live.
/// The (delta, rho) strategy reconstructs in W.
Frame position_frame(LabelStrategy s);
FrameGroup frame_group(LabelStrategy s);
/// Number of network outputs: 4 for spherical labels (sin, cos of azimuth), else 3.
int output_size(LabelStrategy s);

/// Labels of one image in a given space (S0, S1 or S2).
///
/// All geometric quantities are carried so that the space transforms act
/// uniformly; the strategy selects which of them form the network target.
/// Spherical coordinates and positions are expressed in position_frame().
struct LabelSet {
  LabelStrategy strategy = LabelStrategy::DeltaRange;
  Eigen::Vector2d cob = Eigen::Vector2d::Zero();  ///< center of brightness, UV px
  Eigen::Vector2d cof = Eigen::Vector2d::Zero();  ///< center of figure, UV px
  Eigen::Vector2d delta = Eigen::Vector2d::Zero();
  double range = 0.0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
};

/// Network target vector for the strategy:
///   DeltaRange: (delta_u, delta_v, rho)
///   spherical:  (sin az, cos az, el, rho)
///   Cartesian:  (X, Y, Z)
Eigen::VectorXd target_vector(const LabelSet& labels);

/// Inverse of target_vector for a network estimate. Fields the strategy does
/// not predict stay zero; the azimuth is recovered with atan2(sin, cos).
LabelSet labels_from_target(LabelStrategy strategy, const Eigen::Ref<const Eigen::VectorXd>& target);

}  // namespace celmnav
