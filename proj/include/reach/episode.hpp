#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "reach/arm_kinematics.hpp"

namespace reach {

/// Width of the full two-band IMU state x(t).
inline constexpr int kStateDim = 18;

/// Canonical column names of the episode CSV, in order.
inline const std::vector<std::string>& episode_csv_columns() {
  static const std::vector<std::string> columns = {
      "t",   "wax", "way", "waz", "wgx", "wgy", "wgz", "wmx", "wmy", "wmz", "uax",
      "uay", "uaz", "ugx", "ugy", "ugz", "umx", "umy", "umz", "px",  "py",  "pz"};
  return columns;
}

struct EpisodeMeta {
  std::string id;
  std::uint64_t seed = 0;
  int square_row = -1;
  int square_col = -1;
  double reach_time = 0.0;  // t_f, seconds
  double torso_yaw = 0.0;   // radians
  int mount_block = 0;      // increments whenever the bands are re-strapped
  kin::ArmModel arm;
};

/// One reaching motion sampled at a fixed rate.
///
/// `states` holds x(t) column-wise in the canonical ordering
/// [wrist accel, wrist gyro, wrist mag, upper accel, upper gyro, upper mag];
/// `positions` holds the ground-truth wrist p(t).
struct Episode {
  double rate = 60.0;
  std::vector<double> times;
  Eigen::MatrixXd states;      // kStateDim x N
  Eigen::Matrix3Xd positions;  // 3 x N
  std::size_t target_index = 0;  // last pre-hold sample
  Eigen::Vector3d target = Eigen::Vector3d::Zero();
  EpisodeMeta meta;

  std::size_t size() const { return times.size(); }
};

}  // namespace reach
