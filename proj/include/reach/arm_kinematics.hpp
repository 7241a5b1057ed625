#pragma once

#include <Eigen/Core>
#include <vector>

namespace reach::kin {

/// Position in the shoulder-centred world frame: y toward the board, z up. Meters.
using Position3 = Eigen::Vector3d;
using JointRates = Eigen::Vector4d;

struct ArmModel {
  double upper_length = 0.29;  // l_u
  double fore_length = 0.285;  // l_f

  double span() const { return upper_length + fore_length; }
  /// Throws InvalidArgument unless both lengths are positive.
  void validate() const;
};

/// Upper-arm and forearm elevation/yaw angles in radians.
///
/// Elevations live in [0, pi] and yaws in [-pi, pi]. Upper-arm elevation is
/// measured from straight down, forearm elevation from straight up.
struct JointPose {
  double theta_elv = 0.0;
  double theta_yaw = 0.0;
  double phi_elv = 0.0;
  double phi_yaw = 0.0;

  Eigen::Vector4d vec() const { return {theta_elv, theta_yaw, phi_elv, phi_yaw}; }
  static JointPose from_vec(const Eigen::Vector4d& v) { return {v[0], v[1], v[2], v[3]}; }

  bool within_limits() const;
  bool operator==(const JointPose&) const = default;
};

/// Maps any pose onto the joint limits without moving either segment.
///
/// A negative elevation is reflected with a half-turn of yaw; yaws wrap.
JointPose canonicalize(JointPose q);

/// Unit direction of the upper arm (shoulder to elbow).
Eigen::Vector3d upper_arm_direction(const JointPose& q);
/// Unit direction of the forearm (elbow to wrist).
Eigen::Vector3d forearm_direction(const JointPose& q);
Position3 elbow_position(const JointPose& q, const ArmModel& arm);

Position3 forward_kinematics(const JointPose& q, const ArmModel& arm);

/// d(wrist)/d(theta_elv, theta_yaw, phi_elv, phi_yaw).
Eigen::Matrix<double, 3, 4> fk_jacobian(const JointPose& q, const ArmModel& arm);

/// Minimum-jerk time scaling s(tau) = 10 tau^3 - 15 tau^4 + 6 tau^5 and its
/// first two derivatives with respect to tau.
struct MinJerk {
  double s = 0.0;
  double ds = 0.0;
  double dds = 0.0;
};

/// Throws InvalidArgument when tau is outside [0, 1].
MinJerk min_jerk_profile(double tau);

struct IkOptions {
  double damping = 0.01;
  int max_iterations = 200;
  double tolerance = 1e-10;  // wrist error, meters
  double max_step = 0.4;     // radians per iteration
};

/// Damped-least-squares IK with the one-dimensional redundancy resolved toward `seed`.
///
/// Throws Unreachable when the target is outside the annulus the arm can reach
/// and NotConverged when `max_iterations` is exhausted.
JointPose solve_ik(const Position3& target, const ArmModel& arm, const JointPose& seed,
                   const IkOptions& options = {});

struct TrajectorySample {
  double t = 0.0;
  JointPose q;
  JointRates qdot = JointRates::Zero();
  Position3 p = Position3::Zero();
};

struct JointTrajectory {
  double reach_time = 0.0;  // t_f
  double horizon = 0.0;     // T
  double rate = 0.0;        // Hz
  std::size_t hold_index = 0;  // first sample with t >= t_f
  std::vector<TrajectorySample> samples;
};

/// Straight task-space reach from FK(q0) to `target`, min-jerk time scaled over
/// [0, t_f] and held until T. Poses come from IK warm-started sample to sample.
JointTrajectory plan_reach(const JointPose& q0, const Position3& target, double reach_time,
                           double horizon, const ArmModel& arm, double rate);

}  // namespace reach::kin
