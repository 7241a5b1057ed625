#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "reach/arm_kinematics.hpp"
#include "reach/episode.hpp"

namespace reach::imu {

enum class Segment { UpperArm, Forearm };

/// How one band sits on its segment.
struct MountConfig {
  double roll = 0.0;          // about the segment axis, radians
  double anchor = 0.5;        // nominal fraction along the segment, 0 = proximal
  double anchor_shift = 0.0;  // meters along the segment

  /// Effective anchor fraction after the shift, clamped to [0, 1].
  double anchor_fraction(double segment_length) const;
};

struct BandMounts {
  MountConfig wrist{0.0, 0.9, 0.0};  // on the forearm, near the wrist
  MountConfig upper{0.0, 0.5, 0.0};  // mid upper arm
};

struct SegmentFrame {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world <- body
  double anchor = 0.0;
  bool degenerate = false;  // segment axis within 1e-6 of vertical
};

struct NoiseConfig {
  double accel_sigma = 0.05;  // m/s^2
  double gyro_sigma = 0.005;  // rad/s
  double mag_sigma = 0.01;    // normalized field units
  double accel_bias_sigma = 0.1;
  double gyro_bias_sigma = 0.01;
  double mag_bias_sigma = 0.02;

  static NoiseConfig none() { return {0, 0, 0, 0, 0, 0}; }
  void validate() const;
};

struct EnvConfig {
  Eigen::Vector3d gravity{0.0, 0.0, -9.81};
  Eigen::Vector3d magnetic = Eigen::Vector3d(0.4, 0.9, -0.2).normalized();
  /// Yaw of the shoulder frame about world z for this episode (torso orientation).
  double torso_yaw = 0.0;

  void validate() const;
};

struct ImuReading {
  Eigen::Vector3d accel = Eigen::Vector3d::Zero();
  Eigen::Vector3d gyro = Eigen::Vector3d::Zero();
  Eigen::Vector3d mag = Eigen::Vector3d::Zero();
};

struct BandBias {
  ImuReading offset;
};

/// Constant sensor offsets shared by every episode recorded between two re-strappings.
struct SensorBias {
  BandBias wrist;
  BandBias upper;
};

SensorBias draw_bias(const NoiseConfig& noise, std::uint64_t seed);

/// Orientation of a segment-mounted sensor in the shoulder frame.
///
/// Body x runs along the segment; the remaining axes come from Gram-Schmidt
/// against world z (world y when the segment is vertical), then the mount roll.
SegmentFrame segment_rotation(const kin::JointPose& q, Segment segment, const MountConfig& mount);

/// Body-frame angular rate vee(R^T dR/dt) of a segment sensor.
Eigen::Vector3d angular_velocity(const kin::JointPose& q, const kin::JointRates& qdot,
                                 Segment segment, const MountConfig& mount);

/// Noiseless readings at every sample of a dense trajectory plus the ground
/// truth they were derived from (all in the world frame).
struct DenseSimulation {
  double rate = 0.0;
  std::vector<double> times;
  std::vector<ImuReading> wrist;
  std::vector<ImuReading> upper;
  std::vector<Eigen::Matrix3d> wrist_rotation;
  std::vector<Eigen::Matrix3d> upper_rotation;
  std::vector<Eigen::Vector3d> wrist_anchor;
  std::vector<Eigen::Vector3d> upper_anchor;
  std::vector<Eigen::Vector3d> wrist_position;
};

DenseSimulation simulate_dense(const kin::JointTrajectory& traj, const kin::ArmModel& arm,
                               const BandMounts& mounts, const EnvConfig& env);

/// Decimates a dense trajectory into an `output_rate` episode with seeded noise.
///
/// Biases are drawn from `seed` in this overload.
Episode simulate_episode(const kin::JointTrajectory& traj, const kin::ArmModel& arm,
                         const BandMounts& mounts, const NoiseConfig& noise, const EnvConfig& env,
                         std::uint64_t seed, double output_rate = 60.0);

Episode simulate_episode(const kin::JointTrajectory& traj, const kin::ArmModel& arm,
                         const BandMounts& mounts, const NoiseConfig& noise, const EnvConfig& env,
                         const SensorBias& bias, std::uint64_t seed, double output_rate = 60.0);

struct PerturbationRange {
  double roll = 15.0 * 3.14159265358979323846 / 180.0;  // +- radians
  double anchor_shift = 0.02;                           // +- meters
};

/// Re-strapping: uniform roll and anchor shift around `base`.
MountConfig perturb_mount(const MountConfig& base, std::uint64_t seed,
                          const PerturbationRange& range = {});

BandMounts perturb_mounts(const BandMounts& base, std::uint64_t seed,
                          const PerturbationRange& range = {});

}  // namespace reach::imu
