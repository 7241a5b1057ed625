#include "reach/imu_synth.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "reach/errors.hpp"

namespace reach::imu {
namespace {

struct DirectionJet {
  Eigen::Vector3d d;
  Eigen::Vector3d d_elv;
  Eigen::Vector3d d_yaw;
};

DirectionJet segment_direction(const kin::JointPose& q, Segment segment) {
  const bool upper = segment == Segment::UpperArm;
  const double elv = upper ? q.theta_elv : q.phi_elv;
  const double yaw = upper ? q.theta_yaw : q.phi_yaw;
  const double se = std::sin(elv), ce = std::cos(elv);
  const double sy = std::sin(yaw), cy = std::cos(yaw);
  // The upper arm hangs from the shoulder (z = -cos), the forearm rises from the elbow (z = +cos).
  const double zsign = upper ? -1.0 : 1.0;
  DirectionJet jet;
  jet.d << se * sy, se * cy, zsign * ce;
  jet.d_elv << ce * sy, ce * cy, -zsign * se;
  jet.d_yaw << se * cy, -se * sy, 0.0;
  return jet;
}

Eigen::Matrix3d roll_about_x(double roll) {
  return Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()).toRotationMatrix();
}

struct FrameJet {
  Eigen::Matrix3d rotation;  // before mount roll
  Eigen::Matrix3d rate;      // time derivative, before mount roll
  bool degenerate = false;
};

FrameJet gram_schmidt_frame(const Eigen::Vector3d& x, const Eigen::Vector3d& xdot) {
  FrameJet out;
  Eigen::Vector3d ref = Eigen::Vector3d::UnitZ();
  if (x.cross(ref).norm() < 1e-6) {
    ref = Eigen::Vector3d::UnitY();
    out.degenerate = true;
  }
  const Eigen::Vector3d z_raw = ref - ref.dot(x) * x;
  const Eigen::Vector3d z_raw_dot = -ref.dot(xdot) * x - ref.dot(x) * xdot;
  const double len = z_raw.norm();
  const Eigen::Vector3d z = z_raw / len;
  const Eigen::Vector3d z_dot = (z_raw_dot - z * z.dot(z_raw_dot)) / len;
  const Eigen::Vector3d y = z.cross(x);
  const Eigen::Vector3d y_dot = z_dot.cross(x) + z.cross(xdot);
  out.rotation.col(0) = x;
  out.rotation.col(1) = y;
  out.rotation.col(2) = z;
  out.rate.col(0) = xdot;
  out.rate.col(1) = y_dot;
  out.rate.col(2) = z_dot;
  return out;
}

Eigen::Vector3d vee(const Eigen::Matrix3d& skew) {
  return {0.5 * (skew(2, 1) - skew(1, 2)), 0.5 * (skew(0, 2) - skew(2, 0)),
          0.5 * (skew(1, 0) - skew(0, 1))};
}

Eigen::Vector3d normal_vector(std::mt19937_64& rng, double sigma) {
  if (sigma == 0.0) return Eigen::Vector3d::Zero();
  std::normal_distribution<double> dist(0.0, sigma);
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) v[i] = dist(rng);
  return v;
}

ImuReading noisy(const ImuReading& clean, const BandBias& bias, const NoiseConfig& noise,
                 std::mt19937_64& rng) {
  ImuReading out;
  out.accel = clean.accel + bias.offset.accel + normal_vector(rng, noise.accel_sigma);
  out.gyro = clean.gyro + bias.offset.gyro + normal_vector(rng, noise.gyro_sigma);
  out.mag = clean.mag + bias.offset.mag + normal_vector(rng, noise.mag_sigma);
  return out;
}

}  // namespace

double MountConfig::anchor_fraction(double segment_length) const {
  return std::clamp(anchor + anchor_shift / segment_length, 0.0, 1.0);
}

void NoiseConfig::validate() const {
  for (double s : {accel_sigma, gyro_sigma, mag_sigma, accel_bias_sigma, gyro_bias_sigma,
                   mag_bias_sigma}) {
    if (!(s >= 0.0)) throw InvalidArgument("noise standard deviations must be non-negative");
  }
}

void EnvConfig::validate() const {
  if (!(gravity.norm() > 0.0) || !(magnetic.norm() > 0.0)) {
    throw InvalidArgument("gravity and magnetic field must be non-zero");
  }
}

SensorBias draw_bias(const NoiseConfig& noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SensorBias bias;
  for (BandBias* band : {&bias.wrist, &bias.upper}) {
    band->offset.accel = normal_vector(rng, noise.accel_bias_sigma);
    band->offset.gyro = normal_vector(rng, noise.gyro_bias_sigma);
    band->offset.mag = normal_vector(rng, noise.mag_bias_sigma);
  }
  return bias;
}

SegmentFrame segment_rotation(const kin::JointPose& q, Segment segment, const MountConfig& mount) {
  const DirectionJet jet = segment_direction(q, segment);
  const FrameJet frame = gram_schmidt_frame(jet.d, Eigen::Vector3d::Zero());
  SegmentFrame out;
  out.rotation = frame.rotation * roll_about_x(mount.roll);
  out.anchor = mount.anchor;
  out.degenerate = frame.degenerate;
  return out;
}

Eigen::Vector3d angular_velocity(const kin::JointPose& q, const kin::JointRates& qdot,
                                 Segment segment, const MountConfig& mount) {
  const DirectionJet jet = segment_direction(q, segment);
  const bool upper = segment == Segment::UpperArm;
  const double elv_rate = upper ? qdot[0] : qdot[2];
  const double yaw_rate = upper ? qdot[1] : qdot[3];
  const Eigen::Vector3d xdot = jet.d_elv * elv_rate + jet.d_yaw * yaw_rate;
  const FrameJet frame = gram_schmidt_frame(jet.d, xdot);
  const Eigen::Vector3d omega0 = vee(frame.rotation.transpose() * frame.rate);
  // The mount roll is constant, so only re-express the rate in the rolled body frame.
  return roll_about_x(mount.roll).transpose() * omega0;
}

DenseSimulation simulate_dense(const kin::JointTrajectory& traj, const kin::ArmModel& arm,
                               const BandMounts& mounts, const EnvConfig& env) {
  arm.validate();
  env.validate();
  const std::size_t n = traj.samples.size();
  if (n < 2) throw InvalidArgument("trajectory must contain at least two samples");
  if (!(traj.rate > 0.0)) throw InvalidArgument("trajectory rate must be positive");

  const Eigen::Matrix3d torso =
      Eigen::AngleAxisd(env.torso_yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const double upper_frac = mounts.upper.anchor_fraction(arm.upper_length);
  const double wrist_frac = mounts.wrist.anchor_fraction(arm.fore_length);

  DenseSimulation sim;
  sim.rate = traj.rate;
  sim.times.resize(n);
  sim.wrist.resize(n);
  sim.upper.resize(n);
  sim.wrist_rotation.resize(n);
  sim.upper_rotation.resize(n);
  sim.wrist_anchor.resize(n);
  sim.upper_anchor.resize(n);
  sim.wrist_position.resize(n);

  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = traj.samples[k];
    sim.times[k] = s.t;
    sim.upper_rotation[k] = torso * segment_rotation(s.q, Segment::UpperArm, mounts.upper).rotation;
    sim.wrist_rotation[k] = torso * segment_rotation(s.q, Segment::Forearm, mounts.wrist).rotation;
    const Eigen::Vector3d elbow = kin::elbow_position(s.q, arm);
    sim.upper_anchor[k] = torso * (upper_frac * elbow);
    sim.wrist_anchor[k] =
        torso * (elbow + wrist_frac * arm.fore_length * kin::forearm_direction(s.q));
    sim.wrist_position[k] = torso * kin::forward_kinematics(s.q, arm);
  }

  // Central differences; the arm is at rest before the first and after the last sample.
  const double inv_h2 = traj.rate * traj.rate;
  auto second_difference = [&](const std::vector<Eigen::Vector3d>& path, std::size_t k) {
    const Eigen::Vector3d& prev = path[k == 0 ? 0 : k - 1];
    const Eigen::Vector3d& next = path[k + 1 < n ? k + 1 : n - 1];
    return Eigen::Vector3d((next - 2.0 * path[k] + prev) * inv_h2);
  };

  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = traj.samples[k];
    const Eigen::Matrix3d& ru = sim.upper_rotation[k];
    const Eigen::Matrix3d& rw = sim.wrist_rotation[k];
    sim.upper[k].accel = ru.transpose() * (second_difference(sim.upper_anchor, k) - env.gravity);
    sim.wrist[k].accel = rw.transpose() * (second_difference(sim.wrist_anchor, k) - env.gravity);
    sim.upper[k].gyro = angular_velocity(s.q, s.qdot, Segment::UpperArm, mounts.upper);
    sim.wrist[k].gyro = angular_velocity(s.q, s.qdot, Segment::Forearm, mounts.wrist);
    sim.upper[k].mag = ru.transpose() * env.magnetic;
    sim.wrist[k].mag = rw.transpose() * env.magnetic;
  }
  return sim;
}

Episode simulate_episode(const kin::JointTrajectory& traj, const kin::ArmModel& arm,
                         const BandMounts& mounts, const NoiseConfig& noise, const EnvConfig& env,
                         std::uint64_t seed, double output_rate) {
  // Bias stream is decorrelated from the white-noise stream of the same seed.
  return simulate_episode(traj, arm, mounts, noise, env,
                          draw_bias(noise, seed ^ 0x9e3779b97f4a7c15ULL), seed, output_rate);
}

Episode simulate_episode(const kin::JointTrajectory& traj, const kin::ArmModel& arm,
                         const BandMounts& mounts, const NoiseConfig& noise, const EnvConfig& env,
                         const SensorBias& bias, std::uint64_t seed, double output_rate) {
  noise.validate();
  if (traj.samples.size() < 2) throw InvalidArgument("trajectory must contain at least two samples");
  if (!(output_rate > 0.0)) throw InvalidArgument("output rate must be positive");
  const double ratio = traj.rate / output_rate;
  const auto stride = static_cast<std::size_t>(std::llround(ratio));
  if (stride < 1 || std::abs(ratio - static_cast<double>(stride)) > 1e-9) {
    throw InvalidArgument("trajectory rate must be an integer multiple of the output rate");
  }

  const DenseSimulation sim = simulate_dense(traj, arm, mounts, env);
  const std::size_t count = (traj.samples.size() + stride - 1) / stride;

  Episode ep;
  ep.rate = output_rate;
  ep.times.resize(count);
  ep.states.resize(kStateDim, static_cast<Eigen::Index>(count));
  ep.positions.resize(3, static_cast<Eigen::Index>(count));

  std::mt19937_64 rng(seed);
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t k = j * stride;
    ep.times[j] = static_cast<double>(j) / output_rate;
    const ImuReading w = noisy(sim.wrist[k], bias.wrist, noise, rng);
    const ImuReading u = noisy(sim.upper[k], bias.upper, noise, rng);
    auto col = ep.states.col(static_cast<Eigen::Index>(j));
    col << w.accel, w.gyro, w.mag, u.accel, u.gyro, u.mag;
    ep.positions.col(static_cast<Eigen::Index>(j)) = sim.wrist_position[k];
  }

  const auto hold =
      static_cast<std::size_t>(std::ceil(traj.reach_time * output_rate - 1e-9));
  ep.target_index = std::min(hold, count - 1);
  ep.target = ep.positions.col(static_cast<Eigen::Index>(ep.target_index));
  ep.meta.seed = seed;
  ep.meta.reach_time = traj.reach_time;
  ep.meta.torso_yaw = env.torso_yaw;
  ep.meta.arm = arm;
  return ep;
}

MountConfig perturb_mount(const MountConfig& base, std::uint64_t seed,
                          const PerturbationRange& range) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  MountConfig out = base;
  const double roll = unit(rng);
  const double shift = unit(rng);
  out.roll = std::remainder(base.roll + range.roll * roll, 2.0 * std::numbers::pi);
  out.anchor_shift = base.anchor_shift + range.anchor_shift * shift;
  return out;
}

BandMounts perturb_mounts(const BandMounts& base, std::uint64_t seed,
                          const PerturbationRange& range) {
  BandMounts out;
  out.wrist = perturb_mount(base.wrist, seed * 2 + 1, range);
  out.upper = perturb_mount(base.upper, seed * 2 + 2, range);
  return out;
}

}  // namespace reach::imu
