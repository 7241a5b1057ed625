#include "reach/arm_kinematics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "reach/errors.hpp"

namespace reach::kin {
namespace {

constexpr double kPi = std::numbers::pi;

double wrap_angle(double a) {
  if (a >= -kPi && a <= kPi) return a;
  a = std::remainder(a, 2.0 * kPi);
  return a;
}

// Unit vector spanning the null space of a 3x4 Jacobian (signed cofactors).
// Returns zero when the Jacobian is rank deficient.
Eigen::Vector4d null_direction(const Eigen::Matrix<double, 3, 4>& jac) {
  Eigen::Vector4d n;
  for (int k = 0; k < 4; ++k) {
    Eigen::Matrix3d minor;
    int col = 0;
    for (int j = 0; j < 4; ++j) {
      if (j == k) continue;
      minor.col(col++) = jac.col(j);
    }
    n[k] = ((k % 2 == 0) ? 1.0 : -1.0) * minor.determinant();
  }
  const double norm = n.norm();
  if (norm < 1e-12) return Eigen::Vector4d::Zero();
  return n / norm;
}

}  // namespace

void ArmModel::validate() const {
  if (!(upper_length > 0.0) || !(fore_length > 0.0)) {
    throw InvalidArgument("arm segment lengths must be positive");
  }
}

bool JointPose::within_limits() const {
  return theta_elv >= 0.0 && theta_elv <= kPi && phi_elv >= 0.0 && phi_elv <= kPi &&
         theta_yaw >= -kPi && theta_yaw <= kPi && phi_yaw >= -kPi && phi_yaw <= kPi;
}

JointPose canonicalize(JointPose q) {
  auto fix = [](double& elv, double& yaw) {
    elv = wrap_angle(elv);
    if (elv < 0.0) {
      elv = -elv;
      yaw += kPi;
    }
    yaw = wrap_angle(yaw);
  };
  fix(q.theta_elv, q.theta_yaw);
  fix(q.phi_elv, q.phi_yaw);
  return q;
}

Eigen::Vector3d upper_arm_direction(const JointPose& q) {
  const double se = std::sin(q.theta_elv);
  return {se * std::sin(q.theta_yaw), se * std::cos(q.theta_yaw), -std::cos(q.theta_elv)};
}

Eigen::Vector3d forearm_direction(const JointPose& q) {
  const double se = std::sin(q.phi_elv);
  return {se * std::sin(q.phi_yaw), se * std::cos(q.phi_yaw), std::cos(q.phi_elv)};
}

Position3 elbow_position(const JointPose& q, const ArmModel& arm) {
  return arm.upper_length * upper_arm_direction(q);
}

Position3 forward_kinematics(const JointPose& q, const ArmModel& arm) {
  const double ste = std::sin(q.theta_elv), cte = std::cos(q.theta_elv);
  const double sty = std::sin(q.theta_yaw), cty = std::cos(q.theta_yaw);
  const double spe = std::sin(q.phi_elv), cpe = std::cos(q.phi_elv);
  const double spy = std::sin(q.phi_yaw), cpy = std::cos(q.phi_yaw);
  const double lu = arm.upper_length, lf = arm.fore_length;
  return {lu * ste * sty + lf * spe * spy, lu * ste * cty + lf * spe * cpy, -lu * cte + lf * cpe};
}

Eigen::Matrix<double, 3, 4> fk_jacobian(const JointPose& q, const ArmModel& arm) {
  const double ste = std::sin(q.theta_elv), cte = std::cos(q.theta_elv);
  const double sty = std::sin(q.theta_yaw), cty = std::cos(q.theta_yaw);
  const double spe = std::sin(q.phi_elv), cpe = std::cos(q.phi_elv);
  const double spy = std::sin(q.phi_yaw), cpy = std::cos(q.phi_yaw);
  const double lu = arm.upper_length, lf = arm.fore_length;
  Eigen::Matrix<double, 3, 4> jac;
  jac.col(0) << lu * cte * sty, lu * cte * cty, lu * ste;
  jac.col(1) << lu * ste * cty, -lu * ste * sty, 0.0;
  jac.col(2) << lf * cpe * spy, lf * cpe * cpy, -lf * spe;
  jac.col(3) << lf * spe * cpy, -lf * spe * spy, 0.0;
  return jac;
}

MinJerk min_jerk_profile(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw InvalidArgument("min-jerk phase must lie in [0, 1]");
  }
  const double t2 = tau * tau, t3 = t2 * tau;
  MinJerk out;
  out.s = t3 * (10.0 + tau * (-15.0 + 6.0 * tau));
  out.ds = t2 * (30.0 + tau * (-60.0 + 30.0 * tau));
  out.dds = tau * (60.0 + tau * (-180.0 + 120.0 * tau));
  return out;
}

namespace {

// Damped-least-squares iterations from `q`, drifting along the redundant
// direction toward `anchor`. Returns false when the residual stalls.
bool dls_iterate(Eigen::Vector4d& q, const Eigen::Vector4d& anchor, const Position3& target,
                 const ArmModel& arm, const IkOptions& options, int& iterations, double& residual) {
  for (int it = 0;; ++it) {
    const JointPose pose = JointPose::from_vec(q);
    const Eigen::Vector3d err = target - forward_kinematics(pose, arm);
    residual = err.norm();
    iterations = it;
    if (residual < options.tolerance) return true;
    if (it == options.max_iterations) return false;
    const Eigen::Matrix<double, 3, 4> jac = fk_jacobian(pose, arm);
    // Damping fades with the residual so the final iterations are Gauss-Newton.
    const double lambda = std::min(options.damping, residual);
    const Eigen::Matrix3d normal = jac * jac.transpose() + lambda * lambda * Eigen::Matrix3d::Identity();
    Eigen::Vector4d step = jac.transpose() * normal.ldlt().solve(err);
    const Eigen::Vector4d null_dir = null_direction(jac);
    step += null_dir * null_dir.dot(anchor - q);
    const double step_norm = step.norm();
    if (step_norm > options.max_step) step *= options.max_step / step_norm;
    q += step;
  }
}

double nearest_turn(double angle, double reference) {
  return angle + 2.0 * kPi * std::round((reference - angle) / (2.0 * kPi));
}

// Joint angles putting the elbow at swivel angle `alpha` on the circle of
// elbow positions compatible with `target`, with yaws unwrapped toward `ref`.
Eigen::Vector4d swivel_pose(double alpha, const Position3& target, const ArmModel& arm,
                            const Eigen::Vector4d& ref) {
  const double lu = arm.upper_length, lf = arm.fore_length;
  const double d2 = target.squaredNorm();
  const Eigen::Vector3d axis = target / std::sqrt(d2);
  const Eigen::Vector3d center = (lu * lu - lf * lf + d2) / (2.0 * d2) * target;
  const double radius = std::sqrt(std::max(0.0, lu * lu - center.squaredNorm()));
  Eigen::Vector3d e1 = axis.cross(Eigen::Vector3d::UnitZ());
  if (e1.norm() < 1e-6) e1 = axis.cross(Eigen::Vector3d::UnitX());
  e1.normalize();
  const Eigen::Vector3d e2 = axis.cross(e1);
  const Eigen::Vector3d elbow = center + radius * (std::cos(alpha) * e1 + std::sin(alpha) * e2);
  const Eigen::Vector3d u = elbow / lu, f = (target - elbow) / lf;
  Eigen::Vector4d q;
  q[0] = std::atan2(std::hypot(u.x(), u.y()), -u.z());
  q[1] = nearest_turn(std::atan2(u.x(), u.y()), ref[1]);
  q[2] = std::atan2(std::hypot(f.x(), f.y()), f.z());
  q[3] = nearest_turn(std::atan2(f.x(), f.y()), ref[3]);
  return q;
}

// Point of the solution circle nearest `ref`: coarse scan then golden section.
Eigen::Vector4d closest_swivel_pose(const Position3& target, const ArmModel& arm, const Eigen::Vector4d& ref) {
  auto cost = [&](double a) { return (swivel_pose(a, target, arm, ref) - ref).squaredNorm(); };
  constexpr int kScan = 72;
  double best = 0.0, best_cost = cost(0.0);
  for (int k = 1; k < kScan; ++k) {
    const double a = 2.0 * kPi * k / kScan;
    if (const double c = cost(a); c < best_cost) {
      best = a;
      best_cost = c;
    }
  }
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = best - 2.0 * kPi / kScan, hi = best + 2.0 * kPi / kScan;
  for (int it = 0; it < 60; ++it) {
    const double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
    if (cost(a) < cost(b)) hi = b;
    else lo = a;
  }
  return swivel_pose(0.5 * (lo + hi), target, arm, ref);
}

}  // namespace

JointPose solve_ik(const Position3& target, const ArmModel& arm, const JointPose& seed,
                   const IkOptions& options) {
  arm.validate();
  const double radius = target.norm();
  const double outer = arm.span();
  const double inner = std::abs(arm.upper_length - arm.fore_length);
  if (!std::isfinite(radius) || radius > outer * (1.0 + 1e-12) || radius < inner * (1.0 - 1e-12)) {
    throw Unreachable("target at " + std::to_string(radius) + " m is outside the arm annulus [" +
                      std::to_string(inner) + ", " + std::to_string(outer) + "]");
  }

  const Eigen::Vector4d anchor = seed.vec();
  Eigen::Vector4d q = anchor;
  int iterations = 0;
  double residual = 0.0;
  if (dls_iterate(q, anchor, target, arm, options, iterations, residual)) {
    return iterations == 0 ? seed : canonicalize(JointPose::from_vec(q));
  }
  // Cold seeds far from the solution set can stall; restart from the point of
  // the solution circle nearest the seed, which the iteration then polishes.
  q = closest_swivel_pose(target, arm, anchor);
  if (dls_iterate(q, anchor, target, arm, options, iterations, residual)) {
    return canonicalize(JointPose::from_vec(q));
  }
  throw NotConverged("IK residual " + std::to_string(residual) + " m after " +
                     std::to_string(iterations) + " iterations");
}

JointTrajectory plan_reach(const JointPose& q0, const Position3& target, double reach_time,
                           double horizon, const ArmModel& arm, double rate) {
  arm.validate();
  if (!(reach_time > 0.0) || !(reach_time <= horizon)) {
    throw InvalidArgument("reach time must satisfy 0 < t_f <= T");
  }
  if (!(rate > 0.0)) throw InvalidArgument("sampling rate must be positive");

  JointTrajectory traj;
  traj.reach_time = reach_time;
  traj.horizon = horizon;
  traj.rate = rate;
  const auto count = static_cast<std::size_t>(std::llround(horizon * rate));
  if (count < 2) throw InvalidArgument("trajectory needs at least two samples");
  const double dt = 1.0 / rate;
  traj.hold_index = std::min<std::size_t>(
      count, static_cast<std::size_t>(std::ceil(reach_time * rate - 1e-9)));
  traj.samples.resize(count);

  const Position3 start = forward_kinematics(q0, arm);
  const Position3 delta = target - start;

  JointPose prev = q0;
  for (std::size_t k = 0; k < traj.hold_index; ++k) {
    auto& sample = traj.samples[k];
    sample.t = static_cast<double>(k) * dt;
    const MinJerk mj = min_jerk_profile(std::min(1.0, sample.t / reach_time));
    sample.q = solve_ik(start + mj.s * delta, arm, prev);
    sample.p = forward_kinematics(sample.q, arm);
    prev = sample.q;
  }
  const JointPose held = solve_ik(target, arm, prev);
  for (std::size_t k = traj.hold_index; k < count; ++k) {
    auto& sample = traj.samples[k];
    sample.t = static_cast<double>(k) * dt;
    sample.q = held;
    sample.qdot.setZero();
    sample.p = forward_kinematics(held, arm);
  }

  // Joint rates: the task-space part comes from the pseudo-inverse of the
  // Jacobian, the redundant (null-space) part from the sampled path itself.
  for (std::size_t k = 0; k < traj.hold_index; ++k) {
    auto& sample = traj.samples[k];
    const MinJerk mj = min_jerk_profile(std::min(1.0, sample.t / reach_time));
    const Eigen::Vector3d pdot = (mj.ds / reach_time) * delta;
    const Eigen::Matrix<double, 3, 4> jac = fk_jacobian(sample.q, arm);
    const Eigen::Matrix3d normal = jac * jac.transpose();
    const Eigen::Vector4d range_part = jac.transpose() * normal.ldlt().solve(pdot);
    const Eigen::Vector4d before = k == 0 ? q0.vec() : traj.samples[k - 1].q.vec();
    const Eigen::Vector4d after = traj.samples[k + 1 < count ? k + 1 : k].q.vec();
    const Eigen::Vector4d central = (after - before) / (2.0 * dt);
    const Eigen::Vector4d null_dir = null_direction(jac);
    sample.qdot = range_part + null_dir * null_dir.dot(central);
  }
  return traj;
}

}  // namespace reach::kin
