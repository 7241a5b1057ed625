#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "reach/arm_kinematics.hpp"
#include "reach/errors.hpp"
#include "reach/rng.hpp"

using namespace reach;
using namespace reach::kin;

namespace {

constexpr double kPi = std::numbers::pi;
const ArmModel kArm{0.29, 0.285};

JointPose random_pose(Rng& rng) {
  std::uniform_real_distribution<double> elv(0.0, kPi), yaw(-kPi, kPi);
  return {elv(rng), yaw(rng), elv(rng), yaw(rng)};
}

// Reachable target: a point of a random pose pulled slightly inside the span.
Position3 random_target(Rng& rng) {
  Position3 p = forward_kinematics(random_pose(rng), kArm);
  if (p.norm() > 0.98 * kArm.span()) p *= 0.98 * kArm.span() / p.norm();
  return p;
}

}  // namespace

TEST_CASE("forward kinematics at reference poses") {
  CHECK((forward_kinematics({0, 0, 0, 0}, kArm) - Position3(0, 0, -0.005)).norm() < 1e-15);
  CHECK((forward_kinematics({kPi / 2, kPi / 2, kPi / 2, kPi / 2}, kArm) - Position3(0.575, 0, 0)).norm() < 1e-15);
  CHECK((forward_kinematics({kPi / 2, 0, kPi / 2, 0}, kArm) - Position3(0, 0.575, 0)).norm() < 1e-15);
}

TEST_CASE("forward kinematics never leaves the arm span") {
  Rng rng(1);
  std::uniform_real_distribution<double> any(-10.0, 10.0);
  double worst = 0.0;
  for (int k = 0; k < 100000; ++k) {
    const JointPose q{any(rng), any(rng), any(rng), any(rng)};
    worst = std::max(worst, forward_kinematics(q, kArm).norm());
  }
  CHECK(worst <= kArm.span() + 1e-15);
}

TEST_CASE("jacobian matches finite differences") {
  Rng rng(2);
  for (int k = 0; k < 50; ++k) {
    const JointPose q = random_pose(rng);
    const auto J = fk_jacobian(q, kArm);
    for (int j = 0; j < 4; ++j) {
      Eigen::Vector4d hi = q.vec(), lo = q.vec();
      hi[j] += 1e-6;
      lo[j] -= 1e-6;
      const Position3 fd = (forward_kinematics(JointPose::from_vec(hi), kArm) -
                            forward_kinematics(JointPose::from_vec(lo), kArm)) / 2e-6;
      CHECK((fd - J.col(j)).norm() < 1e-8);
    }
  }
}

TEST_CASE("min-jerk profile") {
  const MinJerk a = min_jerk_profile(0.0), b = min_jerk_profile(1.0);
  CHECK(std::abs(a.s) < 1e-12);
  CHECK(std::abs(a.ds) < 1e-12);
  CHECK(std::abs(a.dds) < 1e-12);
  CHECK(std::abs(b.s - 1.0) < 1e-12);
  CHECK(std::abs(b.ds) < 1e-12);
  CHECK(std::abs(b.dds) < 1e-12);
  CHECK(min_jerk_profile(0.5).s == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(min_jerk_profile(0.2).s == doctest::Approx(0.05792).epsilon(1e-12));
  CHECK(min_jerk_profile(0.5).ds == doctest::Approx(1.875));
  for (double t : {0.1, 0.33, 0.7}) CHECK(min_jerk_profile(t).s + min_jerk_profile(1 - t).s == doctest::Approx(1.0));
  CHECK_THROWS_AS(min_jerk_profile(1.01), InvalidArgument);
  CHECK_THROWS_AS(min_jerk_profile(-0.01), InvalidArgument);
}

TEST_CASE("canonicalize keeps the segments in place") {
  Rng rng(3);
  std::uniform_real_distribution<double> any(-7.0, 7.0);
  for (int k = 0; k < 1000; ++k) {
    const JointPose q{any(rng), any(rng), any(rng), any(rng)};
    const JointPose c = canonicalize(q);
    CHECK(c.within_limits());
    CHECK((upper_arm_direction(c) - upper_arm_direction(q)).norm() < 1e-12);
    CHECK((forearm_direction(c) - forearm_direction(q)).norm() < 1e-12);
  }
}

TEST_CASE("ik: seed at the solution is returned as is") {
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    const JointPose q = canonicalize(random_pose(rng));
    CHECK(solve_ik(forward_kinematics(q, kArm), kArm, q) == q);
  }
}

TEST_CASE("ik: round trip on random reachable targets") {
  Rng rng(5);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const Position3 target = random_target(rng);
    const JointPose seed = canonicalize(random_pose(rng));
    const JointPose q = solve_ik(target, kArm, seed);
    worst = std::max(worst, (forward_kinematics(q, kArm) - target).norm());
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("ik: fully extended target and unreachable targets") {
  Rng rng(6);
  const Position3 far(0, 0.575 * (1 - 1e-6), 0);
  for (int k = 0; k < 10; ++k) {
    const JointPose q = solve_ik(far, kArm, canonicalize(random_pose(rng)));
    CHECK((forward_kinematics(q, kArm) - far).norm() < 1e-6);
  }
  CHECK_THROWS_AS(solve_ik(Position3(0, 0.7, 0), kArm, {}), Unreachable);
  CHECK_THROWS_AS(solve_ik(Position3(0, 0.001, 0), kArm, {}), Unreachable);
}

TEST_CASE("reach plan: straight min-jerk path, hold and joint rates") {
  const JointPose q0{0.3, 0.2, 2.2, 0.1};
  const Position3 start = forward_kinematics(q0, kArm);
  const Position3 target(0.05, 0.35, -0.08);
  const double tf = 1.5, T = 2.0, rate = 240.0;
  const JointTrajectory traj = plan_reach(q0, target, tf, T, kArm, rate);
  REQUIRE(traj.samples.size() == 480);

  double peak = 0.0, peak_t = 0.0;
  for (std::size_t k = 0; k < traj.samples.size(); ++k) {
    const auto& s = traj.samples[k];
    if (k) CHECK(s.t > traj.samples[k - 1].t);
    CHECK((s.p - forward_kinematics(s.q, kArm)).norm() < 1e-12);
    // On the segment from start to target.
    const Position3 d = target - start;
    const double u = (s.p - start).dot(d) / d.squaredNorm();
    CHECK((start + u * d - s.p).norm() < 1e-6);
    if (k > 0) {
      const double v = (s.p - traj.samples[k - 1].p).norm() * rate;
      if (v > peak) {
        peak = v;
        peak_t = s.t - 0.5 / rate;
      }
    }
  }
  CHECK(peak == doctest::Approx(1.875 * (target - start).norm() / tf).epsilon(1e-3));
  CHECK(peak_t == doctest::Approx(tf / 2).epsilon(0.01));

  const auto& mid = traj.samples[static_cast<std::size_t>(tf / 2 * rate)];
  CHECK((mid.p - 0.5 * (start + target)).norm() < 1e-6);

  const auto& hold = traj.samples[traj.hold_index];
  for (std::size_t k = traj.hold_index; k < traj.samples.size(); ++k) {
    CHECK(traj.samples[k].q == hold.q);
    CHECK(traj.samples[k].qdot.norm() < 1e-9);
  }
  for (std::size_t k = 1; k + 1 < traj.hold_index; ++k) {
    const Eigen::Vector4d fd = (traj.samples[k + 1].q.vec() - traj.samples[k - 1].q.vec()) * rate / 2.0;
    CHECK((fd - traj.samples[k].qdot).cwiseAbs().maxCoeff() < 1e-3);
  }
}

TEST_CASE("reach plan: degenerate reach stays still") {
  const JointPose q0{0.4, 0.1, 1.9, -0.2};
  const JointTrajectory traj = plan_reach(q0, forward_kinematics(q0, kArm), 1.0, 2.0, kArm, 60.0);
  for (const auto& s : traj.samples) {
    CHECK((s.p - forward_kinematics(q0, kArm)).norm() < 1e-12);
    CHECK(s.qdot.norm() < 1e-9);
  }
  CHECK_THROWS_AS(plan_reach(q0, Position3(0, 0.35, 0), 2.5, 2.0, kArm, 60.0), InvalidArgument);
}
