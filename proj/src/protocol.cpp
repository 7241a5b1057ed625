#include "reach/protocol.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <cstdio>

#include "reach/errors.hpp"
#include "reach/rng.hpp"

namespace reach::data {
namespace {

constexpr int kMaxAttempts = 50;
constexpr double kMaxJointJump = 0.2;  // rad between dense samples

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool has_joint_jump(const kin::JointTrajectory& traj) {
  for (std::size_t k = 1; k < traj.samples.size(); ++k) {
    const Eigen::Vector4d d = traj.samples[k].q.vec() - traj.samples[k - 1].q.vec();
    if (d.cwiseAbs().maxCoeff() > kMaxJointJump) return true;
  }
  return false;
}

std::string episode_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ep_%05zu", index);
  return buf;
}

}  // namespace

int ProtocolConfig::active_squares() const {
  const int all = board.square_count();
  return squares < 0 ? all : std::min(squares, all);
}

kin::JointPose sample_rest_pose(Rng& rng) {
  if (std::bernoulli_distribution(0.5)(rng)) {
    // hanging by the hip, elbow slightly bent
    return {uniform(rng, 0.15, 0.45), uniform(rng, -0.5, 0.5), uniform(rng, 2.0, 2.6),
            uniform(rng, -0.5, 0.5)};
  }
  // palm on the chest
  return {uniform(rng, 0.25, 0.6), uniform(rng, -0.3, 0.5), uniform(rng, 0.5, 1.1),
          uniform(rng, -1.8, -1.0)};
}

Episode generate_episode(const ProtocolConfig& config, int row, int col, std::size_t index,
                         const imu::BandMounts& mounts, const imu::SensorBias& bias) {
  const std::uint64_t seed = mix_seed(config.seed, index);
  Rng rng(seed);
  const double half = 0.5 * config.board.square;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Eigen::Vector3d touch = config.board.square_center(row, col);
    touch.x() += uniform(rng, -half, half);
    touch.z() += uniform(rng, -half, half);
    const double yaw = uniform(rng, -config.torso_yaw_max, config.torso_yaw_max);
    // Reach durations land on the output sampling grid so p(t_f) is a recorded sample.
    const double raw_tf = uniform(rng, config.reach_time_min, config.reach_time_max);
    const double reach_time = std::max(1.0, std::round(raw_tf * config.rate)) / config.rate;
    const kin::JointPose rest = sample_rest_pose(rng);

    const Eigen::Vector3d local =
        Eigen::AngleAxisd(-yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix() * touch;
    kin::JointTrajectory traj;
    try {
      traj = kin::plan_reach(rest, local, reach_time, config.horizon, config.arm,
                             config.internal_rate);
    } catch (const NotConverged&) {
      continue;
    } catch (const Unreachable&) {
      continue;
    }
    if (has_joint_jump(traj)) continue;

    imu::EnvConfig env = config.env;
    env.torso_yaw = yaw;
    Episode ep = imu::simulate_episode(traj, config.arm, mounts, config.noise, env, bias,
                                       mix_seed(seed, 0xabcdef), config.rate);
    ep.meta.id = episode_id(index);
    ep.meta.seed = seed;
    ep.meta.square_row = row;
    ep.meta.square_col = col;
    return ep;
  }
  throw Error("could not plan a reach for episode " + std::to_string(index));
}

GeneratedData generate_protocol(const ProtocolConfig& config) {
  config.arm.validate();
  config.noise.validate();
  config.env.validate();
  if (config.train_per_square < 0 || config.test_per_square < 0) {
    throw InvalidArgument("episode counts per square must be non-negative");
  }
  if (config.remount_every < 1) throw InvalidArgument("remount_every must be at least 1");
  const int squares = config.active_squares();
  const int per_square = config.train_per_square + config.test_per_square;

  std::vector<Episode> all;
  all.reserve(static_cast<std::size_t>(squares * per_square));
  std::size_t index = 0;
  imu::BandMounts mounts = config.base_mounts;
  imu::SensorBias bias;
  for (int rep = 0; rep < per_square; ++rep) {
    for (int s = 0; s < squares; ++s, ++index) {
      const int block = static_cast<int>(index) / config.remount_every;
      if (index % static_cast<std::size_t>(config.remount_every) == 0) {
        const std::uint64_t block_seed = mix_seed(config.seed ^ 0x5151, static_cast<std::uint64_t>(block));
        mounts = imu::perturb_mounts(config.base_mounts, block_seed, config.perturbation);
        bias = imu::draw_bias(config.noise, mix_seed(block_seed, 1));
      }
      Episode ep = generate_episode(config, s / config.board.cols, s % config.board.cols, index,
                                    mounts, bias);
      ep.meta.mount_block = block;
      all.push_back(std::move(ep));
    }
  }

  GeneratedData out;
  std::tie(out.train, out.test) =
      split_episodes(std::move(all), config.test_per_square, mix_seed(config.seed, 0x5e11));
  out.manifest.rate = config.rate;
  out.manifest.horizon = config.horizon;
  out.manifest.arm = config.arm;
  out.manifest.board = config.board;
  out.manifest.seed = config.seed;
  for (const auto* split : {&out.train, &out.test}) {
    for (const auto& ep : *split) {
      out.manifest.episodes.push_back(
          {ep.meta.id, split == &out.train ? "train" : "test", ep.meta, ep.target});
    }
  }
  return out;
}

}  // namespace reach::data
