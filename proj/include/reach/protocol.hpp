#pragma once

#include <cstdint>
#include <vector>

#include "reach/arm_kinematics.hpp"
#include "reach/dataset.hpp"
#include "reach/imu_synth.hpp"
#include "reach/rng.hpp"

namespace reach::data {

/// Synthetic re-creation of the board reaching campaign.
struct ProtocolConfig {
  kin::ArmModel arm;
  BoardLayout board;
  int squares = -1;  // use the first N squares (row-major); -1 = whole board
  int train_per_square = 20;
  int test_per_square = 8;
  double rate = 60.0;
  double horizon = 2.0;
  double internal_rate = 240.0;
  double reach_time_min = 1.4;
  double reach_time_max = 1.85;
  double torso_yaw_max = 20.0 * 3.14159265358979323846 / 180.0;
  int remount_every = 10;  // episodes between band re-strappings
  imu::PerturbationRange perturbation;
  imu::BandMounts base_mounts;
  imu::NoiseConfig noise;
  imu::EnvConfig env;
  std::uint64_t seed = 1;

  int active_squares() const;
};

struct GeneratedData {
  Manifest manifest;
  std::vector<Episode> train;
  std::vector<Episode> test;
};

/// Initial arm pose near the body: either hanging by the hip or with the palm on the chest.
kin::JointPose sample_rest_pose(Rng& rng);

/// One episode reaching square (row, col); `index` selects the per-episode seed.
Episode generate_episode(const ProtocolConfig& config, int row, int col, std::size_t index,
                         const imu::BandMounts& mounts, const imu::SensorBias& bias);

/// Generates and splits every episode of the campaign. Deterministic in `config.seed`.
GeneratedData generate_protocol(const ProtocolConfig& config);

}  // namespace reach::data
