#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "reach/episode.hpp"

namespace reach::data {

/// Named subset of the 18 canonical state features.
class FeatureMask {
 public:
  FeatureMask() = default;
  /// Throws InvalidArgument unless indices are unique, ascending and below 18.
  FeatureMask(std::string name, std::vector<int> indices);

  const std::string& name() const { return name_; }
  const std::vector<int>& indices() const { return indices_; }
  int size() const { return static_cast<int>(indices_.size()); }
  bool empty() const { return indices_.empty(); }

  /// Selects the mask rows of a kStateDim x N state matrix.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& states) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& state) const;

  bool operator==(const FeatureMask&) const = default;

 private:
  std::string name_;
  std::vector<int> indices_;
};

/// The seven masks of the feature ablation: all, accelerometers, accel_mag,
/// gyroscopes, magnetometers, wrist_only, upper_arm_only.
const std::vector<std::string>& feature_mask_names();
/// Throws UnknownMask for any other name.
FeatureMask feature_mask(const std::string& name);

/// Per-sample pairs (masked state, wrist position).
struct PositionDataset {
  FeatureMask mask;
  Eigen::MatrixXd states;      // n x N
  Eigen::Matrix3Xd positions;  // 3 x N
  std::vector<std::size_t> episode;   // source episode of each column
  std::vector<std::size_t> sample;    // index within that episode
  std::vector<std::size_t> episode_length;

  std::size_t size() const { return static_cast<std::size_t>(states.cols()); }
};

PositionDataset build_position_dataset(const std::vector<Episode>& episodes, const FeatureMask& mask);

/// Window index into a SequenceDataset: H states ending at `end` of `episode`.
struct WindowRef {
  std::size_t episode = 0;
  std::size_t end = 0;
};

/// All length-H windows of every episode with the episode target as label.
///
/// States are kept per episode; windows reference them instead of copying.
struct SequenceDataset {
  FeatureMask mask;
  int window = 0;
  std::vector<Eigen::MatrixXd> states;  // per episode, n x N_e
  std::vector<Eigen::Vector3d> labels;  // per episode
  std::vector<WindowRef> windows;

  std::size_t size() const { return windows.size(); }
  /// Materializes window i as an n x H matrix, oldest state first.
  Eigen::MatrixXd window_states(std::size_t i) const;
  const Eigen::Vector3d& label(std::size_t i) const { return labels[windows[i].episode]; }
};

/// Throws EpisodeTooShort naming each episode with fewer than H samples.
SequenceDataset build_sequence_dataset(const std::vector<Episode>& episodes, int window,
                                       const FeatureMask& mask);

/// Per-feature z-score statistics.
struct NormStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;
  std::vector<int> clamped;  // features whose spread was below 1e-12

  Eigen::Index size() const { return mean.size(); }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd invert(const Eigen::MatrixXd& z) const;
};

/// Fits z-score statistics over the columns of a features x samples matrix.
NormStats fit_normalizer(const Eigen::MatrixXd& features);
NormStats fit_normalizer(const PositionDataset& train);
NormStats fit_normalizer(const SequenceDataset& train);

/// Maps wrist positions into [-1, 1] per axis over the workspace box.
struct LabelScaler {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extent = Eigen::Vector3d::Ones();

  Eigen::Matrix3Xd apply(const Eigen::Matrix3Xd& p) const;
  Eigen::Matrix3Xd invert(const Eigen::Matrix3Xd& z) const;
  Eigen::Vector3d invert(const Eigen::Vector3d& z) const;
};

LabelScaler fit_label_scaler(const Eigen::Matrix3Xd& positions);

// ---------------------------------------------------------------------------
// Persistence

void save_episode(const Episode& episode, const std::filesystem::path& path);
/// Reads the CSV written by save_episode. The target is the first sample of the
/// final hold (where the wrist stops moving).
Episode load_episode(const std::filesystem::path& path);

struct BoardLayout {
  int rows = 6;
  int cols = 7;
  double square = 0.06;  // meters
  Eigen::Vector3d center{0.0, 0.35, -0.10};

  int square_count() const { return rows * cols; }
  /// Center of square (row, col); rows run along z, cols along x, on the plane y = center.y.
  Eigen::Vector3d square_center(int row, int col) const;
};

struct ManifestEntry {
  std::string id;
  std::string split;  // "train" | "test"
  EpisodeMeta meta;
  Eigen::Vector3d target = Eigen::Vector3d::Zero();
};

struct Manifest {
  int version = 1;
  double rate = 60.0;
  double horizon = 2.0;
  kin::ArmModel arm;
  BoardLayout board;
  std::uint64_t seed = 0;
  nlohmann::json config;  // resolved generator configuration
  std::vector<ManifestEntry> episodes;
};

void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

/// Writes data/<split>/<id>.csv for every episode plus data/manifest.json.
void save_dataset(const std::filesystem::path& root, const Manifest& manifest,
                  const std::vector<Episode>& train, const std::vector<Episode>& test);

struct LoadedDataset {
  Manifest manifest;
  std::vector<Episode> train;
  std::vector<Episode> test;
};

/// Loads a directory written by save_dataset, restoring per-episode metadata.
LoadedDataset load_dataset(const std::filesystem::path& root);

/// Per-square stratified split; deterministic for a given seed.
///
/// Throws InsufficientEpisodes when any square has fewer than `test_per_square`
/// episodes. Episodes without a square go to train.
std::pair<std::vector<Episode>, std::vector<Episode>> split_episodes(std::vector<Episode> episodes,
                                                                     int test_per_square,
                                                                     std::uint64_t seed);

}  // namespace reach::data
