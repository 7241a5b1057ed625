#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "reach/dataset.hpp"
#include "reach/models.hpp"
#include "reach/nn_core.hpp"

namespace reach::train {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  int patience = 0;              // epochs without validation gain before stopping; 0 = off
  double grad_clip = 0.0;        // max global gradient norm; 0 = off
  std::size_t items_per_epoch = 0;  // random subset of the stage per epoch; 0 = all
  std::size_t eval_items = 0;       // fixed subset for the per-epoch stage loss; 0 = all

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Reverse curriculum: stage k trains on the first k of `segments` equal time slices.
struct CurriculumConfig {
  int segments = 10;              // N_cl
  double threshold_mm = 58.0;     // gamma_cl, compared with the denormalized stage RMSE
  int max_stage_epochs = 200;     // a stage that never gets below the threshold is disqualified

  void validate() const;
  nlohmann::json to_json() const;
  static CurriculumConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  int epoch = 0;
  int stage = 1;
  double train_loss = 0.0;  // mean normalized batch RMSE
  double stage_mm = 0.0;    // denormalized RMSE over the stage items
  double val_mm = std::numeric_limits<double>::quiet_NaN();
  std::size_t items = 0;    // items in the stage
};

struct History {
  std::vector<EpochRecord> epochs;
  int final_stage = 1;
  int best_epoch = -1;  // epoch whose weights were kept; -1 = last
  bool stopped_early = false;

  /// One "epoch=.. stage=.. loss=.. stage_mm=.. val_mm=.." line per epoch.
  std::string format_log() const;
  bool operator==(const History&) const;
};

/// What the training loops need from a model bound to its data.
class Learner {
 public:
  virtual ~Learner() = default;

  virtual std::size_t size() const = 0;
  /// Time slice (0-based) of `item` when each episode is cut into `segments` slices.
  virtual int segment(std::size_t item, int segments) const = 0;
  virtual nn::ParamList parameters() = 0;
  /// Zeroes and accumulates gradients for the batch; returns its normalized loss.
  virtual double accumulate(const std::vector<std::size_t>& items, std::uint64_t seed) = 0;
  /// Denormalized per-coordinate RMSE in millimeters over training items (inference mode).
  virtual double rmse_mm(const std::vector<std::size_t>& items) const = 0;
  virtual bool has_validation() const = 0;
  virtual double validation_mm() const = 0;
};

/// Shuffled mini-batch Adam over every item. Keeps the best-validation weights
/// when a validation set exists. Throws TrainingDiverged on a non-finite loss.
History train_standard(Learner& learner, const TrainConfig& config);

/// Reverse-curriculum training. The final stage runs until the epoch budget
/// is spent. Throws Disqualified when a stage exhausts max_stage_epochs
/// without its loss falling below the threshold.
History train_curriculum(Learner& learner, const CurriculumConfig& curriculum, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Learners

/// Binds Gamma to per-sample data. Fits the net's normalizer and label scaler on `train`.
class GammaLearner : public Learner {
 public:
  GammaLearner(models::GammaNet& net, const data::PositionDataset& train,
               const data::PositionDataset* validation = nullptr);

  std::size_t size() const override { return static_cast<std::size_t>(z_.cols()); }
  int segment(std::size_t item, int segments) const override;
  nn::ParamList parameters() override { return net_.parameters(); }
  double accumulate(const std::vector<std::size_t>& items, std::uint64_t seed) override;
  double rmse_mm(const std::vector<std::size_t>& items) const override;
  bool has_validation() const override { return val_z_.cols() > 0; }
  double validation_mm() const override;

 private:
  double rmse_mm(const Eigen::MatrixXd& z, const Eigen::MatrixXd& y) const;

  models::GammaNet& net_;
  Eigen::MatrixXd z_, y_;
  Eigen::MatrixXd val_z_, val_y_;
  std::vector<std::size_t> sample_, length_;
};

/// Binds LSTM-Pos to windows. Gamma (may be null for RawOnly) is only read.
/// Fits the net's step normalizer and label scaler on `train`.
class LstmPosLearner : public Learner {
 public:
  LstmPosLearner(models::LstmPosNet& net, const models::GammaNet* gamma,
                 const data::SequenceDataset& train, const data::SequenceDataset* validation = nullptr);

  std::size_t size() const override { return windows_.size(); }
  int segment(std::size_t item, int segments) const override;
  nn::ParamList parameters() override { return net_.parameters(); }
  double accumulate(const std::vector<std::size_t>& items, std::uint64_t seed) override;
  double rmse_mm(const std::vector<std::size_t>& items) const override;
  bool has_validation() const override { return !val_windows_.empty(); }
  double validation_mm() const override;

 private:
  struct Window {
    std::size_t episode;
    std::size_t end;
  };
  std::vector<nn::Mat> gather(const std::vector<Eigen::MatrixXd>& steps, const std::vector<Window>& windows,
                              const std::vector<std::size_t>& items) const;
  double rmse_mm(const std::vector<Eigen::MatrixXd>& steps, const std::vector<Eigen::Vector3d>& labels,
                 const std::vector<Window>& windows, const std::vector<std::size_t>& items) const;

  models::LstmPosNet& net_;
  std::vector<Eigen::MatrixXd> steps_;  // normalized x-bar per episode
  std::vector<Eigen::Vector3d> labels_;  // normalized target per episode
  std::vector<Window> windows_;
  std::vector<std::size_t> episode_windows_;  // windows per episode
  std::vector<Eigen::MatrixXd> val_steps_;
  std::vector<Eigen::Vector3d> val_labels_;
  std::vector<Window> val_windows_;
};

/// Per-step x-bar of every episode of a sequence dataset, in physical units.
/// Gamma runs column-batched here since only training consumes it.
std::vector<Eigen::MatrixXd> lstm_pos_steps(const data::SequenceDataset& data, models::InputMode mode,
                                            const models::GammaNet* gamma);

// ---------------------------------------------------------------------------
// End-to-end helpers

struct GammaRun {
  models::GammaNet net;
  History history;
};

GammaRun train_gamma(const std::vector<Episode>& train, const std::vector<Episode>& validation,
                     const data::FeatureMask& mask, const models::GammaConfig& arch,
                     const TrainConfig& config, const std::optional<CurriculumConfig>& curriculum);

struct TargetRun {
  models::LstmPosNet net;
  History history;
};

/// Trains LSTM-Pos on frozen `gamma` (ignored for RawOnly).
TargetRun train_target(const std::vector<Episode>& train, const std::vector<Episode>& validation,
                       const data::FeatureMask& mask, const models::GammaNet* gamma,
                       const models::LstmPosConfig& arch, const TrainConfig& config,
                       const std::optional<CurriculumConfig>& curriculum);

/// Holds out whole episodes for validation; deterministic in `seed`.
std::pair<std::vector<Episode>, std::vector<Episode>> split_validation(const std::vector<Episode>& episodes,
                                                                       double fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Evaluation

inline constexpr const char* kAggregation =
    "per-episode mean of per-sample Euclidean errors, then mean and population std across episodes";

struct EvalReport {
  double mean_mm = 0.0;
  double std_mm = 0.0;
  std::size_t episodes = 0;
  std::size_t samples = 0;
  std::vector<double> episode_mean_mm;

  int grid_rows = 0;
  int grid_cols = 0;
  std::vector<double> cell_mean_mm;  // row-major; NaN where no episode targets the square
  std::vector<std::size_t> cell_episodes;

  std::vector<double> curve_t;  // seconds
  std::vector<double> curve_mean_mm;
  std::vector<double> curve_std_mm;
  std::vector<std::size_t> curve_count;

  std::string aggregation = kAggregation;
};

/// Errors of one episode at its evaluated sample indices.
struct EpisodeErrors {
  int square_row = -1;
  int square_col = -1;
  std::vector<std::size_t> index;
  std::vector<double> t;
  std::vector<double> error_mm;
};

/// Aggregates per-episode errors. Throws InvalidArgument if nothing was evaluated.
EvalReport build_report(const std::vector<EpisodeErrors>& episodes, const data::BoardLayout& board);

using PositionPredictor = std::function<Eigen::Vector3d(const Episode&, std::size_t sample)>;
using TargetPredictor = std::function<Eigen::Vector3d(const Episode&, std::size_t window_end)>;

EvalReport evaluate_position(const PositionPredictor& predictor, const std::vector<Episode>& episodes,
                             const data::BoardLayout& board);
/// Every sample of every episode through Gamma.
EvalReport evaluate_position(const models::GammaNet& gamma, const std::vector<Episode>& episodes,
                             const data::BoardLayout& board);

/// Predictions at every window end t >= H-1 against the episode target.
EvalReport evaluate_target(const TargetPredictor& predictor, const std::vector<Episode>& episodes, int window,
                           const data::BoardLayout& board);
/// Windowed inference of `phi`; gamma must be trained on phi's mask unless phi is RawOnly.
EvalReport evaluate_target(const models::LstmPosNet& phi, const models::GammaNet* gamma,
                           const std::vector<Episode>& episodes, const data::BoardLayout& board);

/// Per-window target predictions of one episode, oldest window first. The
/// same single-window path as the streaming predictor.
std::vector<Eigen::Vector3d> predict_episode_targets(const models::LstmPosNet& phi, const models::GammaNet* gamma,
                                                     const Episode& episode);

/// Mean distance of the targets to their centroid, in millimeters.
double mean_distance_to_centroid_mm(const std::vector<Episode>& episodes);

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentConfig {
  models::GammaConfig gamma;
  TrainConfig gamma_train;
  std::optional<CurriculumConfig> gamma_curriculum;
  models::LstmPosConfig target;
  TrainConfig target_train;
  std::optional<CurriculumConfig> target_curriculum;
  double validation_fraction = 0.1;
};

struct AblationRow {
  std::string mask;
  std::string mode;  // input mode, or "position" when no modes were requested
  double mean_mm = std::numeric_limits<double>::quiet_NaN();
  double std_mm = std::numeric_limits<double>::quiet_NaN();
  // Gamma's own wrist accuracy for the mask; NaN when no mode needed Gamma.
  double gamma_mean_mm = std::numeric_limits<double>::quiet_NaN();
  double gamma_std_mm = std::numeric_limits<double>::quiet_NaN();
  std::string status = "ok";
  EvalReport report;
};

/// Trains Gamma per mask (when some mode needs it), then one target model per
/// mode on top of it: one row per (mask, mode). With no modes, one row per mask
/// reports Gamma alone. A failing cell is recorded in its status without
/// stopping the others.
std::vector<AblationRow> run_ablation(const std::vector<std::string>& masks,
                                      const std::vector<models::InputMode>& modes,
                                      const std::vector<Episode>& train, const std::vector<Episode>& test,
                                      const data::BoardLayout& board, const ExperimentConfig& config,
                                      const std::function<void(const AblationRow&)>& on_row = {});

struct SweepPoint {
  int window = 0;
  double mean_mm = std::numeric_limits<double>::quiet_NaN();
  double std_mm = std::numeric_limits<double>::quiet_NaN();
  std::string status = "ok";
  EvalReport report;
};

/// One target model per H on a shared, already trained Gamma.
std::vector<SweepPoint> run_h_sweep(const std::vector<int>& windows, const models::GammaNet* gamma,
                                    const data::FeatureMask& mask, const std::vector<Episode>& train,
                                    const std::vector<Episode>& test, const data::BoardLayout& board,
                                    const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// CSV outputs

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);
void write_h_sweep_csv(const std::vector<SweepPoint>& points, const std::filesystem::path& path);
void write_heatmap_csv(const EvalReport& report, const std::filesystem::path& path);
void write_error_vs_time_csv(const EvalReport& report, const std::filesystem::path& path);

}  // namespace reach::train
