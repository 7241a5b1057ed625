#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "reach/episode.hpp"
#include "reach/models.hpp"

namespace reach::stream {

/// Online target prediction over a ring buffer of the last H samples.
///
/// Each pushed state is turned into its LSTM step input once (Gamma runs per
/// sample), so a prediction only costs one pass of Phi. Not thread-safe: one
/// stream owns the predictor at a time.
class StreamPredictor {
 public:
  /// Both models are borrowed and must outlive the predictor. Gamma may be
  /// null for RawOnly and must share Phi's mask otherwise.
  StreamPredictor(const models::LstmPosNet& phi, const models::GammaNet* gamma);

  /// `x` is the masked state. Returns nothing until H samples are buffered,
  /// then Phi's prediction on the latest window. Throws ShapeMismatch on a
  /// wrong width.
  std::optional<Eigen::Vector3d> push_sample(const Eigen::VectorXd& x);
  /// Applies Phi's mask to a full 18-wide state first.
  std::optional<Eigen::Vector3d> push_state(const Eigen::VectorXd& state);

  void reset();
  std::size_t samples_seen() const { return seen_; }
  int window() const { return H_; }
  bool ready() const { return seen_ >= static_cast<std::size_t>(H_); }
  /// Buffered masked states, oldest first (at most H columns).
  Eigen::MatrixXd buffered_states() const;

 private:
  Eigen::MatrixXd ordered(const Eigen::MatrixXd& ring) const;

  const models::LstmPosNet* phi_;
  const models::GammaNet* gamma_;
  int H_;
  Eigen::MatrixXd states_;  // n x H ring
  Eigen::MatrixXd steps_;   // d x H ring of step inputs
  std::size_t seen_ = 0;
};

// ---------------------------------------------------------------------------
// Robot rendezvous

struct RobotState {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double v_max = 1.0;  // m/s
  std::optional<Eigen::Vector3d> goal;
};

/// Moves straight toward `goal` by at most v_max * dt; the goal replaces the
/// previous one. Throws InvalidArgument unless dt > 0.
RobotState rendezvous_step(const RobotState& robot, const Eigen::Vector3d& goal, double dt);

struct RendezvousConfig {
  double threshold_mm = 60.0;
  double v_max = 1.0;
  Eigen::Vector3d robot_start{0.0, 0.75, 0.0};  // across the board from the person
  double grace_s = 0.0;  // extra robot motion after the episode ends, wrist held still
  bool paced = false;    // sleep to the sample rate instead of running on virtual time

  void validate() const;
  nlohmann::json to_json() const;
  static RendezvousConfig from_json(const nlohmann::json& j);
};

struct TrialStep {
  double t = 0.0;
  bool has_prediction = false;
  Eigen::Vector3d prediction = Eigen::Vector3d::Zero();
  Eigen::Vector3d robot = Eigen::Vector3d::Zero();
  Eigen::Vector3d wrist = Eigen::Vector3d::Zero();
};

struct TrialResult {
  std::string trial_id;
  bool success = false;
  double final_distance_mm = 0.0;
  double first_prediction_t_s = std::numeric_limits<double>::quiet_NaN();
  std::vector<TrialStep> log;
};

/// Called once per sample in order; sample 0 starts a new trial.
using TrialPredictor = std::function<std::optional<Eigen::Vector3d>(const Episode&, std::size_t sample)>;

/// Streams Phi over each trial, restarting the buffer at sample 0.
TrialPredictor model_predictor(const models::LstmPosNet& phi, const models::GammaNet* gamma);
/// Announces the true target from sample `from` on.
TrialPredictor oracle_predictor(std::size_t from = 0);

/// Replays the episode at its sample rate: every new prediction becomes the
/// robot's goal, and success is judged against the true wrist at the end.
TrialResult run_rendezvous_trial(const Episode& episode, const TrialPredictor& predictor,
                                 const RendezvousConfig& config);

struct CampaignResult {
  double success_rate = 0.0;
  std::vector<TrialResult> trials;  // in episode order
};

/// Throws InvalidArgument on an empty episode set.
CampaignResult run_campaign(const std::vector<Episode>& episodes, const TrialPredictor& predictor,
                            const RendezvousConfig& config);

/// trial_id,success,final_distance_mm,first_prediction_t_s
void write_campaign_csv(const CampaignResult& result, const std::filesystem::path& path);

}  // namespace reach::stream
