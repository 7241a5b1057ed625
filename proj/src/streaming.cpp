#include "reach/streaming.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <thread>

#include "reach/errors.hpp"

namespace reach::stream {

StreamPredictor::StreamPredictor(const models::LstmPosNet& phi, const models::GammaNet* gamma)
    : phi_(&phi), gamma_(gamma), H_(phi.config().window) {
  if (models::needs_gamma(phi.config().mode)) {
    if (!gamma) throw InvalidArgument(models::to_string(phi.config().mode) + " input needs a trained Gamma");
    if (!(gamma->mask() == phi.mask())) throw InvalidArgument("Gamma and Phi were trained on different masks");
  } else {
    gamma_ = nullptr;
  }
  states_.resize(phi.mask().size(), H_);
  steps_.resize(phi.step_width(), H_);
}

void StreamPredictor::reset() { seen_ = 0; }

Eigen::MatrixXd StreamPredictor::ordered(const Eigen::MatrixXd& ring) const {
  const auto n = static_cast<Eigen::Index>(std::min<std::size_t>(seen_, static_cast<std::size_t>(H_)));
  Eigen::MatrixXd out(ring.rows(), n);
  // The oldest sample sits where the next one will be written.
  const auto head = static_cast<Eigen::Index>(seen_ % static_cast<std::size_t>(H_));
  const Eigen::Index first = seen_ >= static_cast<std::size_t>(H_) ? head : 0;
  for (Eigen::Index k = 0; k < n; ++k) out.col(k) = ring.col((first + k) % H_);
  return out;
}

Eigen::MatrixXd StreamPredictor::buffered_states() const { return ordered(states_); }

std::optional<Eigen::Vector3d> StreamPredictor::push_sample(const Eigen::VectorXd& x) {
  if (x.size() != states_.rows()) {
    throw ShapeMismatch("streamed state has width " + std::to_string(x.size()) + ", mask '" +
                        phi_->mask().name() + "' expects " + std::to_string(states_.rows()));
  }
  const auto slot = static_cast<Eigen::Index>(seen_ % static_cast<std::size_t>(H_));
  states_.col(slot) = x;
  steps_.col(slot) = models::build_lstm_pos_step(x, phi_->config().mode, gamma_);
  ++seen_;
  if (!ready()) return std::nullopt;
  return phi_->predict(ordered(steps_));
}

std::optional<Eigen::Vector3d> StreamPredictor::push_state(const Eigen::VectorXd& state) {
  if (state.size() != kStateDim) throw ShapeMismatch("full state must have 18 entries");
  return push_sample(phi_->mask().apply(state));
}

// ---------------------------------------------------------------------------

RobotState rendezvous_step(const RobotState& robot, const Eigen::Vector3d& goal, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("time step must be positive");
  RobotState next = robot;
  next.goal = goal;
  const Eigen::Vector3d d = goal - robot.position;
  const double dist = d.norm();
  const double reach = std::max(0.0, robot.v_max) * dt;
  if (dist <= reach) next.position = goal;
  else next.position = robot.position + d * (reach / dist);
  return next;
}

void RendezvousConfig::validate() const {
  if (!(threshold_mm >= 0.0)) throw InvalidArgument("threshold_mm must be non-negative");
  if (!(v_max >= 0.0)) throw InvalidArgument("v_max must be non-negative");
  if (!(grace_s >= 0.0)) throw InvalidArgument("grace_s must be non-negative");
}

nlohmann::json RendezvousConfig::to_json() const {
  return {{"threshold_mm", threshold_mm},
          {"v_max", v_max},
          {"robot_start", {robot_start.x(), robot_start.y(), robot_start.z()}},
          {"grace_s", grace_s},
          {"paced", paced}};
}

RendezvousConfig RendezvousConfig::from_json(const nlohmann::json& j) {
  RendezvousConfig c;
  c.threshold_mm = j.value("threshold_mm", c.threshold_mm);
  c.v_max = j.value("v_max", c.v_max);
  if (j.contains("robot_start")) {
    const auto v = j.at("robot_start").get<std::vector<double>>();
    if (v.size() != 3) throw InvalidArgument("robot_start needs 3 coordinates");
    c.robot_start = Eigen::Vector3d(v[0], v[1], v[2]);
  }
  c.grace_s = j.value("grace_s", c.grace_s);
  c.paced = j.value("paced", c.paced);
  c.validate();
  return c;
}

TrialPredictor model_predictor(const models::LstmPosNet& phi, const models::GammaNet* gamma) {
  auto stream = std::make_shared<StreamPredictor>(phi, gamma);
  return [stream](const Episode& ep, std::size_t k) {
    if (k == 0) stream->reset();
    return stream->push_state(ep.states.col(static_cast<Eigen::Index>(k)));
  };
}

TrialPredictor oracle_predictor(std::size_t from) {
  return [from](const Episode& ep, std::size_t k) -> std::optional<Eigen::Vector3d> {
    if (k < from) return std::nullopt;
    return ep.target;
  };
}

TrialResult run_rendezvous_trial(const Episode& episode, const TrialPredictor& predictor,
                                 const RendezvousConfig& config) {
  config.validate();
  if (episode.size() == 0) throw EmptyEpisode("episode " + episode.meta.id + " has no samples");
  TrialResult result;
  result.trial_id = episode.meta.id;
  const double dt = 1.0 / episode.rate;
  RobotState robot;
  robot.position = config.robot_start;
  robot.v_max = config.v_max;

  const auto start = std::chrono::steady_clock::now();
  for (std::size_t k = 0; k < episode.size(); ++k) {
    if (config.paced) {
      std::this_thread::sleep_until(start + std::chrono::duration<double>(static_cast<double>(k) * dt));
    }
    TrialStep step;
    step.t = episode.times[k];
    step.wrist = episode.positions.col(static_cast<Eigen::Index>(k));
    if (const auto p = predictor(episode, k)) {
      step.has_prediction = true;
      step.prediction = *p;
      if (std::isnan(result.first_prediction_t_s)) result.first_prediction_t_s = step.t;
      robot.goal = *p;
    }
    if (robot.goal) robot = rendezvous_step(robot, *robot.goal, dt);
    step.robot = robot.position;
    result.log.push_back(step);
  }

  const Eigen::Vector3d wrist = episode.positions.col(episode.positions.cols() - 1);
  const auto extra = static_cast<std::size_t>(std::llround(config.grace_s * episode.rate));
  for (std::size_t k = 0; k < extra && robot.goal; ++k) {
    robot = rendezvous_step(robot, *robot.goal, dt);
    TrialStep step;
    step.t = episode.times.back() + static_cast<double>(k + 1) * dt;
    step.robot = robot.position;
    step.wrist = wrist;
    result.log.push_back(step);
  }
  result.final_distance_mm = 1000.0 * (robot.position - wrist).norm();
  result.success = result.final_distance_mm <= config.threshold_mm;
  return result;
}

CampaignResult run_campaign(const std::vector<Episode>& episodes, const TrialPredictor& predictor,
                            const RendezvousConfig& config) {
  if (episodes.empty()) throw InvalidArgument("campaign needs at least one episode");
  CampaignResult out;
  std::size_t hits = 0;
  for (const auto& ep : episodes) {
    out.trials.push_back(run_rendezvous_trial(ep, predictor, config));
    hits += out.trials.back().success ? 1 : 0;
  }
  out.success_rate = static_cast<double>(hits) / static_cast<double>(episodes.size());
  return out;
}

void write_campaign_csv(const CampaignResult& result, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "trial_id,success,final_distance_mm,first_prediction_t_s\n";
  char buf[64];
  for (const auto& t : result.trials) {
    out << t.trial_id << ',' << (t.success ? 1 : 0) << ',';
    std::snprintf(buf, sizeof buf, "%.6f", t.final_distance_mm);
    out << buf << ',';
    if (std::isnan(t.first_prediction_t_s)) {
      out << "nan";
    } else {
      std::snprintf(buf, sizeof buf, "%.6f", t.first_prediction_t_s);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace reach::stream
