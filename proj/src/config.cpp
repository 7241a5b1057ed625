#include "reach/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>

#include "reach/errors.hpp"

namespace reach::config {
namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

nlohmann::json vec3(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

Eigen::Vector3d vec3(const nlohmann::json& j, const std::string& what) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw InvalidArgument(what + " needs 3 numbers");
  return {v[0], v[1], v[2]};
}

nlohmann::json mount_json(const imu::MountConfig& m) {
  return {{"roll_deg", m.roll / kDeg}, {"anchor", m.anchor}, {"anchor_shift", m.anchor_shift}};
}

imu::MountConfig json_mount(const nlohmann::json& j) {
  imu::MountConfig m;
  m.roll = j.at("roll_deg").get<double>() * kDeg;
  m.anchor = j.at("anchor").get<double>();
  m.anchor_shift = j.at("anchor_shift").get<double>();
  return m;
}

nlohmann::json protocol_json(const data::ProtocolConfig& p) {
  const auto& n = p.noise;
  return {
      {"squares", p.squares},
      {"train_per_square", p.train_per_square},
      {"test_per_square", p.test_per_square},
      {"rate", p.rate},
      {"horizon", p.horizon},
      {"internal_rate", p.internal_rate},
      {"reach_time_min", p.reach_time_min},
      {"reach_time_max", p.reach_time_max},
      {"torso_yaw_max_deg", p.torso_yaw_max / kDeg},
      {"remount_every", p.remount_every},
      {"arm", {{"upper_length", p.arm.upper_length}, {"fore_length", p.arm.fore_length}}},
      {"board",
       {{"rows", p.board.rows}, {"cols", p.board.cols}, {"square", p.board.square}, {"center", vec3(p.board.center)}}},
      {"noise",
       {{"accel_sigma", n.accel_sigma},
        {"gyro_sigma", n.gyro_sigma},
        {"mag_sigma", n.mag_sigma},
        {"accel_bias_sigma", n.accel_bias_sigma},
        {"gyro_bias_sigma", n.gyro_bias_sigma},
        {"mag_bias_sigma", n.mag_bias_sigma}}},
      {"perturbation", {{"roll_deg", p.perturbation.roll / kDeg}, {"anchor_shift", p.perturbation.anchor_shift}}},
      {"mounts", {{"wrist", mount_json(p.base_mounts.wrist)}, {"upper", mount_json(p.base_mounts.upper)}}},
      {"env", {{"gravity", vec3(p.env.gravity)}, {"magnetic", vec3(p.env.magnetic)}}},
  };
}

data::ProtocolConfig json_protocol(const nlohmann::json& j) {
  data::ProtocolConfig p;
  p.squares = j.at("squares").get<int>();
  p.train_per_square = j.at("train_per_square").get<int>();
  p.test_per_square = j.at("test_per_square").get<int>();
  p.rate = j.at("rate").get<double>();
  p.horizon = j.at("horizon").get<double>();
  p.internal_rate = j.at("internal_rate").get<double>();
  p.reach_time_min = j.at("reach_time_min").get<double>();
  p.reach_time_max = j.at("reach_time_max").get<double>();
  p.torso_yaw_max = j.at("torso_yaw_max_deg").get<double>() * kDeg;
  p.remount_every = j.at("remount_every").get<int>();
  const auto& arm = j.at("arm");
  p.arm.upper_length = arm.at("upper_length").get<double>();
  p.arm.fore_length = arm.at("fore_length").get<double>();
  const auto& board = j.at("board");
  p.board.rows = board.at("rows").get<int>();
  p.board.cols = board.at("cols").get<int>();
  p.board.square = board.at("square").get<double>();
  p.board.center = vec3(board.at("center"), "board.center");
  const auto& n = j.at("noise");
  p.noise.accel_sigma = n.at("accel_sigma").get<double>();
  p.noise.gyro_sigma = n.at("gyro_sigma").get<double>();
  p.noise.mag_sigma = n.at("mag_sigma").get<double>();
  p.noise.accel_bias_sigma = n.at("accel_bias_sigma").get<double>();
  p.noise.gyro_bias_sigma = n.at("gyro_bias_sigma").get<double>();
  p.noise.mag_bias_sigma = n.at("mag_bias_sigma").get<double>();
  p.perturbation.roll = j.at("perturbation").at("roll_deg").get<double>() * kDeg;
  p.perturbation.anchor_shift = j.at("perturbation").at("anchor_shift").get<double>();
  p.base_mounts.wrist = json_mount(j.at("mounts").at("wrist"));
  p.base_mounts.upper = json_mount(j.at("mounts").at("upper"));
  p.env.gravity = vec3(j.at("env").at("gravity"), "env.gravity");
  p.env.magnetic = vec3(j.at("env").at("magnetic"), "env.magnetic");
  return p;
}

nlohmann::json train_json(const train::TrainConfig& t) {
  nlohmann::json j = t.to_json();
  j.erase("seed");  // follows the master seed
  return j;
}

nlohmann::json curriculum_json(const std::optional<train::CurriculumConfig>& c, const train::CurriculumConfig& fallback) {
  nlohmann::json j = c.value_or(fallback).to_json();
  j["enabled"] = c.has_value();
  return j;
}

std::optional<train::CurriculumConfig> json_curriculum(const nlohmann::json& j) {
  if (!j.at("enabled").get<bool>()) return std::nullopt;
  return train::CurriculumConfig::from_json(j);
}

void check_mask(const std::string& name) { data::feature_mask(name); }

}  // namespace

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  protocol.seed = s;
  experiment.gamma_train.seed = mix_seed(s, 1);
  experiment.target_train.seed = mix_seed(s, 2);
}

void RunConfig::validate() const {
  check_mask(mask);
  protocol.arm.validate();
  protocol.noise.validate();
  protocol.env.validate();
  if (protocol.train_per_square < 0 || protocol.test_per_square < 0) {
    throw InvalidArgument("episode counts per square must be non-negative");
  }
  experiment.gamma_train.validate();
  experiment.target_train.validate();
  if (experiment.gamma_curriculum) experiment.gamma_curriculum->validate();
  if (experiment.target_curriculum) experiment.target_curriculum->validate();
  experiment.target.validate();
  if (!(experiment.validation_fraction >= 0.0 && experiment.validation_fraction < 1.0)) {
    throw InvalidArgument("validation_fraction must lie in [0, 1)");
  }
  rendezvous.validate();
}

RunConfig default_config() {
  RunConfig c;
  auto& e = c.experiment;
  e.gamma = models::GammaConfig{};
  e.gamma_train.epochs = 12;
  e.gamma_train.batch_size = 128;
  e.gamma_train.learning_rate = 1e-3;
  e.gamma_train.eval_items = 8192;
  e.gamma_curriculum = train::CurriculumConfig{};
  e.target = models::LstmPosConfig{};
  e.target_train.epochs = 20;
  e.target_train.batch_size = 64;
  e.target_train.learning_rate = 2e-3;
  e.target_train.items_per_epoch = 6144;
  e.target_train.eval_items = 2048;
  e.target_train.patience = 6;
  e.target_curriculum = std::nullopt;
  e.validation_fraction = 0.1;
  c.apply_seed(1);
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  const auto& e = c.experiment;
  nlohmann::json gamma = e.gamma.to_json();
  gamma["train"] = train_json(e.gamma_train);
  gamma["curriculum"] = curriculum_json(e.gamma_curriculum, train::CurriculumConfig{});
  nlohmann::json target = e.target.to_json();
  target["train"] = train_json(e.target_train);
  target["curriculum"] = curriculum_json(e.target_curriculum, train::CurriculumConfig{});
  return {
      {"seed", c.seed},
      {"mask", c.mask},
      {"paths", {{"data", c.data_dir.string()}, {"out", c.out_dir.string()}}},
      {"data", protocol_json(c.protocol)},
      {"gamma", gamma},
      {"target", target},
      {"validation_fraction", e.validation_fraction},
      {"rendezvous", c.rendezvous.to_json()},
  };
}

nlohmann::json merge_strict(const nlohmann::json& base, const nlohmann::json& overrides) {
  std::function<void(nlohmann::json&, const nlohmann::json&, const std::string&)> merge =
      [&](nlohmann::json& into, const nlohmann::json& from, const std::string& prefix) {
        if (!from.is_object()) throw InvalidArgument("config section '" + prefix + "' must be an object");
        for (auto it = from.begin(); it != from.end(); ++it) {
          const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
          if (!into.contains(it.key())) throw InvalidArgument("unknown config key '" + path + "'");
          nlohmann::json& slot = into[it.key()];
          if (slot.is_object()) merge(slot, it.value(), path);
          else slot = it.value();
        }
      };
  nlohmann::json out = base;
  merge(out, overrides, "");
  return out;
}

RunConfig from_json(const nlohmann::json& doc) {
  const nlohmann::json j = merge_strict(to_json(default_config()), doc);
  RunConfig c;
  try {
    c.mask = j.at("mask").get<std::string>();
    c.data_dir = j.at("paths").at("data").get<std::string>();
    c.out_dir = j.at("paths").at("out").get<std::string>();
    c.protocol = json_protocol(j.at("data"));
    auto& e = c.experiment;
    const auto& gamma = j.at("gamma");
    e.gamma = models::GammaConfig::from_json(gamma);
    e.gamma_train = train::TrainConfig::from_json(gamma.at("train"));
    e.gamma_curriculum = json_curriculum(gamma.at("curriculum"));
    const auto& target = j.at("target");
    e.target = models::LstmPosConfig::from_json(target);
    e.target_train = train::TrainConfig::from_json(target.at("train"));
    e.target_curriculum = json_curriculum(target.at("curriculum"));
    e.validation_fraction = j.at("validation_fraction").get<double>();
    c.rendezvous = stream::RendezvousConfig::from_json(j.at("rendezvous"));
    c.apply_seed(j.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& ex) {
    throw InvalidArgument(std::string("bad config value: ") + ex.what());
  }
  c.validate();
  return c;
}

RunConfig load(const std::filesystem::path& path) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read config " + path.string());
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& ex) {
      throw InvalidArgument("config " + path.string() + " is not valid JSON: " + ex.what());
    }
  }
  RunConfig c = from_json(doc);
  if (const char* env = std::getenv("REACH_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long s = std::strtoull(env, &end, 10);
    if (*end != '\0') throw InvalidArgument(std::string("REACH_SEED is not an integer: ") + env);
    c.apply_seed(s);
  }
  return c;
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace reach::config
