#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "reach/errors.hpp"
#include "reach/protocol.hpp"
#include "reach/training.hpp"

using namespace reach;
using namespace reach::train;

namespace {

const data::GeneratedData& small_data() {
  static const data::GeneratedData d = [] {
    data::ProtocolConfig c;
    c.squares = 4;
    c.train_per_square = 3;
    c.test_per_square = 1;
    c.seed = 11;
    return data::generate_protocol(c);
  }();
  return d;
}

// Items laid out as `episodes` episodes of `length` samples; the stage loss
// follows a script so stage transitions can be steered exactly.
class ScriptedLearner : public Learner {
 public:
  ScriptedLearner(std::size_t episodes, std::size_t length) : episodes_(episodes), length_(length) {}

  std::size_t size() const override { return episodes_ * length_; }
  int segment(std::size_t item, int segments) const override {
    return static_cast<int>((item % length_) * static_cast<std::size_t>(segments) / length_);
  }
  nn::ParamList parameters() override { return {&w_}; }
  double accumulate(const std::vector<std::size_t>& items, std::uint64_t) override {
    if (epoch_items.empty()) begin_epoch();
    epoch_items.back().insert(items.begin(), items.end());
    w_.grad.setConstant(1.0);
    return 1.0;
  }
  double rmse_mm(const std::vector<std::size_t>&) const override {
    const std::size_t k = calls_++;
    return k < script.size() ? script[k] : fallback;
  }
  bool has_validation() const override { return !val_script.empty(); }
  double validation_mm() const override {
    const std::size_t k = val_calls_++;
    return val_script[std::min(k, val_script.size() - 1)];
  }

  void begin_epoch() { epoch_items.emplace_back(); }

  std::vector<double> script;
  double fallback = 1.0;
  std::vector<double> val_script;
  std::vector<std::set<std::size_t>> epoch_items;

 private:
  std::size_t episodes_, length_;
  nn::Parameter w_{"w", nn::Mat::Zero(1, 1)};
  mutable std::size_t calls_ = 0;
  mutable std::size_t val_calls_ = 0;
};

// Opens a fresh item set for every epoch by watching the stage-loss calls.
class RecordingLearner : public ScriptedLearner {
 public:
  using ScriptedLearner::ScriptedLearner;
  double accumulate(const std::vector<std::size_t>& items, std::uint64_t seed) override {
    if (fresh_) {
      begin_epoch();
      fresh_ = false;
    }
    return ScriptedLearner::accumulate(items, seed);
  }
  double rmse_mm(const std::vector<std::size_t>& items) const override {
    fresh_ = true;
    return ScriptedLearner::rmse_mm(items);
  }

 private:
  mutable bool fresh_ = true;
};

TrainConfig quick(int epochs, std::uint64_t seed = 3) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 32;
  c.seed = seed;
  return c;
}

models::GammaNet small_gamma(const data::FeatureMask& mask, std::uint64_t seed = 5) {
  return models::GammaNet(mask, models::GammaConfig{{16, 16}}, seed);
}

}  // namespace

TEST_CASE("zero epochs leave the model untouched") {
  const auto mask = data::feature_mask("all");
  models::GammaNet net = small_gamma(mask);
  const auto before = models::weights_checksum(net.layers());
  const auto ds = data::build_position_dataset(small_data().train, mask);
  GammaLearner learner(net, ds);
  const History h = train_standard(learner, quick(0));
  CHECK(h.epochs.empty());
  CHECK(models::weights_checksum(net.layers()) == before);
}

TEST_CASE("a single sample is memorized") {
  // GammaLearner refits its scaling on the one sample, which makes the label
  // exactly zero; bind the net to a fixed normalized pair instead.
  class One : public Learner {
   public:
    explicit One(models::GammaNet& net) : net_(net) {
      z_ = Eigen::VectorXd::LinSpaced(18, -1.0, 1.0);
      y_ = Eigen::Vector3d(0.5, -0.3, 0.8);
    }
    std::size_t size() const override { return 1; }
    int segment(std::size_t, int) const override { return 0; }
    nn::ParamList parameters() override { return net_.parameters(); }
    double accumulate(const std::vector<std::size_t>&, std::uint64_t) override {
      nn::zero_grads(net_.parameters());
      models::GammaNet::Cache cache;
      const nn::LossResult l = nn::rmse_loss(net_.forward(z_, &cache), y_);
      net_.backward(l.grad, cache);
      return l.loss;
    }
    double rmse_mm(const std::vector<std::size_t>&) const override {
      return 1000.0 * nn::rmse_loss(net_.forward(z_), y_).loss;
    }
    bool has_validation() const override { return false; }
    double validation_mm() const override { return 0.0; }

   private:
    models::GammaNet& net_;
    nn::Mat z_, y_;
  };
  models::GammaNet net = small_gamma(data::feature_mask("all"));
  One learner(net);
  const double initial = learner.rmse_mm({0});
  TrainConfig c = quick(4000);
  c.learning_rate = 2e-4;
  const History h = train_standard(learner, c);
  INFO("initial " << initial << " final " << h.epochs.back().stage_mm);
  CHECK(h.epochs.back().stage_mm < 1e-3 * initial);
}

TEST_CASE("training is deterministic in the seed") {
  const auto mask = data::feature_mask("accelerometers");
  const auto ds = data::build_position_dataset(small_data().train, mask);
  auto run = [&](std::uint64_t seed) {
    models::GammaNet net = small_gamma(mask);
    GammaLearner learner(net, ds);
    const History h = train_standard(learner, quick(3, seed));
    return std::make_pair(h, models::weights_checksum(net.layers()));
  };
  const auto a = run(7), b = run(7), c = run(8);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK_FALSE(a.first == c.first);
}

TEST_CASE("a one-segment curriculum is standard training") {
  const auto mask = data::feature_mask("all");
  const auto ds = data::build_position_dataset(small_data().train, mask);
  models::GammaNet a = small_gamma(mask), b = small_gamma(mask);
  GammaLearner la(a, ds), lb(b, ds);
  CurriculumConfig cc;
  cc.segments = 1;
  cc.threshold_mm = std::numeric_limits<double>::infinity();
  const History hs = train_standard(la, quick(4));
  const History hc = train_curriculum(lb, cc, quick(4));
  CHECK(hs == hc);
  CHECK(models::weights_checksum(a.layers()) == models::weights_checksum(b.layers()));
}

TEST_CASE("an unbounded threshold visits every stage in order") {
  ScriptedLearner learner(3, 20);
  CurriculumConfig cc;
  cc.segments = 5;
  cc.threshold_mm = std::numeric_limits<double>::infinity();
  const History h = train_curriculum(learner, cc, quick(8));
  REQUIRE(h.epochs.size() == 8);
  for (int e = 0; e < 8; ++e) CHECK(h.epochs[static_cast<std::size_t>(e)].stage == std::min(e + 1, 5));
  CHECK(h.final_stage == 5);
  CHECK(h.epochs[0].items == 12);
  CHECK(h.epochs[4].items == 60);
}

TEST_CASE("an impossible threshold disqualifies the first stage") {
  const auto mask = data::feature_mask("all");
  const auto ds = data::build_position_dataset(small_data().train, mask);
  models::GammaNet net = small_gamma(mask);
  GammaLearner learner(net, ds);
  CurriculumConfig cc;
  cc.segments = 4;
  cc.threshold_mm = 0.0;
  cc.max_stage_epochs = 2;
  try {
    train_curriculum(learner, cc, quick(10));
    FAIL("expected disqualification");
  } catch (const Disqualified& d) {
    CHECK(d.stage() == 1);
    CHECK(d.loss_mm() > 0.0);
  }
}

TEST_CASE("a stage waits for the threshold and is disqualified at its budget") {
  ScriptedLearner learner(2, 10);
  learner.script = {90, 70, 50, 80, 80, 80};
  CurriculumConfig cc;
  cc.segments = 3;
  cc.threshold_mm = 58;
  cc.max_stage_epochs = 3;
  try {
    train_curriculum(learner, cc, quick(20));
    FAIL("expected disqualification");
  } catch (const Disqualified& d) {
    CHECK(d.stage() == 2);
    CHECK(d.loss_mm() == 80);
  }
}

TEST_CASE("curriculum stages are nested and earliest-first") {
  RecordingLearner learner(4, 30);
  CurriculumConfig cc;
  cc.segments = 3;
  cc.threshold_mm = std::numeric_limits<double>::infinity();
  const History h = train_curriculum(learner, cc, quick(3));
  REQUIRE(learner.epoch_items.size() == 3);
  for (std::size_t k = 1; k < 3; ++k) {
    const auto& prev = learner.epoch_items[k - 1];
    const auto& cur = learner.epoch_items[k];
    CHECK(cur.size() > prev.size());
    CHECK(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
  }
  for (std::size_t item : learner.epoch_items[0]) CHECK(item % 30 < 10);
  CHECK(learner.epoch_items[2].size() == 120);
}

TEST_CASE("best validation weights are kept and patience stops training") {
  ScriptedLearner learner(1, 8);
  learner.val_script = {5, 3, 4, 6, 7, 8};
  TrainConfig c = quick(10);
  c.patience = 3;
  const History h = train_standard(learner, c);
  CHECK(h.best_epoch == 1);
  CHECK(h.stopped_early);
  CHECK(h.epochs.size() == 5);
}

TEST_CASE("stage loss is a denormalized RMSE in millimeters") {
  const auto mask = data::feature_mask("all");
  data::PositionDataset two;
  two.mask = mask;
  two.states = Eigen::MatrixXd::Zero(18, 2);
  two.states(0, 1) = 1.0;
  two.positions.resize(3, 2);
  two.positions << 0.10, 0.20, 0.30, 0.34, -0.05, -0.11;
  two.episode = {0, 0};
  two.sample = {0, 1};
  two.episode_length = {2};
  models::GammaNet net = small_gamma(mask);
  auto& layers = net.layers();
  layers[layers.size() - 2].value.setZero();
  layers.back().value.setZero();
  GammaLearner learner(net, two);
  // The zero output layer predicts the box center: (0.15, 0.32, -0.08).
  const double dx = 0.05, dy = 0.02, dz = 0.03;
  const double expected = 1000.0 * std::sqrt((2 * dx * dx + 2 * dy * dy + 2 * dz * dz) / 6.0);
  CHECK(learner.rmse_mm({0, 1}) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("config json round trips and rejects bad values") {
  TrainConfig t;
  t.epochs = 7;
  t.items_per_epoch = 100;
  CHECK(TrainConfig::from_json(t.to_json()).to_json() == t.to_json());
  CHECK_THROWS_AS(TrainConfig::from_json({{"batch_size", 0}}), InvalidArgument);
  CurriculumConfig c;
  c.threshold_mm = std::numeric_limits<double>::infinity();
  CHECK(std::isinf(CurriculumConfig::from_json(c.to_json()).threshold_mm));
  CHECK_THROWS_AS(CurriculumConfig::from_json({{"segments", 0}}), InvalidArgument);
}

TEST_CASE("validation split holds out whole episodes") {
  const auto& eps = small_data().train;
  const auto [fit, val] = split_validation(eps, 0.25, 9);
  CHECK(fit.size() + val.size() == eps.size());
  CHECK(val.size() == 3);
  std::set<std::string> ids;
  for (const auto& e : fit) ids.insert(e.meta.id);
  for (const auto& e : val) CHECK(ids.count(e.meta.id) == 0);
  const auto again = split_validation(eps, 0.25, 9);
  CHECK(again.second.front().meta.id == val.front().meta.id);
}

// ---------------------------------------------------------------------------
// Evaluation

TEST_CASE("an oracle scores zero everywhere") {
  const auto& test = small_data().test;
  const data::BoardLayout board;
  const EvalReport pos = evaluate_position(
      [](const Episode& ep, std::size_t k) { return Eigen::Vector3d(ep.positions.col(static_cast<Eigen::Index>(k))); },
      test, board);
  CHECK(pos.mean_mm == 0.0);
  CHECK(pos.std_mm == 0.0);
  CHECK(pos.cell_mean_mm.size() == 42);
  const EvalReport tgt = evaluate_target([](const Episode& ep, std::size_t) { return ep.target; }, test, 60, board);
  CHECK(tgt.mean_mm == 0.0);
  CHECK(tgt.samples == test.size() * (test.front().size() - 59));
  CHECK(tgt.curve_t.front() == doctest::Approx(59.0 / 60.0));
  CHECK(tgt.aggregation == kAggregation);
}

TEST_CASE("constant predictors match closed forms") {
  const auto& test = small_data().test;
  const data::BoardLayout board;
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& ep : test) centroid += ep.target;
  centroid /= static_cast<double>(test.size());
  const EvalReport r = evaluate_target([&](const Episode&, std::size_t) { return centroid; }, test, 30, board);
  CHECK(r.mean_mm == doctest::Approx(mean_distance_to_centroid_mm(test)).epsilon(1e-12));

  const Eigen::Vector3d center = board.center;
  double expected = 0.0;
  for (const auto& ep : test) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < ep.positions.cols(); ++k) s += (ep.positions.col(k) - center).norm();
    expected += 1000.0 * s / static_cast<double>(ep.positions.cols());
  }
  expected /= static_cast<double>(test.size());
  const EvalReport p = evaluate_position([&](const Episode&, std::size_t) { return center; }, test, board);
  CHECK(p.mean_mm == doctest::Approx(expected).epsilon(1e-12));
  CHECK(p.std_mm > 0.0);
}

TEST_CASE("report aggregation: per-episode means, grid cells and time curve") {
  data::BoardLayout board;
  std::vector<EpisodeErrors> eps = {
      {0, 0, {0, 1}, {0.0, 0.5}, {1.0, 3.0}},
      {0, 0, {0, 1, 2}, {0.0, 0.5, 1.0}, {2.0, 2.0, 5.0}},
      {5, 6, {1}, {0.5}, {10.0}},
  };
  const EvalReport r = build_report(eps, board);
  // Episode means 2, 3, 10.
  CHECK(r.mean_mm == doctest::Approx(5.0));
  CHECK(r.std_mm == doctest::Approx(std::sqrt((9.0 + 4.0 + 25.0) / 3.0)));
  CHECK(r.cell_mean_mm[0] == doctest::Approx(2.5));
  CHECK(r.cell_episodes[0] == 2);
  CHECK(r.cell_mean_mm[41] == doctest::Approx(10.0));
  CHECK(std::isnan(r.cell_mean_mm[1]));
  REQUIRE(r.curve_t.size() == 3);
  CHECK(r.curve_mean_mm[1] == doctest::Approx(5.0));
  CHECK(r.curve_std_mm[1] == doctest::Approx(std::sqrt(((3 - 5.0) * (3 - 5.0) + 9 + 25) / 3.0)));
  CHECK(r.curve_count[2] == 1);
  CHECK_THROWS_AS(build_report({}, board), InvalidArgument);
}

TEST_CASE("report mean does not depend on episode order") {
  std::vector<Episode> test = small_data().test;
  const data::BoardLayout board;
  auto pred = [](const Episode& ep, std::size_t k) {
    return Eigen::Vector3d(ep.positions.col(static_cast<Eigen::Index>(k)) + Eigen::Vector3d(0.01 * (k % 7), 0.0, 0.02));
  };
  const EvalReport a = evaluate_position(pred, test, board);
  std::reverse(test.begin(), test.end());
  const EvalReport b = evaluate_position(pred, test, board);
  CHECK(a.mean_mm == doctest::Approx(b.mean_mm).epsilon(1e-12));
  CHECK(a.std_mm == doctest::Approx(b.std_mm).epsilon(1e-12));
  for (std::size_t c = 0; c < a.cell_mean_mm.size(); ++c) {
    if (std::isnan(a.cell_mean_mm[c])) CHECK(std::isnan(b.cell_mean_mm[c]));
    else CHECK(a.cell_mean_mm[c] == doctest::Approx(b.cell_mean_mm[c]).epsilon(1e-12));
  }
}

TEST_CASE("target evaluation rejects short episodes") {
  std::vector<Episode> test = {small_data().test.front()};
  CHECK_THROWS_AS(evaluate_target([](const Episode& ep, std::size_t) { return ep.target; }, test, 500, {}),
                  EpisodeTooShort);
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.gamma = models::GammaConfig{{16}};
  c.gamma_train = quick(2);
  c.target.rows = 2;
  c.target.hidden = 4;
  c.target.window = 10;
  c.target_train = quick(1);
  c.target_train.items_per_epoch = 256;
  c.validation_fraction = 0.2;
  return c;
}

}  // namespace

TEST_CASE("ablation: one mask and one mode give one row, reruns are identical") {
  const auto& d = small_data();
  const data::BoardLayout board;
  const ExperimentConfig cfg = tiny_experiment();
  std::size_t streamed = 0;
  const auto rows = run_ablation({"wrist_only"}, {models::InputMode::PosOnly}, d.train, d.test, board, cfg,
                                 [&](const AblationRow&) { ++streamed; });
  REQUIRE(rows.size() == 1);
  CHECK(streamed == 1);
  CHECK(rows[0].status == "ok");
  CHECK(rows[0].mode == "pos-only");
  CHECK(std::isfinite(rows[0].mean_mm));
  CHECK(std::isfinite(rows[0].gamma_mean_mm));
  const auto again = run_ablation({"wrist_only"}, {models::InputMode::PosOnly}, d.train, d.test, board, cfg);
  CHECK(again[0].mean_mm == rows[0].mean_mm);
  CHECK(again[0].gamma_mean_mm == rows[0].gamma_mean_mm);

  const auto path = std::filesystem::temp_directory_path() / "reach_ablation_test.csv";
  write_ablation_csv(rows, path);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  CHECK(header == "mask,mode,mean_mm,std_mm,gamma_mean_mm,gamma_std_mm,status");
  CHECK(line.rfind("wrist_only,pos-only,", 0) == 0);
  std::filesystem::remove(path);
}

TEST_CASE("ablation: a failing cell does not stop the others") {
  const auto& d = small_data();
  ExperimentConfig cfg = tiny_experiment();
  cfg.gamma_curriculum = CurriculumConfig{4, 0.0, 1};
  const auto rows = run_ablation({"gyroscopes"}, {models::InputMode::PosOnly, models::InputMode::RawOnly}, d.train,
                                 d.test, {}, cfg);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].status.find("gamma failed") == 0);
  CHECK(std::isnan(rows[0].mean_mm));
  CHECK(rows[1].status == "ok");
  CHECK(std::isfinite(rows[1].mean_mm));
}

TEST_CASE("h sweep: a single window gives a single point") {
  const auto& d = small_data();
  const ExperimentConfig cfg = tiny_experiment();
  const auto mask = data::feature_mask("all");
  const auto pts = run_h_sweep({8}, nullptr, mask, d.train, d.test, {}, [&] {
    ExperimentConfig c = cfg;
    c.target.mode = models::InputMode::RawOnly;
    return c;
  }());
  REQUIRE(pts.size() == 1);
  CHECK(pts[0].window == 8);
  CHECK(pts[0].status == "ok");
  CHECK(pts[0].report.samples == d.test.size() * (d.test.front().size() - 7));
}

TEST_CASE("target training leaves the position network untouched") {
  const auto& d = small_data();
  const ExperimentConfig cfg = tiny_experiment();
  const auto mask = data::feature_mask("all");
  const GammaRun g = train_gamma(d.train, {}, mask, cfg.gamma, cfg.gamma_train, std::nullopt);
  const auto before = models::weights_checksum(g.net.layers());
  for (auto mode : {models::InputMode::PosOnly, models::InputMode::Concat}) {
    models::LstmPosConfig arch = cfg.target;
    arch.mode = mode;
    TrainConfig tc = cfg.target_train;
    tc.epochs = 2;
    const TargetRun t = train_target(d.train, {}, mask, &g.net, arch, tc, CurriculumConfig{3, 1e9, 2});
    CHECK(t.history.epochs.size() == 2);
  }
  CHECK(models::weights_checksum(g.net.layers()) == before);
}
