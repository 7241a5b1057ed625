#include "reach/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "reach/errors.hpp"
#include "reach/rng.hpp"

namespace reach::train {
namespace {

constexpr std::size_t kEvalChunk = 2048;

bool same_double(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

std::vector<std::size_t> stage_items(const std::vector<int>& segment, int stage) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < segment.size(); ++i) {
    if (segment[i] < stage) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> eval_subset(const std::vector<std::size_t>& items, std::size_t limit,
                                     std::uint64_t seed) {
  if (limit == 0 || items.size() <= limit) return items;
  std::vector<std::size_t> pick = items;
  Rng rng(seed);
  std::shuffle(pick.begin(), pick.end(), rng);
  pick.resize(limit);
  std::sort(pick.begin(), pick.end());
  return pick;
}

History run_training(Learner& learner, const TrainConfig& tc, const CurriculumConfig* cc) {
  tc.validate();
  if (cc) cc->validate();
  History history;
  if (tc.epochs == 0) return history;
  if (learner.size() == 0) throw InvalidArgument("no training items");

  const int segments = cc ? cc->segments : 1;
  std::vector<int> segment(learner.size(), 0);
  if (segments > 1) {
    for (std::size_t i = 0; i < segment.size(); ++i) segment[i] = learner.segment(i, segments);
  }

  nn::ParamList params = learner.parameters();
  nn::AdamConfig adam_config;
  adam_config.learning_rate = tc.learning_rate;
  nn::AdamState adam = nn::make_adam_state(params, adam_config);

  int stage = 1;
  std::vector<std::size_t> items = stage_items(segment, stage);
  std::vector<std::size_t> eval = eval_subset(items, tc.eval_items, mix_seed(tc.seed, 0xe0a1 + stage));
  int in_stage = 0;
  bool reached = false;

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<nn::Mat> best;
  int since_best = 0;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    if (items.empty()) throw InvalidArgument("curriculum stage " + std::to_string(stage) + " has no items");
    Rng rng(mix_seed(tc.seed, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order = items;
    std::shuffle(order.begin(), order.end(), rng);
    if (tc.items_per_epoch > 0 && order.size() > tc.items_per_epoch) order.resize(tc.items_per_epoch);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    const auto bs = static_cast<std::size_t>(tc.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
      const double loss = learner.accumulate(batch, rng());
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batches) + " (stage " + std::to_string(stage) + ")");
      }
      if (tc.grad_clip > 0.0) nn::clip_grad_norm(params, tc.grad_clip);
      nn::adam_step(params, adam);
      loss_sum += loss;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = stage;
    rec.items = items.size();
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.stage_mm = learner.rmse_mm(eval);
    if (!std::isfinite(rec.stage_mm)) {
      throw TrainingDiverged("non-finite stage loss after epoch " + std::to_string(epoch));
    }
    if (learner.has_validation()) rec.val_mm = learner.validation_mm();
    history.epochs.push_back(rec);
    ++in_stage;

    if (cc) {
      if (rec.stage_mm < cc->threshold_mm) reached = true;
      if (!reached && in_stage >= cc->max_stage_epochs) throw Disqualified(stage, rec.stage_mm);
      if (reached && stage < segments) {
        ++stage;
        items = stage_items(segment, stage);
        eval = eval_subset(items, tc.eval_items, mix_seed(tc.seed, 0xe0a1 + stage));
        in_stage = 0;
        reached = false;
        continue;
      }
    }

    // Model selection and early stopping only apply once all data is in play.
    if (learner.has_validation() && stage == segments) {
      if (rec.val_mm < best_val) {
        best_val = rec.val_mm;
        history.best_epoch = epoch;
        best.clear();
        for (auto* p : params) best.push_back(p->value);
        since_best = 0;
      } else if (tc.patience > 0 && ++since_best >= tc.patience) {
        history.stopped_early = true;
        break;
      }
    }
  }
  history.final_stage = stage;
  if (!best.empty()) {
    for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best[k];
  }
  return history;
}

std::string csv_text(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configs

void TrainConfig::validate() const {
  if (epochs < 0) throw InvalidArgument("epochs must be non-negative");
  if (batch_size < 1) throw InvalidArgument("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  if (patience < 0) throw InvalidArgument("patience must be non-negative");
  if (grad_clip < 0.0) throw InvalidArgument("grad_clip must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},       {"batch_size", batch_size},           {"learning_rate", learning_rate},
          {"seed", seed},           {"patience", patience},               {"grad_clip", grad_clip},
          {"items_per_epoch", items_per_epoch}, {"eval_items", eval_items}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  c.patience = j.value("patience", c.patience);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.items_per_epoch = j.value("items_per_epoch", c.items_per_epoch);
  c.eval_items = j.value("eval_items", c.eval_items);
  c.validate();
  return c;
}

void CurriculumConfig::validate() const {
  if (segments < 1) throw InvalidArgument("curriculum needs at least one segment");
  if (!(threshold_mm >= 0.0)) throw InvalidArgument("curriculum threshold must be non-negative");
  if (max_stage_epochs < 1) throw InvalidArgument("max_stage_epochs must be positive");
}

nlohmann::json CurriculumConfig::to_json() const {
  nlohmann::json j = {{"segments", segments}, {"max_stage_epochs", max_stage_epochs}};
  // JSON has no infinity; null stands for a threshold that never binds.
  if (std::isinf(threshold_mm)) j["threshold_mm"] = nullptr;
  else j["threshold_mm"] = threshold_mm;
  return j;
}

CurriculumConfig CurriculumConfig::from_json(const nlohmann::json& j) {
  CurriculumConfig c;
  c.segments = j.value("segments", c.segments);
  c.max_stage_epochs = j.value("max_stage_epochs", c.max_stage_epochs);
  if (j.contains("threshold_mm")) {
    c.threshold_mm = j["threshold_mm"].is_null() ? std::numeric_limits<double>::infinity()
                                                 : j["threshold_mm"].get<double>();
  }
  c.validate();
  return c;
}

std::string History::format_log() const {
  std::string out;
  char buf[256];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "epoch=%d stage=%d items=%zu loss=%.6g stage_mm=%.3f val_mm=%s\n", e.epoch,
                  e.stage, e.items, e.train_loss, e.stage_mm, num(e.val_mm).c_str());
    out += buf;
  }
  return out;
}

bool History::operator==(const History& o) const {
  if (epochs.size() != o.epochs.size() || final_stage != o.final_stage || best_epoch != o.best_epoch ||
      stopped_early != o.stopped_early) {
    return false;
  }
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& a = epochs[i];
    const auto& b = o.epochs[i];
    if (a.epoch != b.epoch || a.stage != b.stage || a.items != b.items || a.train_loss != b.train_loss ||
        a.stage_mm != b.stage_mm || !same_double(a.val_mm, b.val_mm)) {
      return false;
    }
  }
  return true;
}

History train_standard(Learner& learner, const TrainConfig& config) {
  return run_training(learner, config, nullptr);
}

History train_curriculum(Learner& learner, const CurriculumConfig& curriculum, const TrainConfig& config) {
  return run_training(learner, config, &curriculum);
}

// ---------------------------------------------------------------------------
// Gamma learner

GammaLearner::GammaLearner(models::GammaNet& net, const data::PositionDataset& train,
                           const data::PositionDataset* validation)
    : net_(net) {
  if (!(train.mask == net.mask())) throw InvalidArgument("dataset mask does not match Gamma's mask");
  net_.norm = data::fit_normalizer(train);
  net_.scaler = data::fit_label_scaler(train.positions);
  z_ = net_.norm.apply(train.states);
  y_ = net_.scaler.apply(train.positions);
  sample_ = train.sample;
  length_.reserve(train.size());
  for (std::size_t k = 0; k < train.size(); ++k) length_.push_back(train.episode_length[train.episode[k]]);
  if (validation && validation->size() > 0) {
    if (!(validation->mask == net.mask())) throw InvalidArgument("validation mask does not match Gamma's mask");
    val_z_ = net_.norm.apply(validation->states);
    val_y_ = net_.scaler.apply(validation->positions);
  }
}

int GammaLearner::segment(std::size_t item, int segments) const {
  return static_cast<int>(sample_[item] * static_cast<std::size_t>(segments) / length_[item]);
}

double GammaLearner::accumulate(const std::vector<std::size_t>& items, std::uint64_t /*seed*/) {
  const auto B = static_cast<Eigen::Index>(items.size());
  nn::Mat z(z_.rows(), B), y(3, B);
  for (Eigen::Index k = 0; k < B; ++k) {
    z.col(k) = z_.col(static_cast<Eigen::Index>(items[static_cast<std::size_t>(k)]));
    y.col(k) = y_.col(static_cast<Eigen::Index>(items[static_cast<std::size_t>(k)]));
  }
  nn::zero_grads(net_.parameters());
  models::GammaNet::Cache cache;
  const nn::LossResult l = nn::rmse_loss(net_.forward(z, &cache), y);
  net_.backward(l.grad, cache);
  return l.loss;
}

double GammaLearner::rmse_mm(const Eigen::MatrixXd& z, const Eigen::MatrixXd& y) const {
  if (z.cols() == 0) return 0.0;
  double sq = 0.0;
  for (Eigen::Index start = 0; start < z.cols(); start += static_cast<Eigen::Index>(kEvalChunk)) {
    const Eigen::Index n = std::min<Eigen::Index>(static_cast<Eigen::Index>(kEvalChunk), z.cols() - start);
    const nn::Mat diff = net_.forward(z.middleCols(start, n)) - y.middleCols(start, n);
    sq += (diff.array().colwise() * net_.scaler.half_extent.array()).square().sum();
  }
  return 1000.0 * std::sqrt(sq / (3.0 * static_cast<double>(z.cols())));
}

double GammaLearner::rmse_mm(const std::vector<std::size_t>& items) const {
  nn::Mat z(z_.rows(), static_cast<Eigen::Index>(items.size())), y(3, static_cast<Eigen::Index>(items.size()));
  for (std::size_t k = 0; k < items.size(); ++k) {
    z.col(static_cast<Eigen::Index>(k)) = z_.col(static_cast<Eigen::Index>(items[k]));
    y.col(static_cast<Eigen::Index>(k)) = y_.col(static_cast<Eigen::Index>(items[k]));
  }
  return rmse_mm(z, y);
}

double GammaLearner::validation_mm() const { return rmse_mm(val_z_, val_y_); }

// ---------------------------------------------------------------------------
// LSTM-Pos learner

std::vector<Eigen::MatrixXd> lstm_pos_steps(const data::SequenceDataset& data, models::InputMode mode,
                                            const models::GammaNet* gamma) {
  if (models::needs_gamma(mode)) {
    if (!gamma) throw InvalidArgument(models::to_string(mode) + " input needs a trained Gamma");
    if (!(gamma->mask() == data.mask)) throw InvalidArgument("Gamma was trained on a different mask");
  }
  std::vector<Eigen::MatrixXd> out;
  out.reserve(data.states.size());
  for (const auto& s : data.states) {
    switch (mode) {
      case models::InputMode::RawOnly: out.push_back(s); break;
      case models::InputMode::PosOnly: out.emplace_back(gamma->predict_batch(s)); break;
      case models::InputMode::Concat: {
        Eigen::MatrixXd m(s.rows() + 3, s.cols());
        m.topRows(s.rows()) = s;
        m.bottomRows(3) = gamma->predict_batch(s);
        out.push_back(std::move(m));
        break;
      }
    }
  }
  return out;
}

LstmPosLearner::LstmPosLearner(models::LstmPosNet& net, const models::GammaNet* gamma,
                               const data::SequenceDataset& train, const data::SequenceDataset* validation)
    : net_(net) {
  const auto& cfg = net.config();
  if (!(train.mask == net.mask())) throw InvalidArgument("dataset mask does not match the target model's mask");
  if (train.window != cfg.window) throw InvalidArgument("dataset window does not match H");

  const std::vector<Eigen::MatrixXd> raw = lstm_pos_steps(train, cfg.mode, gamma);
  Eigen::Index total = 0;
  for (const auto& r : raw) total += r.cols();
  Eigen::MatrixXd all(net.step_width(), total);
  Eigen::Index col = 0;
  for (const auto& r : raw) {
    all.middleCols(col, r.cols()) = r;
    col += r.cols();
  }
  Eigen::Matrix3Xd targets(3, static_cast<Eigen::Index>(train.labels.size()));
  for (std::size_t e = 0; e < train.labels.size(); ++e) targets.col(static_cast<Eigen::Index>(e)) = train.labels[e];
  net_.norm = data::fit_normalizer(all);
  net_.scaler = data::fit_label_scaler(targets);

  for (std::size_t e = 0; e < raw.size(); ++e) {
    steps_.push_back(net_.norm.apply(raw[e]));
    labels_.push_back(net_.scaler.apply(Eigen::Matrix3Xd(train.labels[e])).col(0));
    episode_windows_.push_back(static_cast<std::size_t>(raw[e].cols() - cfg.window + 1));
  }
  for (const auto& w : train.windows) windows_.push_back({w.episode, w.end});

  if (validation && validation->size() > 0) {
    if (!(validation->mask == net.mask()) || validation->window != cfg.window) {
      throw InvalidArgument("validation set does not match the target model");
    }
    const std::vector<Eigen::MatrixXd> vraw = lstm_pos_steps(*validation, cfg.mode, gamma);
    for (std::size_t e = 0; e < vraw.size(); ++e) {
      val_steps_.push_back(net_.norm.apply(vraw[e]));
      val_labels_.push_back(net_.scaler.apply(Eigen::Matrix3Xd(validation->labels[e])).col(0));
    }
    for (const auto& w : validation->windows) val_windows_.push_back({w.episode, w.end});
  }
}

int LstmPosLearner::segment(std::size_t item, int segments) const {
  const Window& w = windows_[item];
  const std::size_t k = w.end + 1 - static_cast<std::size_t>(net_.config().window);
  return static_cast<int>(k * static_cast<std::size_t>(segments) / episode_windows_[w.episode]);
}

std::vector<nn::Mat> LstmPosLearner::gather(const std::vector<Eigen::MatrixXd>& steps,
                                            const std::vector<Window>& windows,
                                            const std::vector<std::size_t>& items) const {
  const int H = net_.config().window;
  const auto B = static_cast<Eigen::Index>(items.size());
  std::vector<nn::Mat> zs(static_cast<std::size_t>(H), nn::Mat(net_.step_width(), B));
  for (Eigen::Index b = 0; b < B; ++b) {
    const Window& w = windows[items[static_cast<std::size_t>(b)]];
    const auto first = static_cast<Eigen::Index>(w.end) + 1 - H;
    for (int t = 0; t < H; ++t) zs[static_cast<std::size_t>(t)].col(b) = steps[w.episode].col(first + t);
  }
  return zs;
}

double LstmPosLearner::accumulate(const std::vector<std::size_t>& items, std::uint64_t seed) {
  const std::vector<nn::Mat> zs = gather(steps_, windows_, items);
  nn::Mat y(3, static_cast<Eigen::Index>(items.size()));
  for (std::size_t k = 0; k < items.size(); ++k) y.col(static_cast<Eigen::Index>(k)) = labels_[windows_[items[k]].episode];
  nn::zero_grads(net_.parameters());
  models::LstmPosNet::Cache cache;
  const nn::LossResult l = nn::rmse_loss(net_.forward(zs, true, seed, &cache), y);
  net_.backward(l.grad, cache);
  return l.loss;
}

double LstmPosLearner::rmse_mm(const std::vector<Eigen::MatrixXd>& steps, const std::vector<Eigen::Vector3d>& labels,
                               const std::vector<Window>& windows, const std::vector<std::size_t>& items) const {
  if (items.empty()) return 0.0;
  double sq = 0.0;
  for (std::size_t start = 0; start < items.size(); start += kEvalChunk) {
    const std::vector<std::size_t> chunk(items.begin() + static_cast<std::ptrdiff_t>(start),
                                         items.begin() + static_cast<std::ptrdiff_t>(std::min(items.size(), start + kEvalChunk)));
    const nn::Mat pred = net_.forward(gather(steps, windows, chunk), false, 0);
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      const Eigen::Vector3d d = (pred.col(static_cast<Eigen::Index>(k)) - labels[windows[chunk[k]].episode])
                                    .cwiseProduct(net_.scaler.half_extent);
      sq += d.squaredNorm();
    }
  }
  return 1000.0 * std::sqrt(sq / (3.0 * static_cast<double>(items.size())));
}

double LstmPosLearner::rmse_mm(const std::vector<std::size_t>& items) const {
  return rmse_mm(steps_, labels_, windows_, items);
}

double LstmPosLearner::validation_mm() const {
  return rmse_mm(val_steps_, val_labels_, val_windows_, iota(val_windows_.size()));
}

// ---------------------------------------------------------------------------
// End-to-end helpers

GammaRun train_gamma(const std::vector<Episode>& train, const std::vector<Episode>& validation,
                     const data::FeatureMask& mask, const models::GammaConfig& arch, const TrainConfig& config,
                     const std::optional<CurriculumConfig>& curriculum) {
  GammaRun run{models::GammaNet(mask, arch, mix_seed(config.seed, 0x6a)), {}};
  const data::PositionDataset tr = data::build_position_dataset(train, mask);
  std::optional<data::PositionDataset> val;
  if (!validation.empty()) val = data::build_position_dataset(validation, mask);
  GammaLearner learner(run.net, tr, val ? &*val : nullptr);
  run.history = curriculum ? train_curriculum(learner, *curriculum, config) : train_standard(learner, config);
  return run;
}

TargetRun train_target(const std::vector<Episode>& train, const std::vector<Episode>& validation,
                       const data::FeatureMask& mask, const models::GammaNet* gamma,
                       const models::LstmPosConfig& arch, const TrainConfig& config,
                       const std::optional<CurriculumConfig>& curriculum) {
  TargetRun run{models::LstmPosNet(mask, arch, mix_seed(config.seed, 0x7b)), {}};
  const data::SequenceDataset tr = data::build_sequence_dataset(train, arch.window, mask);
  std::optional<data::SequenceDataset> val;
  if (!validation.empty()) val = data::build_sequence_dataset(validation, arch.window, mask);
  LstmPosLearner learner(run.net, models::needs_gamma(arch.mode) ? gamma : nullptr, tr, val ? &*val : nullptr);
  run.history = curriculum ? train_curriculum(learner, *curriculum, config) : train_standard(learner, config);
  return run;
}

std::pair<std::vector<Episode>, std::vector<Episode>> split_validation(const std::vector<Episode>& episodes,
                                                                       double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw InvalidArgument("validation fraction must lie in [0, 1)");
  const std::size_t n = episodes.size();
  auto held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (fraction > 0.0 && n >= 2) held = std::clamp<std::size_t>(held, 1, n - 1);
  else held = 0;
  std::vector<std::size_t> order = iota(n);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> is_val(n, false);
  for (std::size_t k = 0; k < held; ++k) is_val[order[k]] = true;
  std::pair<std::vector<Episode>, std::vector<Episode>> out;
  for (std::size_t i = 0; i < n; ++i) (is_val[i] ? out.second : out.first).push_back(episodes[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport build_report(const std::vector<EpisodeErrors>& episodes, const data::BoardLayout& board) {
  EvalReport r;
  r.grid_rows = board.rows;
  r.grid_cols = board.cols;
  const auto cells = static_cast<std::size_t>(board.square_count());
  std::vector<double> cell_sum(cells, 0.0);
  r.cell_episodes.assign(cells, 0);

  struct Acc {
    double t = 0.0, sum = 0.0, sq = 0.0;
    std::size_t n = 0;
  };
  std::map<std::size_t, Acc> curve;

  for (const auto& ep : episodes) {
    if (ep.error_mm.empty()) continue;
    double s = 0.0;
    for (std::size_t k = 0; k < ep.error_mm.size(); ++k) {
      s += ep.error_mm[k];
      Acc& a = curve[ep.index[k]];
      a.t = ep.t[k];
      a.sum += ep.error_mm[k];
      a.sq += ep.error_mm[k] * ep.error_mm[k];
      ++a.n;
    }
    const double mean = s / static_cast<double>(ep.error_mm.size());
    r.episode_mean_mm.push_back(mean);
    r.samples += ep.error_mm.size();
    if (ep.square_row >= 0 && ep.square_row < board.rows && ep.square_col >= 0 && ep.square_col < board.cols) {
      const auto c = static_cast<std::size_t>(ep.square_row * board.cols + ep.square_col);
      cell_sum[c] += mean;
      ++r.cell_episodes[c];
    }
  }
  if (r.episode_mean_mm.empty()) throw InvalidArgument("no predictions to evaluate");
  r.episodes = r.episode_mean_mm.size();
  const double n = static_cast<double>(r.episodes);
  r.mean_mm = std::accumulate(r.episode_mean_mm.begin(), r.episode_mean_mm.end(), 0.0) / n;
  double var = 0.0;
  for (double m : r.episode_mean_mm) var += (m - r.mean_mm) * (m - r.mean_mm);
  r.std_mm = std::sqrt(var / n);

  r.cell_mean_mm.resize(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    r.cell_mean_mm[c] = r.cell_episodes[c] ? cell_sum[c] / static_cast<double>(r.cell_episodes[c])
                                           : std::numeric_limits<double>::quiet_NaN();
  }
  for (const auto& [index, a] : curve) {
    const double mean = a.sum / static_cast<double>(a.n);
    r.curve_t.push_back(a.t);
    r.curve_mean_mm.push_back(mean);
    r.curve_std_mm.push_back(std::sqrt(std::max(0.0, a.sq / static_cast<double>(a.n) - mean * mean)));
    r.curve_count.push_back(a.n);
  }
  return r;
}

EvalReport evaluate_position(const PositionPredictor& predictor, const std::vector<Episode>& episodes,
                             const data::BoardLayout& board) {
  std::vector<EpisodeErrors> errs;
  for (const auto& ep : episodes) {
    EpisodeErrors e{ep.meta.square_row, ep.meta.square_col, {}, {}, {}};
    for (std::size_t k = 0; k < ep.size(); ++k) {
      e.index.push_back(k);
      e.t.push_back(ep.times[k]);
      e.error_mm.push_back(1000.0 * (predictor(ep, k) - ep.positions.col(static_cast<Eigen::Index>(k))).norm());
    }
    errs.push_back(std::move(e));
  }
  return build_report(errs, board);
}

EvalReport evaluate_position(const models::GammaNet& gamma, const std::vector<Episode>& episodes,
                             const data::BoardLayout& board) {
  std::vector<EpisodeErrors> errs;
  for (const auto& ep : episodes) {
    const Eigen::Matrix3Xd pred = gamma.predict_batch(gamma.mask().apply(ep.states));
    EpisodeErrors e{ep.meta.square_row, ep.meta.square_col, {}, {}, {}};
    for (std::size_t k = 0; k < ep.size(); ++k) {
      const auto c = static_cast<Eigen::Index>(k);
      e.index.push_back(k);
      e.t.push_back(ep.times[k]);
      e.error_mm.push_back(1000.0 * (pred.col(c) - ep.positions.col(c)).norm());
    }
    errs.push_back(std::move(e));
  }
  return build_report(errs, board);
}

EvalReport evaluate_target(const TargetPredictor& predictor, const std::vector<Episode>& episodes, int window,
                           const data::BoardLayout& board) {
  if (window < 1) throw InvalidArgument("window length must be at least 1");
  std::vector<EpisodeErrors> errs;
  for (const auto& ep : episodes) {
    if (ep.size() < static_cast<std::size_t>(window)) {
      throw EpisodeTooShort("episode " + ep.meta.id + " is shorter than H=" + std::to_string(window));
    }
    EpisodeErrors e{ep.meta.square_row, ep.meta.square_col, {}, {}, {}};
    for (std::size_t end = static_cast<std::size_t>(window) - 1; end < ep.size(); ++end) {
      e.index.push_back(end);
      e.t.push_back(ep.times[end]);
      e.error_mm.push_back(1000.0 * (predictor(ep, end) - ep.target).norm());
    }
    errs.push_back(std::move(e));
  }
  return build_report(errs, board);
}

std::vector<Eigen::Vector3d> predict_episode_targets(const models::LstmPosNet& phi, const models::GammaNet* gamma,
                                                     const Episode& episode) {
  const auto mode = phi.config().mode;
  if (models::needs_gamma(mode) && (!gamma || !(gamma->mask() == phi.mask()))) {
    throw InvalidArgument("target model needs a Gamma trained on mask '" + phi.mask().name() + "'");
  }
  const int H = phi.config().window;
  if (episode.size() < static_cast<std::size_t>(H)) {
    throw EpisodeTooShort("episode " + episode.meta.id + " is shorter than H=" + std::to_string(H));
  }
  const Eigen::MatrixXd steps = models::build_lstm_pos_input(phi.mask().apply(episode.states), mode, gamma);
  std::vector<Eigen::Vector3d> out;
  for (Eigen::Index end = H - 1; end < steps.cols(); ++end) out.push_back(phi.predict(steps.middleCols(end - H + 1, H)));
  return out;
}

EvalReport evaluate_target(const models::LstmPosNet& phi, const models::GammaNet* gamma,
                           const std::vector<Episode>& episodes, const data::BoardLayout& board) {
  const auto H = static_cast<std::size_t>(phi.config().window);
  std::vector<EpisodeErrors> errs;
  for (const auto& ep : episodes) {
    const std::vector<Eigen::Vector3d> pred = predict_episode_targets(phi, gamma, ep);
    EpisodeErrors e{ep.meta.square_row, ep.meta.square_col, {}, {}, {}};
    for (std::size_t k = 0; k < pred.size(); ++k) {
      e.index.push_back(k + H - 1);
      e.t.push_back(ep.times[k + H - 1]);
      e.error_mm.push_back(1000.0 * (pred[k] - ep.target).norm());
    }
    errs.push_back(std::move(e));
  }
  return build_report(errs, board);
}

double mean_distance_to_centroid_mm(const std::vector<Episode>& episodes) {
  if (episodes.empty()) throw InvalidArgument("no episodes");
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& ep : episodes) c += ep.target;
  c /= static_cast<double>(episodes.size());
  double s = 0.0;
  for (const auto& ep : episodes) s += (ep.target - c).norm();
  return 1000.0 * s / static_cast<double>(episodes.size());
}

// ---------------------------------------------------------------------------
// Experiments

std::vector<AblationRow> run_ablation(const std::vector<std::string>& masks,
                                      const std::vector<models::InputMode>& modes,
                                      const std::vector<Episode>& train, const std::vector<Episode>& test,
                                      const data::BoardLayout& board, const ExperimentConfig& config,
                                      const std::function<void(const AblationRow&)>& on_row) {
  const auto [fit, val] = split_validation(train, config.validation_fraction, mix_seed(config.gamma_train.seed, 0x7a1));
  const bool want_gamma =
      modes.empty() || std::any_of(modes.begin(), modes.end(), [](auto m) { return models::needs_gamma(m); });
  std::vector<AblationRow> rows;
  auto emit = [&](AblationRow row) {
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  };
  for (const auto& name : masks) {
    const data::FeatureMask mask = data::feature_mask(name);
    std::optional<models::GammaNet> gamma;
    std::string gamma_failure;
    EvalReport gamma_report;
    if (want_gamma) {
      try {
        GammaRun g = train_gamma(fit, val, mask, config.gamma, config.gamma_train, config.gamma_curriculum);
        gamma_report = evaluate_position(g.net, test, board);
        gamma = std::move(g.net);
      } catch (const Error& e) {
        gamma_failure = e.what();
      }
    }
    auto base_row = [&](std::string mode) {
      AblationRow row;
      row.mask = name;
      row.mode = std::move(mode);
      if (gamma) {
        row.gamma_mean_mm = gamma_report.mean_mm;
        row.gamma_std_mm = gamma_report.std_mm;
      }
      return row;
    };
    if (modes.empty()) {
      AblationRow row = base_row("position");
      if (gamma) {
        row.report = gamma_report;
        row.mean_mm = gamma_report.mean_mm;
        row.std_mm = gamma_report.std_mm;
      } else {
        row.status = gamma_failure;
      }
      emit(std::move(row));
      continue;
    }
    for (const auto mode : modes) {
      AblationRow row = base_row(models::to_string(mode));
      if (models::needs_gamma(mode) && !gamma) {
        row.status = "gamma failed: " + gamma_failure;
        emit(std::move(row));
        continue;
      }
      try {
        models::LstmPosConfig arch = config.target;
        arch.mode = mode;
        const models::GammaNet* g = models::needs_gamma(mode) ? &*gamma : nullptr;
        const TargetRun t = train_target(fit, val, mask, g, arch, config.target_train, config.target_curriculum);
        row.report = evaluate_target(t.net, g, test, board);
        row.mean_mm = row.report.mean_mm;
        row.std_mm = row.report.std_mm;
      } catch (const Error& e) {
        row.status = e.what();
      }
      emit(std::move(row));
    }
  }
  return rows;
}

std::vector<SweepPoint> run_h_sweep(const std::vector<int>& windows, const models::GammaNet* gamma,
                                    const data::FeatureMask& mask, const std::vector<Episode>& train,
                                    const std::vector<Episode>& test, const data::BoardLayout& board,
                                    const ExperimentConfig& config) {
  const auto [fit, val] = split_validation(train, config.validation_fraction, mix_seed(config.target_train.seed, 0x7a1));
  std::vector<SweepPoint> points;
  for (int H : windows) {
    SweepPoint p;
    p.window = H;
    try {
      models::LstmPosConfig arch = config.target;
      arch.window = H;
      const TargetRun t = train_target(fit, val, mask, gamma, arch, config.target_train, config.target_curriculum);
      p.report = evaluate_target(t.net, gamma, test, board);
      p.mean_mm = p.report.mean_mm;
      p.std_mm = p.report.std_mm;
    } catch (const Error& e) {
      p.status = e.what();
    }
    points.push_back(std::move(p));
  }
  return points;
}

// ---------------------------------------------------------------------------
// CSV

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
  std::ofstream out = open_csv(path);
  out << "mask,mode,mean_mm,std_mm,gamma_mean_mm,gamma_std_mm,status\n";
  for (const auto& r : rows) {
    out << r.mask << ',' << r.mode << ',' << num(r.mean_mm) << ',' << num(r.std_mm) << ',' << num(r.gamma_mean_mm)
        << ',' << num(r.gamma_std_mm) << ',' << csv_text(r.status) << '\n';
  }
}

void write_h_sweep_csv(const std::vector<SweepPoint>& points, const std::filesystem::path& path) {
  std::ofstream out = open_csv(path);
  out << "H,mean_mm,std_mm,status\n";
  for (const auto& p : points) {
    out << p.window << ',' << num(p.mean_mm) << ',' << num(p.std_mm) << ',' << csv_text(p.status) << '\n';
  }
}

void write_heatmap_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out = open_csv(path);
  out << "square_row,square_col,mean_mm\n";
  for (int r = 0; r < report.grid_rows; ++r) {
    for (int c = 0; c < report.grid_cols; ++c) {
      out << r << ',' << c << ',' << num(report.cell_mean_mm[static_cast<std::size_t>(r * report.grid_cols + c)]) << '\n';
    }
  }
}

void write_error_vs_time_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out = open_csv(path);
  out << "t,mean_mm,std_mm\n";
  for (std::size_t k = 0; k < report.curve_t.size(); ++k) {
    out << num(report.curve_t[k]) << ',' << num(report.curve_mean_mm[k]) << ',' << num(report.curve_std_mm[k]) << '\n';
  }
}

}  // namespace reach::train
