#include "reach/dataset.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "reach/errors.hpp"

namespace reach::data {
namespace {

std::vector<int> iota_range(int first, int last) {
  std::vector<int> out;
  for (int i = first; i < last; ++i) out.push_back(i);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

nlohmann::json vec_json(const Eigen::Vector3d& v) { return {v[0], v[1], v[2]}; }

Eigen::Vector3d json_vec(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw SchemaError("expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

nlohmann::json meta_json(const EpisodeMeta& m) {
  return {{"seed", m.seed},
          {"square_row", m.square_row},
          {"square_col", m.square_col},
          {"reach_time", m.reach_time},
          {"torso_yaw", m.torso_yaw},
          {"mount_block", m.mount_block},
          {"arm", {{"l_u", m.arm.upper_length}, {"l_f", m.arm.fore_length}}}};
}

EpisodeMeta json_meta(const nlohmann::json& j) {
  EpisodeMeta m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.square_row = j.at("square_row").get<int>();
  m.square_col = j.at("square_col").get<int>();
  m.reach_time = j.at("reach_time").get<double>();
  m.torso_yaw = j.at("torso_yaw").get<double>();
  m.mount_block = j.at("mount_block").get<int>();
  m.arm.upper_length = j.at("arm").at("l_u").get<double>();
  m.arm.fore_length = j.at("arm").at("l_f").get<double>();
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Feature masks

FeatureMask::FeatureMask(std::string name, std::vector<int> indices)
    : name_(std::move(name)), indices_(std::move(indices)) {
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    if (indices_[i] < 0 || indices_[i] >= kStateDim) {
      throw InvalidArgument("mask index out of range in '" + name_ + "'");
    }
    if (i > 0 && indices_[i] <= indices_[i - 1]) {
      throw InvalidArgument("mask indices must be unique and ascending in '" + name_ + "'");
    }
  }
}

Eigen::MatrixXd FeatureMask::apply(const Eigen::MatrixXd& states) const {
  if (states.rows() != kStateDim) {
    throw ShapeMismatch("state matrix must have " + std::to_string(kStateDim) + " rows");
  }
  Eigen::MatrixXd out(size(), states.cols());
  for (int r = 0; r < size(); ++r) out.row(r) = states.row(indices_[static_cast<std::size_t>(r)]);
  return out;
}

Eigen::VectorXd FeatureMask::apply(const Eigen::VectorXd& state) const {
  if (state.size() != kStateDim) throw ShapeMismatch("state vector must have 18 entries");
  Eigen::VectorXd out(size());
  for (int r = 0; r < size(); ++r) out[r] = state[indices_[static_cast<std::size_t>(r)]];
  return out;
}

const std::vector<std::string>& feature_mask_names() {
  static const std::vector<std::string> names = {"all",        "accelerometers", "accel_mag",
                                                 "gyroscopes", "magnetometers",  "wrist_only",
                                                 "upper_arm_only"};
  return names;
}

FeatureMask feature_mask(const std::string& name) {
  // Per band: accel 0-2, gyro 3-5, mag 6-8; the upper band is offset by 9.
  if (name == "all") return {name, iota_range(0, 18)};
  if (name == "accelerometers") return {name, {0, 1, 2, 9, 10, 11}};
  if (name == "accel_mag") return {name, {0, 1, 2, 6, 7, 8, 9, 10, 11, 15, 16, 17}};
  if (name == "gyroscopes") return {name, {3, 4, 5, 12, 13, 14}};
  if (name == "magnetometers") return {name, {6, 7, 8, 15, 16, 17}};
  if (name == "wrist_only") return {name, iota_range(0, 9)};
  if (name == "upper_arm_only") return {name, iota_range(9, 18)};
  throw UnknownMask("unknown feature mask '" + name + "'");
}

// ---------------------------------------------------------------------------
// Datasets

PositionDataset build_position_dataset(const std::vector<Episode>& episodes, const FeatureMask& mask) {
  if (episodes.empty()) throw InvalidArgument("no episodes");
  if (mask.empty()) throw InvalidArgument("feature mask is empty");
  std::size_t total = 0;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    if (episodes[e].states.rows() != kStateDim) {
      throw ShapeMismatch("episode " + std::to_string(e) + " state is not 18-dimensional");
    }
    total += episodes[e].size();
  }
  PositionDataset ds;
  ds.mask = mask;
  ds.states.resize(mask.size(), static_cast<Eigen::Index>(total));
  ds.positions.resize(3, static_cast<Eigen::Index>(total));
  ds.episode.reserve(total);
  ds.sample.reserve(total);
  Eigen::Index col = 0;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const Episode& ep = episodes[e];
    const auto n = static_cast<Eigen::Index>(ep.size());
    ds.states.middleCols(col, n) = mask.apply(ep.states);
    ds.positions.middleCols(col, n) = ep.positions;
    for (std::size_t k = 0; k < ep.size(); ++k) {
      ds.episode.push_back(e);
      ds.sample.push_back(k);
    }
    ds.episode_length.push_back(ep.size());
    col += n;
  }
  return ds;
}

Eigen::MatrixXd SequenceDataset::window_states(std::size_t i) const {
  const WindowRef& w = windows[i];
  const auto start = static_cast<Eigen::Index>(w.end + 1) - window;
  return states[w.episode].middleCols(start, window);
}

SequenceDataset build_sequence_dataset(const std::vector<Episode>& episodes, int window,
                                       const FeatureMask& mask) {
  if (window < 1) throw InvalidArgument("window length must be at least 1");
  if (episodes.empty()) throw InvalidArgument("no episodes");
  if (mask.empty()) throw InvalidArgument("feature mask is empty");
  std::string short_ones;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    if (episodes[e].size() < static_cast<std::size_t>(window)) {
      if (!short_ones.empty()) short_ones += ", ";
      short_ones += episodes[e].meta.id.empty() ? "#" + std::to_string(e) : episodes[e].meta.id;
    }
  }
  if (!short_ones.empty()) {
    throw EpisodeTooShort("episodes shorter than H=" + std::to_string(window) + ": " + short_ones);
  }
  SequenceDataset ds;
  ds.mask = mask;
  ds.window = window;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const Episode& ep = episodes[e];
    ds.states.push_back(mask.apply(ep.states));
    ds.labels.push_back(ep.target);
    for (std::size_t end = static_cast<std::size_t>(window) - 1; end < ep.size(); ++end) {
      ds.windows.push_back({e, end});
    }
  }
  return ds;
}

Eigen::MatrixXd NormStats::apply(const Eigen::MatrixXd& x) const {
  if (x.rows() != mean.size()) throw ShapeMismatch("normalizer width mismatch");
  return (x.colwise() - mean).array().colwise() / stddev.array();
}

Eigen::MatrixXd NormStats::invert(const Eigen::MatrixXd& z) const {
  if (z.rows() != mean.size()) throw ShapeMismatch("normalizer width mismatch");
  return (z.array().colwise() * stddev.array()).matrix().colwise() + mean;
}

NormStats fit_normalizer(const Eigen::MatrixXd& features) {
  if (features.cols() == 0) throw InvalidArgument("cannot fit a normalizer on an empty set");
  NormStats stats;
  stats.mean = features.rowwise().mean();
  const Eigen::MatrixXd centered = features.colwise() - stats.mean;
  stats.stddev =
      (centered.array().square().rowwise().sum() / static_cast<double>(features.cols())).sqrt();
  for (Eigen::Index i = 0; i < stats.stddev.size(); ++i) {
    if (stats.stddev[i] < 1e-12) {
      stats.stddev[i] = 1.0;
      stats.clamped.push_back(static_cast<int>(i));
    }
  }
  return stats;
}

NormStats fit_normalizer(const PositionDataset& train) { return fit_normalizer(train.states); }

NormStats fit_normalizer(const SequenceDataset& train) {
  Eigen::Index total = 0;
  for (const auto& s : train.states) total += s.cols();
  if (total == 0) throw InvalidArgument("cannot fit a normalizer on an empty set");
  Eigen::MatrixXd all(train.states.front().rows(), total);
  Eigen::Index col = 0;
  for (const auto& s : train.states) {
    all.middleCols(col, s.cols()) = s;
    col += s.cols();
  }
  return fit_normalizer(all);
}

Eigen::Matrix3Xd LabelScaler::apply(const Eigen::Matrix3Xd& p) const {
  return (p.colwise() - center).array().colwise() / half_extent.array();
}

Eigen::Matrix3Xd LabelScaler::invert(const Eigen::Matrix3Xd& z) const {
  return (z.array().colwise() * half_extent.array()).matrix().colwise() + center;
}

Eigen::Vector3d LabelScaler::invert(const Eigen::Vector3d& z) const {
  return z.cwiseProduct(half_extent) + center;
}

LabelScaler fit_label_scaler(const Eigen::Matrix3Xd& positions) {
  if (positions.cols() == 0) throw InvalidArgument("cannot fit label scaling on an empty set");
  LabelScaler s;
  const Eigen::Vector3d lo = positions.rowwise().minCoeff();
  const Eigen::Vector3d hi = positions.rowwise().maxCoeff();
  s.center = 0.5 * (lo + hi);
  s.half_extent = (0.5 * (hi - lo)).cwiseMax(1e-3);
  return s;
}

// ---------------------------------------------------------------------------
// Persistence

void save_episode(const Episode& episode, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const auto& cols = episode_csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  char buf[32];
  for (std::size_t k = 0; k < episode.size(); ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    std::snprintf(buf, sizeof buf, "%.17g", episode.times[k]);
    out << buf;
    for (int r = 0; r < kStateDim; ++r) {
      std::snprintf(buf, sizeof buf, "%.17g", episode.states(r, c));
      out << ',' << buf;
    }
    for (int r = 0; r < 3; ++r) {
      std::snprintf(buf, sizeof buf, "%.17g", episode.positions(r, c));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

Episode load_episode(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw EmptyEpisode(path.string() + " is empty");
  }
  const auto header = split_fields(line);
  if (header != episode_csv_columns()) {
    throw SchemaError(path.string() + ": header does not match the episode column list");
  }
  const std::size_t width = header.size();
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != width) {
      throw ParseError(path.string() + ": expected " + std::to_string(width) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no, std::min(fields.size(), width) + 1);
    }
    std::vector<double> row(width);
    for (std::size_t c = 0; c < width; ++c) {
      const char* begin = fields[c].c_str();
      char* end = nullptr;
      errno = 0;
      row[c] = std::strtod(begin, &end);
      if (fields[c].empty() || end != begin + fields[c].size() || errno == ERANGE ||
          !std::isfinite(row[c])) {
        throw ParseError(path.string() + ": bad number '" + fields[c] + "'", line_no, c + 1);
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw EmptyEpisode(path.string() + " has no samples");

  Episode ep;
  const auto n = static_cast<Eigen::Index>(rows.size());
  ep.times.resize(rows.size());
  ep.states.resize(kStateDim, n);
  ep.positions.resize(3, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& r = rows[static_cast<std::size_t>(k)];
    ep.times[static_cast<std::size_t>(k)] = r[0];
    for (int i = 0; i < kStateDim; ++i) ep.states(i, k) = r[static_cast<std::size_t>(1 + i)];
    for (int i = 0; i < 3; ++i) ep.positions(i, k) = r[static_cast<std::size_t>(1 + kStateDim + i)];
  }
  ep.rate = rows.size() > 1 ? 1.0 / (ep.times[1] - ep.times[0]) : 60.0;
  ep.rate = std::round(ep.rate * 1e6) / 1e6;
  std::size_t hold = rows.size() - 1;
  while (hold > 0 && ep.positions.col(static_cast<Eigen::Index>(hold - 1)) ==
                         ep.positions.col(static_cast<Eigen::Index>(rows.size() - 1))) {
    --hold;
  }
  ep.target_index = hold;
  ep.target = ep.positions.col(static_cast<Eigen::Index>(hold));
  ep.meta.id = path.stem().string();
  return ep;
}

Eigen::Vector3d BoardLayout::square_center(int row, int col) const {
  const double x = center.x() + (col - 0.5 * (cols - 1)) * square;
  const double z = center.z() + (0.5 * (rows - 1) - row) * square;
  return {x, center.y(), z};
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  nlohmann::json j;
  j["version"] = manifest.version;
  j["rate"] = manifest.rate;
  j["horizon"] = manifest.horizon;
  j["arm"] = {{"l_u", manifest.arm.upper_length}, {"l_f", manifest.arm.fore_length}};
  j["board"] = {{"rows", manifest.board.rows},
                {"cols", manifest.board.cols},
                {"square", manifest.board.square},
                {"center", vec_json(manifest.board.center)}};
  j["seed"] = manifest.seed;
  j["config"] = manifest.config;
  auto& eps = j["episodes"] = nlohmann::json::array();
  for (const auto& e : manifest.episodes) {
    eps.push_back({{"id", e.id}, {"split", e.split}, {"target", vec_json(e.target)},
                   {"meta", meta_json(e.meta)}});
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), 0, e.byte);
  }
  try {
    Manifest m;
    m.version = j.at("version").get<int>();
    if (m.version != 1) throw SchemaError("unsupported manifest version");
    m.rate = j.at("rate").get<double>();
    m.horizon = j.at("horizon").get<double>();
    m.arm.upper_length = j.at("arm").at("l_u").get<double>();
    m.arm.fore_length = j.at("arm").at("l_f").get<double>();
    const auto& b = j.at("board");
    m.board.rows = b.at("rows").get<int>();
    m.board.cols = b.at("cols").get<int>();
    m.board.square = b.at("square").get<double>();
    m.board.center = json_vec(b.at("center"));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = j.value("config", nlohmann::json::object());
    for (const auto& e : j.at("episodes")) {
      ManifestEntry entry;
      entry.id = e.at("id").get<std::string>();
      entry.split = e.at("split").get<std::string>();
      entry.target = json_vec(e.at("target"));
      entry.meta = json_meta(e.at("meta"));
      entry.meta.id = entry.id;
      m.episodes.push_back(std::move(entry));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void save_dataset(const std::filesystem::path& root, const Manifest& manifest,
                  const std::vector<Episode>& train, const std::vector<Episode>& test) {
  std::filesystem::create_directories(root / "train");
  std::filesystem::create_directories(root / "test");
  for (const auto& ep : train) save_episode(ep, root / "train" / (ep.meta.id + ".csv"));
  for (const auto& ep : test) save_episode(ep, root / "test" / (ep.meta.id + ".csv"));
  save_manifest(manifest, root / "manifest.json");
}

LoadedDataset load_dataset(const std::filesystem::path& root) {
  LoadedDataset out;
  out.manifest = load_manifest(root / "manifest.json");
  for (const auto& entry : out.manifest.episodes) {
    Episode ep = load_episode(root / entry.split / (entry.id + ".csv"));
    ep.meta = entry.meta;
    (entry.split == "test" ? out.test : out.train).push_back(std::move(ep));
  }
  return out;
}

std::pair<std::vector<Episode>, std::vector<Episode>> split_episodes(std::vector<Episode> episodes,
                                                                     int test_per_square,
                                                                     std::uint64_t seed) {
  if (test_per_square < 0) throw InvalidArgument("test_per_square must be non-negative");
  std::map<std::pair<int, int>, std::vector<std::size_t>> by_square;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& m = episodes[i].meta;
    if (m.square_row >= 0 && m.square_col >= 0) by_square[{m.square_row, m.square_col}].push_back(i);
  }
  std::vector<bool> is_test(episodes.size(), false);
  std::mt19937_64 rng(seed);
  for (auto& [square, members] : by_square) {
    if (members.size() < static_cast<std::size_t>(test_per_square)) {
      throw InsufficientEpisodes("square (" + std::to_string(square.first) + ", " +
                                 std::to_string(square.second) + ") has " +
                                 std::to_string(members.size()) + " episodes, " +
                                 std::to_string(test_per_square) + " requested for test");
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (int k = 0; k < test_per_square; ++k) is_test[members[static_cast<std::size_t>(k)]] = true;
  }
  std::vector<Episode> train, test;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    (is_test[i] ? test : train).push_back(std::move(episodes[i]));
  }
  return {std::move(train), std::move(test)};
}

}  // namespace reach::data
