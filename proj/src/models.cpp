#include "reach/models.hpp"

#include <cstring>

#include "reach/errors.hpp"

namespace reach::models {
namespace {

constexpr const char* kGammaKind = "gamma";
constexpr const char* kLstmPosKind = "lstm_pos";

nn::Parameter make_param(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  return nn::Parameter(name, Mat::Zero(rows, cols));
}

Mat tile_columns(const Mat& x, int times) {
  if (times == 1) return x;
  Mat out(x.rows(), x.cols() * times);
  for (int r = 0; r < times; ++r) out.middleCols(r * x.cols(), x.cols()) = x;
  return out;
}

nlohmann::json mask_json(const data::FeatureMask& mask) {
  return {{"name", mask.name()}, {"indices", mask.indices()}};
}

data::FeatureMask json_mask(const nlohmann::json& j) {
  return data::FeatureMask(j.at("name").get<std::string>(), j.at("indices").get<std::vector<int>>());
}

data::NormStats identity_norm(int n) {
  data::NormStats s;
  s.mean = Eigen::VectorXd::Zero(n);
  s.stddev = Eigen::VectorXd::Ones(n);
  return s;
}

void put_scaling(nn::WeightFile& file, nlohmann::json& header, const data::NormStats& norm,
                 const data::LabelScaler& scaler) {
  file.blocks.push_back({"norm.mean", nn::Tensor::from_matrix(norm.mean)});
  file.blocks.push_back({"norm.stddev", nn::Tensor::from_matrix(norm.stddev)});
  file.blocks.push_back({"scaler.center", nn::Tensor::from_matrix(scaler.center)});
  file.blocks.push_back({"scaler.half_extent", nn::Tensor::from_matrix(scaler.half_extent)});
  header["norm_clamped"] = norm.clamped;
}

void get_scaling(const nn::WeightFile& file, data::NormStats& norm, data::LabelScaler& scaler,
                 Eigen::Index width) {
  norm.mean = file.find("norm.mean").to_matrix();
  norm.stddev = file.find("norm.stddev").to_matrix();
  if (norm.mean.size() != width || norm.stddev.size() != width) {
    throw CorruptFile("normalizer width does not match the architecture");
  }
  norm.clamped = file.header.value("norm_clamped", std::vector<int>{});
  const Mat c = file.find("scaler.center").to_matrix();
  const Mat h = file.find("scaler.half_extent").to_matrix();
  if (c.size() != 3 || h.size() != 3) throw CorruptFile("label scaler must have 3 entries");
  scaler.center = Eigen::Map<const Eigen::Vector3d>(c.data());
  scaler.half_extent = Eigen::Map<const Eigen::Vector3d>(h.data());
}

void put_params(nn::WeightFile& file, const std::vector<nn::Parameter>& params) {
  for (const auto& p : params) file.blocks.push_back({p.name, nn::Tensor::from_matrix(p.value)});
}

void get_params(const nn::WeightFile& file, std::vector<nn::Parameter>& params) {
  for (auto& p : params) {
    Mat v = file.find(p.name).to_matrix();
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
      throw CorruptFile("block '" + p.name + "' has the wrong shape");
    }
    p.value = std::move(v);
    p.zero_grad();
  }
}

nn::WeightFile open_kind(const std::filesystem::path& path, const std::string& kind) {
  nn::WeightFile file = nn::read_weight_file(path);
  const std::string found = file.header.value("kind", std::string{});
  if (found != kind) {
    throw ArchitectureMismatch(path.string() + " holds a '" + found + "' model, expected '" + kind + "'");
  }
  return file;
}

Mat normalized_steps(const data::NormStats& norm, const Eigen::MatrixXd& steps) {
  return ((steps.colwise() - norm.mean).array().colwise() / norm.stddev.array()).matrix();
}

}  // namespace

std::string to_string(InputMode mode) {
  switch (mode) {
    case InputMode::PosOnly: return "pos-only";
    case InputMode::Concat: return "concat";
    case InputMode::RawOnly: return "raw-only";
  }
  return "?";
}

InputMode parse_input_mode(const std::string& text) {
  if (text == "pos-only") return InputMode::PosOnly;
  if (text == "concat") return InputMode::Concat;
  if (text == "raw-only") return InputMode::RawOnly;
  throw InvalidArgument("unknown input mode '" + text + "' (pos-only, concat, raw-only)");
}

int input_width(InputMode mode, int n) {
  switch (mode) {
    case InputMode::PosOnly: return 3;
    case InputMode::Concat: return n + 3;
    case InputMode::RawOnly: return n;
  }
  return 0;
}

bool needs_gamma(InputMode mode) { return mode != InputMode::RawOnly; }

// ---------------------------------------------------------------------------
// Gamma

nlohmann::json GammaConfig::to_json() const { return {{"hidden", hidden}}; }

GammaConfig GammaConfig::from_json(const nlohmann::json& j) {
  GammaConfig c;
  c.hidden = j.at("hidden").get<std::vector<int>>();
  return c;
}

std::size_t gamma_param_count(int n, const GammaConfig& config) {
  std::size_t count = 0;
  int in = n;
  for (int h : config.hidden) {
    count += static_cast<std::size_t>(in) * h + h;
    in = h;
  }
  return count + static_cast<std::size_t>(in) * 3 + 3;
}

GammaNet::GammaNet(data::FeatureMask mask, GammaConfig config, std::uint64_t seed)
    : mask_(std::move(mask)), config_(std::move(config)) {
  if (mask_.empty()) throw InvalidArgument("Gamma needs a non-empty feature mask");
  for (int h : config_.hidden) {
    if (h < 1) throw InvalidArgument("hidden layer widths must be positive");
  }
  norm = identity_norm(mask_.size());
  Rng rng(seed);
  int in = mask_.size();
  std::vector<int> widths = config_.hidden;
  widths.push_back(3);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const std::string tag = "dense" + std::to_string(l);
    nn::Parameter w = make_param(tag + ".weight", widths[l], in);
    nn::glorot_uniform(w.value, in, widths[l], rng);
    params_.push_back(std::move(w));
    params_.push_back(make_param(tag + ".bias", widths[l], 1));
    in = widths[l];
  }
}

Mat GammaNet::forward(const Mat& z, Cache* cache) const {
  if (z.rows() != input_width()) throw ShapeMismatch("Gamma input width does not match its mask");
  const std::size_t layers = params_.size() / 2;
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Mat a = z;
  for (std::size_t l = 0; l < layers; ++l) {
    Mat y = nn::dense_forward(a, params_[2 * l].value, params_[2 * l + 1].value);
    if (cache) cache->inputs.push_back(std::move(a));
    if (l + 1 == layers) return y;
    a = nn::relu(y);
    if (cache) cache->pre.push_back(std::move(y));
  }
  return a;
}

Mat GammaNet::backward(const Mat& grad_out, const Cache& cache) {
  const std::size_t layers = params_.size() / 2;
  Mat g = grad_out;
  for (std::size_t l = layers; l-- > 0;) {
    if (l + 1 < layers) g = nn::relu_backward(g, cache.pre[l]);
    nn::DenseGrads d = nn::dense_backward(g, cache.inputs[l], params_[2 * l].value);
    params_[2 * l].grad += d.weight;
    params_[2 * l + 1].grad += d.bias;
    g = std::move(d.input);
  }
  return g;
}

Eigen::Vector3d GammaNet::predict(const Eigen::VectorXd& x) const {
  if (x.size() != input_width()) throw ShapeMismatch("Gamma input width does not match its mask");
  const Mat z = normalized_steps(norm, x);
  const Mat y = forward(z);
  return scaler.invert(Eigen::Vector3d(y.col(0)));
}

Eigen::Matrix3Xd GammaNet::predict_batch(const Eigen::MatrixXd& x) const {
  if (x.rows() != input_width()) throw ShapeMismatch("Gamma input width does not match its mask");
  return scaler.invert(Eigen::Matrix3Xd(forward(normalized_steps(norm, x))));
}

nn::ParamList GammaNet::parameters() {
  nn::ParamList out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::size_t GammaNet::param_count() const { return gamma_param_count(input_width(), config_); }

// ---------------------------------------------------------------------------
// LSTM-Pos

void LstmPosConfig::validate() const {
  if (rows < 1 || layers < 1 || hidden < 1 || window < 1 || head_hidden < 1) {
    throw InvalidArgument("LSTM-Pos sizes must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must lie in [0, 1)");
  if (kernel < 1 || kernel % 2 == 0) throw InvalidArgument("conv kernel length must be odd");
  for (int c : conv_channels) {
    if (c < 1) throw InvalidArgument("conv channel counts must be positive");
  }
}

nlohmann::json LstmPosConfig::to_json() const {
  return {{"mode", to_string(mode)},   {"rows", rows},
          {"layers", layers},          {"hidden", hidden},
          {"window", window},          {"dropout", dropout},
          {"conv_channels", conv_channels}, {"kernel", kernel},
          {"head_hidden", head_hidden}};
}

LstmPosConfig LstmPosConfig::from_json(const nlohmann::json& j) {
  LstmPosConfig c;
  c.mode = parse_input_mode(j.at("mode").get<std::string>());
  c.rows = j.at("rows").get<int>();
  c.layers = j.at("layers").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.window = j.at("window").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.conv_channels = j.at("conv_channels").get<std::vector<int>>();
  c.kernel = j.at("kernel").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.validate();
  return c;
}

std::size_t lstm_pos_param_count(int n, const LstmPosConfig& c) {
  const std::size_t m = static_cast<std::size_t>(c.hidden);
  const std::size_t d = static_cast<std::size_t>(input_width(c.mode, n));
  std::size_t count = 4 * m * (m + d) + 4 * m;
  count += static_cast<std::size_t>(c.layers - 1) * (4 * m * 2 * m + 4 * m);
  std::size_t in = 1;
  for (int ch : c.conv_channels) {
    count += static_cast<std::size_t>(ch) * in * static_cast<std::size_t>(c.kernel) + ch;
    in = static_cast<std::size_t>(ch);
  }
  const std::size_t h = static_cast<std::size_t>(c.head_hidden);
  count += h * in * m + h;
  count += 3 * h + 3;
  return count;
}

LstmPosNet::LstmPosNet(data::FeatureMask mask, LstmPosConfig config, std::uint64_t seed)
    : mask_(std::move(mask)), config_(std::move(config)) {
  config_.validate();
  if (config_.mode != InputMode::PosOnly && mask_.empty()) {
    throw InvalidArgument("raw inputs need a non-empty feature mask");
  }
  const int m = config_.hidden;
  norm = identity_norm(step_width());
  Rng rng(seed);
  for (int l = 0; l < config_.layers; ++l) {
    const std::string tag = "lstm" + std::to_string(l);
    nn::Parameter w = make_param(tag + ".weight", 4 * m, m + (l == 0 ? step_width() : m));
    nn::Parameter b = make_param(tag + ".bias", 4 * m, 1);
    nn::init_lstm(w.value, b.value, l == 0 ? step_width() : m, m, rng);
    lstm_.push_back(std::move(w));
    lstm_.push_back(std::move(b));
  }
  int in = 1;
  for (std::size_t l = 0; l < config_.conv_channels.size(); ++l) {
    const int out = config_.conv_channels[l];
    const std::string tag = "conv" + std::to_string(l);
    nn::Parameter k = make_param(tag + ".kernel", out, in * config_.kernel);
    nn::glorot_uniform(k.value, in * config_.kernel, out * config_.kernel, rng);
    conv_.push_back(std::move(k));
    conv_.push_back(make_param(tag + ".bias", out, 1));
    in = out;
  }
  const int flat = in * m;
  nn::Parameter w0 = make_param("head0.weight", config_.head_hidden, flat);
  nn::glorot_uniform(w0.value, flat, config_.head_hidden, rng);
  nn::Parameter w1 = make_param("head1.weight", 3, config_.head_hidden);
  nn::glorot_uniform(w1.value, config_.head_hidden, 3, rng);
  head_.push_back(std::move(w0));
  head_.push_back(make_param("head0.bias", config_.head_hidden, 1));
  head_.push_back(std::move(w1));
  head_.push_back(make_param("head1.bias", 3, 1));
}

Mat LstmPosNet::forward(const std::vector<Mat>& zs, bool training, std::uint64_t dropout_seed,
                        Cache* cache) const {
  const int H = config_.window;
  const int m = config_.hidden;
  if (static_cast<int>(zs.size()) != H) {
    throw ShapeMismatch("window has " + std::to_string(zs.size()) + " steps, expected " + std::to_string(H));
  }
  const Eigen::Index B = zs.front().cols();
  for (const auto& z : zs) {
    if (z.rows() != step_width() || z.cols() != B) throw ShapeMismatch("window step has the wrong shape");
  }
  const int a = training ? config_.rows : 1;
  const bool drop = training && config_.dropout > 0.0;
  Rng rng(dropout_seed);

  Cache local;
  Cache& c = cache ? *cache : local;
  c = Cache{};
  c.rows = a;
  c.batch = B;

  // The first layer sees the same input in every row, so it runs once.
  std::vector<Mat> cur;
  for (int l = 0; l < config_.layers; ++l) {
    nn::LstmSequence seq = nn::lstm_forward(l == 0 ? zs : cur, lstm_[2 * l].value, lstm_[2 * l + 1].value);
    if (cache && l > 0) c.layer_in.push_back(std::move(cur));
    else if (cache) c.layer_in.emplace_back();
    cur.assign(static_cast<std::size_t>(H), Mat());
    std::vector<Mat> masks(static_cast<std::size_t>(H));
    for (int t = 0; t < H; ++t) {
      Mat h = l == 0 ? tile_columns(seq.hidden[static_cast<std::size_t>(t)], a)
                     : seq.hidden[static_cast<std::size_t>(t)];
      if (drop) {
        masks[static_cast<std::size_t>(t)] = nn::dropout_mask(m, a * B, config_.dropout, rng);
        h = h.cwiseProduct(masks[static_cast<std::size_t>(t)]);
      }
      cur[static_cast<std::size_t>(t)] = std::move(h);
    }
    if (cache) {
      c.lstm.push_back(std::move(seq));
      c.masks.push_back(std::move(masks));
    }
  }

  // Each row's last hidden state is a one-channel signal of length m.
  const Mat& last = cur.back();
  Mat x = Eigen::Map<const Mat>(last.data(), 1, m * a * B);
  for (std::size_t l = 0; l < config_.conv_channels.size(); ++l) {
    Mat pre = nn::conv1d_forward(x, m, conv_[2 * l].value, conv_[2 * l + 1].value, config_.kernel);
    if (cache) c.conv_in.push_back(std::move(x));
    x = nn::relu(pre);
    if (cache) c.conv_pre.push_back(std::move(pre));
  }
  const Eigen::Index span = static_cast<Eigen::Index>(m) * B;
  Mat avg = x.leftCols(span);
  for (int r = 1; r < a; ++r) avg += x.middleCols(r * span, span);
  if (a > 1) avg /= static_cast<double>(a);

  const Eigen::Index flat_rows = avg.rows() * m;
  c.flat = Eigen::Map<const Mat>(avg.data(), flat_rows, B);
  c.head_pre = nn::dense_forward(c.flat, head_[0].value, head_[1].value);
  c.head_act = nn::relu(c.head_pre);
  return nn::dense_forward(c.head_act, head_[2].value, head_[3].value);
}

std::vector<Mat> LstmPosNet::backward(const Mat& grad_out, const Cache& c) {
  const int H = config_.window;
  const int m = config_.hidden;
  const int a = c.rows;
  const Eigen::Index B = c.batch;

  nn::DenseGrads d1 = nn::dense_backward(grad_out, c.head_act, head_[2].value);
  head_[2].grad += d1.weight;
  head_[3].grad += d1.bias;
  nn::DenseGrads d0 = nn::dense_backward(nn::relu_backward(d1.input, c.head_pre), c.flat, head_[0].value);
  head_[0].grad += d0.weight;
  head_[1].grad += d0.bias;

  const Eigen::Index channels = d0.input.rows() / m;
  const Eigen::Index span = static_cast<Eigen::Index>(m) * B;
  Mat g_avg = Eigen::Map<const Mat>(d0.input.data(), channels, span);
  if (a > 1) g_avg /= static_cast<double>(a);
  Mat g = tile_columns(g_avg, a);
  for (std::size_t l = config_.conv_channels.size(); l-- > 0;) {
    g = nn::relu_backward(g, c.conv_pre[l]);
    nn::Conv1dGrads cg = nn::conv1d_backward(g, c.conv_in[l], m, conv_[2 * l].value, config_.kernel);
    conv_[2 * l].grad += cg.kernel;
    conv_[2 * l + 1].grad += cg.bias;
    g = std::move(cg.input);
  }

  // Gradient w.r.t. each layer's (dropped-out) output sequence; only the last step is read.
  std::vector<Mat> gh(static_cast<std::size_t>(H));
  gh.back() = Eigen::Map<const Mat>(g.data(), m, a * B);
  std::vector<Mat> input_grads;
  for (int l = config_.layers; l-- > 0;) {
    const auto& masks = c.masks[static_cast<std::size_t>(l)];
    for (std::size_t t = 0; t < gh.size(); ++t) {
      if (gh[t].size() == 0) continue;
      if (masks[t].size() != 0) gh[t] = gh[t].cwiseProduct(masks[t]);
      if (l == 0 && a > 1) {
        Mat sum = gh[t].leftCols(B);
        for (int r = 1; r < a; ++r) sum += gh[t].middleCols(r * B, B);
        gh[t] = std::move(sum);
      }
    }
    nn::LstmGrads lg = nn::lstm_bptt(gh, c.lstm[static_cast<std::size_t>(l)].caches, lstm_[2 * l].value);
    lstm_[2 * l].grad += lg.weight;
    lstm_[2 * l + 1].grad += lg.bias;
    if (l == 0) input_grads = std::move(lg.inputs);
    else gh = std::move(lg.inputs);
  }
  return input_grads;
}

Eigen::Vector3d LstmPosNet::predict(const Eigen::MatrixXd& steps) const {
  if (steps.rows() != step_width() || steps.cols() != config_.window) {
    throw ShapeMismatch("window must be " + std::to_string(step_width()) + " x " +
                        std::to_string(config_.window));
  }
  const Mat z = normalized_steps(norm, steps);
  std::vector<Mat> zs(static_cast<std::size_t>(config_.window));
  for (int t = 0; t < config_.window; ++t) zs[static_cast<std::size_t>(t)] = z.col(t);
  const Mat y = forward(zs, false, 0);
  return scaler.invert(Eigen::Vector3d(y.col(0)));
}

// A column-batched GEMM rounds differently from the single-column product, so
// batches reuse the per-window path to keep results bit-identical to streaming.
std::vector<Eigen::Vector3d> LstmPosNet::predict_batch(const std::vector<Eigen::MatrixXd>& windows) const {
  std::vector<Eigen::Vector3d> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(predict(w));
  return out;
}

nn::ParamList LstmPosNet::parameters() {
  nn::ParamList out;
  for (auto* group : {&lstm_, &conv_, &head_}) {
    for (auto& p : *group) out.push_back(&p);
  }
  return out;
}

std::size_t LstmPosNet::param_count() const { return lstm_pos_param_count(mask_.size(), config_); }

// ---------------------------------------------------------------------------

Eigen::VectorXd build_lstm_pos_step(const Eigen::VectorXd& state, InputMode mode, const GammaNet* gamma) {
  if (mode == InputMode::RawOnly) return state;
  if (!gamma) throw InvalidArgument(to_string(mode) + " input needs a trained Gamma");
  if (state.size() != gamma->input_width()) throw InvalidArgument("state width does not match Gamma's mask");
  const Eigen::Vector3d p = gamma->predict(state);
  if (mode == InputMode::PosOnly) return p;
  Eigen::VectorXd out(state.size() + 3);
  out << state, p;
  return out;
}

Eigen::MatrixXd build_lstm_pos_input(const Eigen::MatrixXd& states, InputMode mode, const GammaNet* gamma) {
  Eigen::MatrixXd out(input_width(mode, static_cast<int>(states.rows())), states.cols());
  for (Eigen::Index k = 0; k < states.cols(); ++k) {
    out.col(k) = build_lstm_pos_step(states.col(k), mode, gamma);
  }
  return out;
}

// ---------------------------------------------------------------------------

void save_model(const GammaNet& net, const std::filesystem::path& path) {
  nn::WeightFile file;
  file.header = {{"kind", kGammaKind}, {"architecture", net.config().to_json()}, {"mask", mask_json(net.mask())}};
  put_params(file, net.layers());
  put_scaling(file, file.header, net.norm, net.scaler);
  nn::write_weight_file(path, file);
}

GammaNet load_gamma(const std::filesystem::path& path) {
  const nn::WeightFile file = open_kind(path, kGammaKind);
  GammaNet net;
  try {
    net = GammaNet(json_mask(file.header.at("mask")), GammaConfig::from_json(file.header.at("architecture")), 0);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(path.string() + ": bad architecture header (" + e.what() + ")");
  }
  get_params(file, net.layers());
  get_scaling(file, net.norm, net.scaler, net.input_width());
  return net;
}

void save_model(const LstmPosNet& net, const std::filesystem::path& path) {
  nn::WeightFile file;
  file.header = {{"kind", kLstmPosKind}, {"architecture", net.config().to_json()}, {"mask", mask_json(net.mask())}};
  auto& mut = const_cast<LstmPosNet&>(net);
  for (auto* p : mut.parameters()) file.blocks.push_back({p->name, nn::Tensor::from_matrix(p->value)});
  put_scaling(file, file.header, net.norm, net.scaler);
  nn::write_weight_file(path, file);
}

LstmPosNet load_lstm_pos(const std::filesystem::path& path) {
  const nn::WeightFile file = open_kind(path, kLstmPosKind);
  LstmPosNet net;
  try {
    net = LstmPosNet(json_mask(file.header.at("mask")), LstmPosConfig::from_json(file.header.at("architecture")), 0);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(path.string() + ": bad architecture header (" + e.what() + ")");
  }
  for (auto* p : net.parameters()) {
    Mat v = file.find(p->name).to_matrix();
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols()) {
      throw CorruptFile("block '" + p->name + "' has the wrong shape");
    }
    p->value = std::move(v);
    p->zero_grad();
  }
  get_scaling(file, net.norm, net.scaler, net.step_width());
  return net;
}

std::uint64_t weights_checksum(const std::vector<nn::Parameter>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(p.value.size()) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace reach::models
