#include "reach/nn_core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "reach/errors.hpp"

namespace reach::nn {
namespace {

Mat sigmoid(const Mat& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeMismatch(what);
}

// im2col for "same" padding: rows c * k + j, columns follow x.
Mat im2col(const Mat& x, int length, int ksize) {
  const Eigen::Index channels = x.rows();
  const Eigen::Index total = x.cols();
  const Eigen::Index signals = total / length;
  const int half = ksize / 2;
  Mat cols = Mat::Zero(channels * ksize, total);
  for (Eigen::Index s = 0; s < signals; ++s) {
    const Eigen::Index base = s * length;
    for (int j = 0; j < ksize; ++j) {
      const int shift = j - half;
      const int lo = std::max(0, -shift);
      const int hi = std::min(length, length - shift);
      if (hi <= lo) continue;
      for (Eigen::Index c = 0; c < channels; ++c) {
        cols.block(c * ksize + j, base + lo, 1, hi - lo) = x.block(c, base + lo + shift, 1, hi - lo);
      }
    }
  }
  return cols;
}

Mat col2im(const Mat& cols, Eigen::Index channels, int length, int ksize) {
  const Eigen::Index total = cols.cols();
  const Eigen::Index signals = total / length;
  const int half = ksize / 2;
  Mat x = Mat::Zero(channels, total);
  for (Eigen::Index s = 0; s < signals; ++s) {
    const Eigen::Index base = s * length;
    for (int j = 0; j < ksize; ++j) {
      const int shift = j - half;
      const int lo = std::max(0, -shift);
      const int hi = std::min(length, length - shift);
      if (hi <= lo) continue;
      for (Eigen::Index c = 0; c < channels; ++c) {
        x.block(c, base + lo + shift, 1, hi - lo) += cols.block(c * ksize + j, base + lo, 1, hi - lo);
      }
    }
  }
  return x;
}

// --- weight file byte helpers (little-endian on disk) ---

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  double f64() { return std::bit_cast<double>(u(8)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CorruptFile("weight file is truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'R', 'C', 'H', 'W'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

// ---------------------------------------------------------------------------

std::size_t Tensor::count() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor Tensor::from_matrix(const Mat& m) {
  Tensor t;
  t.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
  t.values.resize(t.count());
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.values[k++] = m(r, c);
  return t;
}

Mat Tensor::to_matrix() const {
  if (shape.empty() || shape.size() > 3 || values.size() != count()) {
    throw CorruptFile("tensor shape does not match its data");
  }
  const auto rows = static_cast<Eigen::Index>(shape[0]);
  const auto cols = static_cast<Eigen::Index>(count() / std::max<std::size_t>(shape[0], 1));
  Mat m(rows, shape.size() == 1 ? 1 : cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = values[k++];
  return m;
}

void zero_grads(const ParamList& params) {
  for (auto* p : params) p->zero_grad();
}

std::size_t count_values(const ParamList& params) {
  std::size_t n = 0;
  for (auto* p : params) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void glorot_uniform(Mat& m, double fan_in, double fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
}

// ---------------------------------------------------------------------------

Mat dense_forward(const Mat& x, const Mat& weight, const Mat& bias) {
  require(x.rows() == weight.cols(), "dense input width does not match weight");
  require(bias.rows() == weight.rows() && bias.cols() == 1, "dense bias shape mismatch");
  Mat y = weight * x;
  y.colwise() += bias.col(0);
  return y;
}

DenseGrads dense_backward(const Mat& grad_y, const Mat& x, const Mat& weight) {
  require(grad_y.rows() == weight.rows() && grad_y.cols() == x.cols(),
          "dense output gradient shape mismatch");
  DenseGrads g;
  g.weight = grad_y * x.transpose();
  g.bias = grad_y.rowwise().sum();
  g.input = weight.transpose() * grad_y;
  return g;
}

Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

Mat relu_backward(const Mat& grad_y, const Mat& pre) {
  return (pre.array() > 0.0).select(grad_y, 0.0);
}

// ---------------------------------------------------------------------------

LstmParams::LstmParams(int input_size, int hidden_size)
    : input(input_size),
      hidden(hidden_size),
      weight(Mat::Zero(4 * hidden_size, hidden_size + input_size)),
      bias(Mat::Zero(4 * hidden_size, 1)) {}

void init_lstm(Mat& weight, Mat& bias, int input, int hidden, Rng& rng) {
  weight.resize(4 * hidden, hidden + input);
  glorot_uniform(weight, hidden + input, hidden, rng);
  bias = Mat::Zero(4 * hidden, 1);
  bias.middleRows(hidden, hidden).setOnes();
}

LstmStep lstm_cell_step(const Mat& x, const Mat& h_prev, const Mat& c_prev, const Mat& weight,
                        const Mat& bias) {
  const Eigen::Index m = h_prev.rows();
  require(weight.rows() == 4 * m && weight.cols() == m + x.rows(), "LSTM weight shape mismatch");
  require(bias.rows() == 4 * m, "LSTM bias shape mismatch");
  require(c_prev.rows() == m && c_prev.cols() == x.cols() && h_prev.cols() == x.cols(),
          "LSTM state shape mismatch");
  LstmStep step;
  auto& cache = step.cache;
  cache.concat.resize(m + x.rows(), x.cols());
  cache.concat.topRows(m) = h_prev;
  cache.concat.bottomRows(x.rows()) = x;
  Mat z = weight * cache.concat;
  z.colwise() += bias.col(0);
  cache.i = sigmoid(z.middleRows(0, m));
  cache.f = sigmoid(z.middleRows(m, m));
  cache.o = sigmoid(z.middleRows(2 * m, m));
  cache.g = z.middleRows(3 * m, m).array().tanh().matrix();
  cache.c_prev = c_prev;
  step.c = cache.f.cwiseProduct(c_prev) + cache.i.cwiseProduct(cache.g);
  cache.tanh_c = step.c.array().tanh().matrix();
  step.h = cache.tanh_c.cwiseProduct(cache.o);
  return step;
}

LstmSequence lstm_forward(const std::vector<Mat>& xs, const Mat& weight, const Mat& bias) {
  if (xs.empty()) throw InvalidArgument("LSTM sequence is empty");
  const Eigen::Index m = weight.rows() / 4;
  const Eigen::Index batch = xs.front().cols();
  LstmSequence seq;
  seq.hidden.reserve(xs.size());
  seq.caches.reserve(xs.size());
  Mat h = Mat::Zero(m, batch);
  Mat c = Mat::Zero(m, batch);
  for (const auto& x : xs) {
    LstmStep step = lstm_cell_step(x, h, c, weight, bias);
    h = step.h;
    c = std::move(step.c);
    seq.hidden.push_back(std::move(step.h));
    seq.caches.push_back(std::move(step.cache));
  }
  return seq;
}

LstmGrads lstm_bptt(const std::vector<Mat>& grad_hidden, const std::vector<LstmStepCache>& caches,
                    const Mat& weight) {
  require(grad_hidden.size() == caches.size(), "BPTT gradient count does not match sequence");
  const Eigen::Index m = weight.rows() / 4;
  const Eigen::Index batch = caches.front().i.cols();
  const Eigen::Index input = weight.cols() - m;
  LstmGrads g;
  g.weight = Mat::Zero(weight.rows(), weight.cols());
  g.bias = Mat::Zero(weight.rows(), 1);
  g.inputs.resize(caches.size());
  Mat dh_next = Mat::Zero(m, batch);
  Mat dc_next = Mat::Zero(m, batch);
  Mat dz(4 * m, batch);
  for (std::size_t t = caches.size(); t-- > 0;) {
    const auto& k = caches[t];
    Mat dh = dh_next;
    if (grad_hidden[t].size() != 0) {
      require(grad_hidden[t].rows() == m && grad_hidden[t].cols() == batch,
              "BPTT hidden gradient shape mismatch");
      dh += grad_hidden[t];
    }
    const auto tc = k.tanh_c.array();
    const Mat dc = dc_next + (dh.array() * k.o.array() * (1.0 - tc.square())).matrix();
    dz.middleRows(0, m) = (dc.array() * k.g.array() * k.i.array() * (1.0 - k.i.array())).matrix();
    dz.middleRows(m, m) =
        (dc.array() * k.c_prev.array() * k.f.array() * (1.0 - k.f.array())).matrix();
    dz.middleRows(2 * m, m) = (dh.array() * tc * k.o.array() * (1.0 - k.o.array())).matrix();
    dz.middleRows(3 * m, m) = (dc.array() * k.i.array() * (1.0 - k.g.array().square())).matrix();
    g.weight.noalias() += dz * k.concat.transpose();
    g.bias += dz.rowwise().sum();
    const Mat dconcat = weight.transpose() * dz;
    dh_next = dconcat.topRows(m);
    dc_next = dc.cwiseProduct(k.f);
    g.inputs[t] = dconcat.bottomRows(input);
  }
  return g;
}

// ---------------------------------------------------------------------------

Mat conv1d_forward(const Mat& x, int length, const Mat& kernel, const Mat& bias, int ksize) {
  require(ksize % 2 == 1, "convolution kernel length must be odd");
  require(length > 0 && x.cols() % length == 0, "convolution input is not a whole number of signals");
  require(kernel.cols() == x.rows() * ksize, "convolution kernel does not match input channels");
  require(bias.rows() == kernel.rows() && bias.cols() == 1, "convolution bias shape mismatch");
  Mat y = kernel * im2col(x, length, ksize);
  y.colwise() += bias.col(0);
  return y;
}

Conv1dGrads conv1d_backward(const Mat& grad_y, const Mat& x, int length, const Mat& kernel, int ksize) {
  require(grad_y.rows() == kernel.rows() && grad_y.cols() == x.cols(),
          "convolution output gradient shape mismatch");
  const Mat cols = im2col(x, length, ksize);
  Conv1dGrads g;
  g.kernel = grad_y * cols.transpose();
  g.bias = grad_y.rowwise().sum();
  g.input = col2im(kernel.transpose() * grad_y, x.rows(), length, ksize);
  return g;
}

// ---------------------------------------------------------------------------

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return Mat::Ones(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mat mask(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) mask(r, c) = u(rng) < rate ? 0.0 : keep;
  return mask;
}

DropoutResult dropout(const Mat& x, double rate, std::uint64_t seed, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout rate must lie in [0, 1)");
  if (!training) return {x, Mat::Ones(x.rows(), x.cols())};
  Rng rng(seed);
  DropoutResult r;
  r.mask = dropout_mask(x.rows(), x.cols(), rate, rng);
  r.y = x.cwiseProduct(r.mask);
  return r;
}

// ---------------------------------------------------------------------------

LossResult rmse_loss(const Mat& pred, const Mat& label) {
  require(pred.rows() == label.rows() && pred.cols() == label.cols(), "loss shape mismatch");
  if (pred.size() == 0) throw InvalidArgument("loss over an empty batch");
  const Mat diff = pred - label;
  const double count = static_cast<double>(diff.size());
  LossResult r;
  r.loss = std::sqrt(diff.squaredNorm() / count);
  r.grad = r.loss == 0.0 ? Mat::Zero(diff.rows(), diff.cols()) : Mat(diff / (count * r.loss));
  return r;
}

// ---------------------------------------------------------------------------

AdamState make_adam_state(const ParamList& params, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  for (auto* p : params) {
    s.m.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    s.v.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
  return s;
}

void adam_step(const ParamList& params, AdamState& state) {
  require(params.size() == state.m.size(), "Adam state does not match parameter list");
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    require(p.grad.rows() == p.value.rows() && p.grad.cols() == p.value.cols() &&
                state.m[k].rows() == p.value.rows() && state.m[k].cols() == p.value.cols(),
            "Adam shape mismatch for " + p.name);
    state.m[k] = c.beta1 * state.m[k] + (1.0 - c.beta1) * p.grad;
    state.v[k] = c.beta2 * state.v[k] + (1.0 - c.beta2) * p.grad.cwiseAbs2();
    const auto m_hat = state.m[k].array() / correct1;
    const auto v_hat = state.v[k].array() / correct2;
    p.value.array() -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
  }
}

double clip_grad_norm(const ParamList& params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto* p : params) p->grad *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const std::function<double()>& loss, Mat& value, const Mat& analytic,
                           double eps, const std::string& name) {
  require(value.rows() == analytic.rows() && value.cols() == analytic.cols(),
          "gradient check shape mismatch for " + name);
  GradCheckResult r;
  for (Eigen::Index i = 0; i < value.size(); ++i) {
    double& v = value.data()[i];
    const double saved = v;
    v = saved + eps;
    const double up = loss();
    v = saved - eps;
    const double down = loss();
    v = saved;
    const double err = relative_error(analytic.data()[i], (up - down) / (2.0 * eps));
    ++r.checked;
    if (err > r.max_relative_error) {
      r.max_relative_error = err;
      r.worst = name + "[" + std::to_string(i) + "]";
    }
  }
  return r;
}

GradCheckResult grad_check(const std::function<double()>& loss, const ParamList& params, double eps) {
  GradCheckResult total;
  for (auto* p : params) {
    const Mat analytic = p->grad;
    const GradCheckResult r = grad_check(loss, p->value, analytic, eps, p->name);
    total.checked += r.checked;
    if (r.max_relative_error > total.max_relative_error || total.worst.empty()) {
      if (r.max_relative_error >= total.max_relative_error) {
        total.max_relative_error = r.max_relative_error;
        total.worst = r.worst;
      }
    }
  }
  return total;
}

// ---------------------------------------------------------------------------

const Tensor& WeightFile::find(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return b.tensor;
  }
  throw CorruptFile("weight file has no block '" + name + "'");
}

void write_weight_file(const std::filesystem::path& path, const WeightFile& file) {
  std::string bytes(kMagic, kMagic + 4);
  put_u32(bytes, kVersion);
  const std::string header = file.header.dump();
  put_u64(bytes, header.size());
  bytes += header;
  put_u32(bytes, static_cast<std::uint32_t>(file.blocks.size()));
  for (const auto& b : file.blocks) {
    if (b.tensor.shape.empty() || b.tensor.shape.size() > 3 || b.tensor.values.size() != b.tensor.count()) {
      throw InvalidArgument("tensor '" + b.name + "' has an invalid shape");
    }
    put_u32(bytes, static_cast<std::uint32_t>(b.name.size()));
    bytes += b.name;
    put_u32(bytes, static_cast<std::uint32_t>(b.tensor.shape.size()));
    for (auto d : b.tensor.shape) put_u64(bytes, d);
    for (double v : b.tensor.values) put_f64(bytes, v);
  }
  put_u64(bytes, fnv1a(bytes.data(), bytes.size()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

WeightFile read_weight_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 + 4 + 8 + 4 + 8) throw CorruptFile(path.string() + " is truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CorruptFile(path.string() + " is not a weight file");
  Reader r(bytes);
  r.str(4);
  if (r.u(4) != kVersion) throw CorruptFile(path.string() + " has an unsupported version");
  const std::size_t body = bytes.size() - 8;
  {
    Reader tail(bytes);
    tail.str(body);
    if (tail.u(8) != fnv1a(bytes.data(), body)) throw CorruptFile(path.string() + " checksum mismatch");
  }
  WeightFile file;
  const auto header_len = r.u(8);
  if (header_len > body) throw CorruptFile("weight file header is truncated");
  try {
    file.header = nlohmann::json::parse(r.str(header_len));
  } catch (const nlohmann::json::parse_error&) {
    throw CorruptFile(path.string() + " has an unreadable header");
  }
  const auto blocks = r.u(4);
  for (std::uint64_t b = 0; b < blocks; ++b) {
    NamedTensor nt;
    nt.name = r.str(r.u(4));
    const auto rank = r.u(4);
    if (rank == 0 || rank > 3) throw CorruptFile("tensor '" + nt.name + "' has invalid rank");
    for (std::uint64_t d = 0; d < rank; ++d) nt.tensor.shape.push_back(r.u(8));
    const std::size_t n = nt.tensor.count();
    if (n > (body - r.pos()) / 8) throw CorruptFile("weight file is truncated");
    nt.tensor.values.resize(n);
    for (auto& v : nt.tensor.values) v = r.f64();
    file.blocks.push_back(std::move(nt));
  }
  if (r.pos() != body) throw CorruptFile(path.string() + " has trailing bytes");
  return file;
}

}  // namespace reach::nn
