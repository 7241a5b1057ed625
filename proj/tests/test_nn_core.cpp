#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "reach/errors.hpp"
#include "reach/nn_core.hpp"

using namespace reach;
using namespace reach::nn;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Scalar reference cell, written from the gate equations with plain loops.
void scalar_cell(const std::vector<double>& x, const std::vector<double>& h_prev,
                 const std::vector<double>& c_prev, const Mat& W, const Mat& b,
                 std::vector<double>& h, std::vector<double>& c) {
  const std::size_t m = h_prev.size();
  std::vector<double> in = h_prev;
  in.insert(in.end(), x.begin(), x.end());
  auto gate = [&](std::size_t block, std::size_t j) {
    double s = b(static_cast<Eigen::Index>(block * m + j), 0);
    for (std::size_t k = 0; k < in.size(); ++k) {
      s += W(static_cast<Eigen::Index>(block * m + j), static_cast<Eigen::Index>(k)) * in[k];
    }
    return s;
  };
  h.assign(m, 0.0);
  c.assign(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    const double i = 1.0 / (1.0 + std::exp(-gate(0, j)));
    const double f = 1.0 / (1.0 + std::exp(-gate(1, j)));
    const double o = 1.0 / (1.0 + std::exp(-gate(2, j)));
    const double g = std::tanh(gate(3, j));
    c[j] = f * c_prev[j] + i * g;
    h[j] = std::tanh(c[j]) * o;
  }
}

std::vector<double> col(const Mat& m) { return std::vector<double>(m.data(), m.data() + m.size()); }

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("reach_nn_" + name);
}

}  // namespace

TEST_CASE("dense: identity and bias") {
  Rng rng(1);
  const Mat x = random_mat(4, 3, rng);
  CHECK(dense_forward(x, Mat::Identity(4, 4), Mat::Zero(4, 1)) == x);
  const Mat b = random_mat(5, 1, rng);
  const Mat y = dense_forward(Mat::Zero(2, 1), random_mat(5, 2, rng), b);
  CHECK(y == b);
  CHECK_THROWS_AS(dense_forward(x, Mat::Identity(3, 3), Mat::Zero(3, 1)), ShapeMismatch);
}

TEST_CASE("dense: gradients match finite differences") {
  Rng rng(2);
  Parameter W("W", random_mat(4, 5, rng)), b("b", random_mat(4, 1, rng));
  Mat x = random_mat(5, 3, rng);
  const Mat label = random_mat(4, 3, rng);
  auto loss = [&] { return rmse_loss(dense_forward(x, W.value, b.value), label).loss; };
  const LossResult l = rmse_loss(dense_forward(x, W.value, b.value), label);
  const DenseGrads g = dense_backward(l.grad, x, W.value);
  W.grad = g.weight;
  b.grad = g.bias;
  CHECK(grad_check(loss, {&W, &b}).max_relative_error < 1e-6);
  CHECK(grad_check(loss, x, g.input).max_relative_error < 1e-6);
}

TEST_CASE("relu backward masks by pre-activation") {
  Mat pre(1, 3);
  pre << -1.0, 0.5, 2.0;
  const Mat g = relu_backward(Mat::Ones(1, 3), pre);
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == 1.0);
  CHECK(relu(pre)(0, 0) == 0.0);
}

TEST_CASE("lstm cell: zero parameters") {
  const int m = 4, d = 3;
  const Mat W = Mat::Zero(4 * m, m + d), b = Mat::Zero(4 * m, 1);
  LstmStep s = lstm_cell_step(Mat::Zero(d, 1), Mat::Zero(m, 1), Mat::Ones(m, 1), W, b);
  for (int j = 0; j < m; ++j) {
    CHECK(s.c(j, 0) == doctest::Approx(0.5));
    CHECK(s.h(j, 0) == doctest::Approx(0.2310585).epsilon(1e-7));
  }
  LstmStep z = lstm_cell_step(Mat::Zero(d, 1), Mat::Zero(m, 1), Mat::Zero(m, 1), W, b);
  CHECK(z.h.isZero(0.0));
  CHECK(z.c.isZero(0.0));
}

TEST_CASE("lstm cell: vectorized step agrees with the scalar reference") {
  Rng rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 1 + trial % 7, d = 1 + trial % 5;
    const Mat W = random_mat(4 * m, m + d, rng, 1.5), b = random_mat(4 * m, 1, rng);
    const Mat x = random_mat(d, 1, rng, 2.0), h = random_mat(m, 1, rng), c = random_mat(m, 1, rng, 2.0);
    const LstmStep s = lstm_cell_step(x, h, c, W, b);
    std::vector<double> rh, rc;
    scalar_cell(col(x), col(h), col(c), W, b, rh, rc);
    for (int j = 0; j < m; ++j) {
      worst = std::max({worst, std::abs(s.h(j, 0) - rh[static_cast<std::size_t>(j)]),
                        std::abs(s.c(j, 0) - rc[static_cast<std::size_t>(j)])});
    }
    // gates and candidate stay in range
    CHECK((s.cache.i.array() > 0.0).all());
    CHECK((s.cache.f.array() < 1.0).all());
    CHECK((s.h.array().abs() < 1.0).all());
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("lstm forward: length one equals a single step") {
  Rng rng(4);
  const Mat W = random_mat(12, 5, rng), b = random_mat(12, 1, rng), x = random_mat(2, 3, rng);
  const LstmSequence seq = lstm_forward({x}, W, b);
  const LstmStep s = lstm_cell_step(x, Mat::Zero(3, 3), Mat::Zero(3, 3), W, b);
  CHECK(seq.hidden.size() == 1);
  CHECK(seq.hidden[0] == s.h);
  CHECK_THROWS_AS(lstm_forward({}, W, b), InvalidArgument);
}

TEST_CASE("lstm forward: zero parameters give the zero chain") {
  const Mat W = Mat::Zero(8, 5), b = Mat::Zero(8, 1);
  Rng rng(5);
  std::vector<Mat> xs;
  for (int t = 0; t < 4; ++t) xs.push_back(random_mat(3, 1, rng));
  const LstmSequence seq = lstm_forward(xs, W, b);
  // c(t) = 0.5 c(t-1) + 0.5 * 0 stays zero from a zero start
  for (const auto& h : seq.hidden) CHECK(h.isZero(0.0));
}

TEST_CASE("lstm bptt: unrolled gradient check") {
  Rng rng(6);
  const int H = 5, m = 4, d = 3, B = 2;
  Parameter W("W", random_mat(4 * m, m + d, rng)), b("b", random_mat(4 * m, 1, rng));
  std::vector<Mat> xs;
  for (int t = 0; t < H; ++t) xs.push_back(random_mat(d, B, rng));
  std::vector<Mat> labels;
  for (int t = 0; t < H; ++t) labels.push_back(random_mat(m, B, rng, 0.5));
  auto loss_of = [&](const LstmSequence& seq, std::vector<Mat>* grads) {
    double total = 0.0;
    for (int t = 0; t < H; ++t) {
      const LossResult l = rmse_loss(seq.hidden[static_cast<std::size_t>(t)], labels[static_cast<std::size_t>(t)]);
      total += l.loss;
      if (grads) grads->push_back(l.grad);
    }
    return total;
  };
  std::vector<Mat> gh;
  const LstmSequence seq = lstm_forward(xs, W.value, b.value);
  loss_of(seq, &gh);
  const LstmGrads g = lstm_bptt(gh, seq.caches, W.value);
  W.grad = g.weight;
  b.grad = g.bias;
  auto loss = [&] { return loss_of(lstm_forward(xs, W.value, b.value), nullptr); };
  CHECK(grad_check(loss, {&W, &b}).max_relative_error < 1e-5);
  for (int t = 0; t < H; ++t) {
    CHECK(grad_check(loss, xs[static_cast<std::size_t>(t)], g.inputs[static_cast<std::size_t>(t)]).max_relative_error < 1e-5);
  }
}

TEST_CASE("lstm bptt: output gradient only at the last step") {
  Rng rng(7);
  Parameter W("W", random_mat(12, 5, rng)), b("b", random_mat(12, 1, rng));
  std::vector<Mat> xs;
  for (int t = 0; t < 6; ++t) xs.push_back(random_mat(2, 1, rng));
  const Mat label = random_mat(3, 1, rng);
  const LstmSequence seq = lstm_forward(xs, W.value, b.value);
  std::vector<Mat> gh(6);
  gh.back() = rmse_loss(seq.hidden.back(), label).grad;
  const LstmGrads g = lstm_bptt(gh, seq.caches, W.value);
  W.grad = g.weight;
  b.grad = g.bias;
  auto loss = [&] { return rmse_loss(lstm_forward(xs, W.value, b.value).hidden.back(), label).loss; };
  CHECK(grad_check(loss, {&W, &b}).max_relative_error < 1e-5);
}

TEST_CASE("conv1d: identity kernel and hand convolution") {
  Mat x(1, 3);
  x << 1, 2, 3;
  Mat id(1, 3);
  id << 0, 1, 0;
  CHECK(conv1d_forward(x, 3, id, Mat::Zero(1, 1), 3) == x);
  const Mat y = conv1d_forward(x, 3, Mat::Ones(1, 3), Mat::Zero(1, 1), 3);
  CHECK(y(0, 0) == 3.0);
  CHECK(y(0, 1) == 6.0);
  CHECK(y(0, 2) == 5.0);
  CHECK_THROWS_AS(conv1d_forward(x, 3, Mat::Ones(1, 2), Mat::Zero(1, 1), 2), ShapeMismatch);
}

TEST_CASE("conv1d: signals do not leak into each other") {
  Mat x(1, 6);
  x << 1, 2, 3, 10, 20, 30;
  const Mat y = conv1d_forward(x, 3, Mat::Ones(1, 3), Mat::Zero(1, 1), 3);
  CHECK(y(0, 2) == 5.0);
  CHECK(y(0, 3) == 30.0);
}

TEST_CASE("conv1d: gradient check") {
  Rng rng(8);
  const int length = 6, k = 3;
  Parameter K("K", random_mat(3, 2 * k, rng)), b("b", random_mat(3, 1, rng));
  Mat x = random_mat(2, length * 3, rng);
  const Mat label = random_mat(3, length * 3, rng);
  const LossResult l = rmse_loss(conv1d_forward(x, length, K.value, b.value, k), label);
  const Conv1dGrads g = conv1d_backward(l.grad, x, length, K.value, k);
  K.grad = g.kernel;
  b.grad = g.bias;
  auto loss = [&] { return rmse_loss(conv1d_forward(x, length, K.value, b.value, k), label).loss; };
  CHECK(grad_check(loss, {&K, &b}).max_relative_error < 1e-6);
  CHECK(grad_check(loss, x, g.input).max_relative_error < 1e-6);
}

TEST_CASE("dropout") {
  Rng rng(9);
  const Mat x = random_mat(5, 4, rng);
  const DropoutResult zero = dropout(x, 0.0, 1, true);
  CHECK(zero.y == x);
  CHECK(zero.mask.isOnes(0.0));
  CHECK(dropout(x, 0.7, 1, false).y == x);
  CHECK_THROWS_AS(dropout(x, 1.0, 1, true), InvalidArgument);
  CHECK_THROWS_AS(dropout(x, -0.1, 1, true), InvalidArgument);

  const Mat ones = Mat::Ones(1, 100000);
  const DropoutResult half = dropout(ones, 0.5, 42, true);
  const double kept = static_cast<double>((half.mask.array() > 0.0).count()) / 1e5;
  CHECK(std::abs(kept - 0.5) < 0.01);
  CHECK(std::abs(half.y.mean() - 1.0) < 0.02);
  CHECK(dropout(ones, 0.5, 42, true).mask == half.mask);
}

TEST_CASE("rmse loss") {
  const Mat p = Mat::Ones(3, 2);
  const LossResult same = rmse_loss(p, p);
  CHECK(same.loss == 0.0);
  CHECK(same.grad.isZero(0.0));
  Mat e(3, 1);
  e << 3, 0, 4;
  CHECK(rmse_loss(e, Mat::Zero(3, 1)).loss == doctest::Approx(2.886751).epsilon(1e-6));
  CHECK_THROWS_AS(rmse_loss(Mat(3, 0), Mat(3, 0)), InvalidArgument);
  CHECK_THROWS_AS(rmse_loss(p, Mat::Ones(2, 3)), ShapeMismatch);

  Rng rng(10);
  Mat pred = random_mat(3, 4, rng);
  const Mat label = random_mat(3, 4, rng);
  const LossResult l = rmse_loss(pred, label);
  auto loss = [&] { return rmse_loss(pred, label).loss; };
  CHECK(grad_check(loss, pred, l.grad).max_relative_error < 1e-6);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  Rng rng(11);
  Parameter p("p", random_mat(3, 3, rng));
  const Mat before = p.value;
  AdamState s = make_adam_state({&p});
  for (int k = 0; k < 5; ++k) adam_step({&p}, s);
  CHECK(p.value == before);
  CHECK(s.step == 5);
}

TEST_CASE("adam: first step moves by the learning rate") {
  Parameter p("p", Mat::Zero(1, 2));
  p.grad << 0.3, -2.0;
  AdamState s = make_adam_state({&p});
  adam_step({&p}, s);
  CHECK(p.value(0, 0) == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(p.value(0, 1) == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("adam: two steps against a scalar reference") {
  Parameter p("p", Mat::Zero(1, 1));
  p.value(0, 0) = 0.25;
  AdamState s = make_adam_state({&p});
  const double grads[2] = {0.7, -0.2};
  double theta = 0.25, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    p.grad(0, 0) = grads[t - 1];
    adam_step({&p}, s);
    m = 0.9 * m + 0.1 * grads[t - 1];
    v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    theta -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
  }
  CHECK(std::abs(p.value(0, 0) - theta) <= 1e-12);
}

TEST_CASE("adam: shape mismatch") {
  Parameter p("p", Mat::Zero(2, 2));
  AdamState s = make_adam_state({&p});
  p.grad = Mat::Zero(3, 1);
  CHECK_THROWS_AS(adam_step({&p}, s), ShapeMismatch);
}

TEST_CASE("clip_grad_norm") {
  Parameter p("p", Mat::Zero(1, 2));
  p.grad << 3.0, 4.0;
  CHECK(clip_grad_norm({&p}, 1.0) == doctest::Approx(5.0));
  CHECK(p.grad.norm() == doctest::Approx(1.0));
}

TEST_CASE("grad_check: linear function and a corrupted gradient") {
  Parameter p("p", Mat::Constant(2, 2, 0.3));
  const Mat coeff = (Mat(2, 2) << 1.0, -2.0, 0.5, 3.0).finished();
  auto loss = [&] { return (p.value.array() * coeff.array()).sum(); };
  p.grad = coeff;
  CHECK(grad_check(loss, {&p}).max_relative_error < 1e-8);
  p.grad(1, 0) *= 1.5;
  const GradCheckResult bad = grad_check(loss, {&p});
  CHECK(bad.max_relative_error > 1e-2);
  CHECK(bad.worst == "p[1]");
  CHECK(relative_error(0.0, 0.0) == 0.0);
}

TEST_CASE("determinism: identical seeds give identical passes") {
  auto run = [] {
    Rng rng(12);
    Mat W, b;
    init_lstm(W, b, 3, 4, rng);
    std::vector<Mat> xs{random_mat(3, 2, rng), random_mat(3, 2, rng)};
    const LstmSequence seq = lstm_forward(xs, W, b);
    return seq.hidden.back();
  };
  CHECK(run() == run());
}

TEST_CASE("init_lstm: forget bias at one") {
  Rng rng(13);
  Mat W, b;
  init_lstm(W, b, 3, 4, rng);
  CHECK(b.middleRows(4, 4).isOnes(0.0));
  CHECK(b.topRows(4).isZero(0.0));
  CHECK(W.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 11.0));
}

TEST_CASE("weight file round trip and corruption") {
  Rng rng(14);
  WeightFile f;
  f.header = {{"kind", "test"}};
  f.blocks.push_back({"a", Tensor::from_matrix(random_mat(3, 4, rng))});
  f.blocks.push_back({"b", Tensor::from_matrix(random_mat(5, 1, rng))});
  const auto path = temp_path("round.bin");
  write_weight_file(path, f);
  const WeightFile g = read_weight_file(path);
  CHECK(g.header == f.header);
  CHECK(g.find("a").to_matrix() == f.blocks[0].tensor.to_matrix());
  CHECK(g.find("b").values == f.blocks[1].tensor.values);
  CHECK_THROWS_AS(g.find("c"), CorruptFile);

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 9);
  CHECK_THROWS_AS(read_weight_file(path), CorruptFile);

  write_weight_file(path, f);
  {
    std::fstream io(path, std::ios::in | std::ios::out | std::ios::binary);
    io.seekp(static_cast<std::streamoff>(size / 2));
    io.put('\x7f');
  }
  CHECK_THROWS_AS(read_weight_file(path), CorruptFile);

  {
    std::ofstream out(path, std::ios::binary);
    out << "not a weight file at all, just text";
  }
  CHECK_THROWS_AS(read_weight_file(path), CorruptFile);
  std::filesystem::remove(path);
}

TEST_CASE("tensor count matches shape") {
  Tensor t = Tensor::from_matrix(Mat::Ones(2, 3));
  CHECK(t.count() == 6);
  CHECK(t.values.size() == t.count());
}
