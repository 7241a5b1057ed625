#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "reach/rng.hpp"

// Hand-differentiated layers for the two fixed architectures. Batches are laid
// out column-wise: a d x B matrix holds B samples of width d.
namespace reach::nn {

using Mat = Eigen::MatrixXd;

/// Row-major dense array of up to three axes; the unit of the weight file.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  std::size_t count() const;
  static Tensor from_matrix(const Mat& m);
  Mat to_matrix() const;  // shapes of rank 1 become column vectors
};

/// A trainable array with its accumulated gradient.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParamList = std::vector<Parameter*>;

void zero_grads(const ParamList& params);
std::size_t count_values(const ParamList& params);

/// Uniform +-sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Mat& m, double fan_in, double fan_out, Rng& rng);

// ---------------------------------------------------------------------------
// Dense

Mat dense_forward(const Mat& x, const Mat& weight, const Mat& bias);

struct DenseGrads {
  Mat input;
  Mat weight;
  Mat bias;
};

DenseGrads dense_backward(const Mat& grad_y, const Mat& x, const Mat& weight);

Mat relu(const Mat& x);
/// Gradient through ReLU given the pre-activation.
Mat relu_backward(const Mat& grad_y, const Mat& pre);

// ---------------------------------------------------------------------------
// LSTM

/// Gate weights over the concatenation [h(t-1); x(t)], stacked by rows as
/// input (i), forget (f), output (o) and candidate (c) blocks of `hidden` rows.
struct LstmParams {
  int input = 0;
  int hidden = 0;
  Mat weight;  // 4m x (m + d)
  Mat bias;    // 4m x 1

  LstmParams() = default;
  LstmParams(int input_size, int hidden_size);

  auto W_i() const { return weight.middleRows(0, hidden); }
  auto W_f() const { return weight.middleRows(hidden, hidden); }
  auto W_o() const { return weight.middleRows(2 * hidden, hidden); }
  auto W_c() const { return weight.middleRows(3 * hidden, hidden); }
  auto b_i() const { return bias.middleRows(0, hidden); }
  auto b_f() const { return bias.middleRows(hidden, hidden); }
  auto b_o() const { return bias.middleRows(2 * hidden, hidden); }
  auto b_c() const { return bias.middleRows(3 * hidden, hidden); }
};

/// Glorot gate weights, zero biases except the forget gate at +1.
void init_lstm(Mat& weight, Mat& bias, int input, int hidden, Rng& rng);

struct LstmStepCache {
  Mat concat;  // [h_prev; x]
  Mat i, f, o, g;
  Mat c_prev;
  Mat tanh_c;
};

struct LstmStep {
  Mat h;
  Mat c;
  LstmStepCache cache;
};

LstmStep lstm_cell_step(const Mat& x, const Mat& h_prev, const Mat& c_prev, const Mat& weight,
                        const Mat& bias);

struct LstmSequence {
  std::vector<Mat> hidden;  // D = {h(0) .. h(H-1)}
  std::vector<LstmStepCache> caches;
};

/// Unrolls the cell over `xs` from zero initial state.
LstmSequence lstm_forward(const std::vector<Mat>& xs, const Mat& weight, const Mat& bias);

struct LstmGrads {
  Mat weight;
  Mat bias;
  std::vector<Mat> inputs;
};

/// Backpropagation through time. `grad_hidden[t]` may be empty for steps
/// without an output gradient.
LstmGrads lstm_bptt(const std::vector<Mat>& grad_hidden, const std::vector<LstmStepCache>& caches,
                    const Mat& weight);

// ---------------------------------------------------------------------------
// 1-D convolution, stride 1, zero "same" padding.
//
// `x` is channels x (length * signals): each signal occupies `length`
// consecutive columns. `kernel` is out_channels x (in_channels * ksize) with
// tap j of input channel c in column c * ksize + j.

Mat conv1d_forward(const Mat& x, int length, const Mat& kernel, const Mat& bias, int ksize);

struct Conv1dGrads {
  Mat input;
  Mat kernel;
  Mat bias;
};

Conv1dGrads conv1d_backward(const Mat& grad_y, const Mat& x, int length, const Mat& kernel, int ksize);

// ---------------------------------------------------------------------------
// Dropout (inverted)

/// Entries 0 or 1 / (1 - rate).
Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng);

struct DropoutResult {
  Mat y;
  Mat mask;
};

/// Identity with an all-ones mask when `training` is false. Throws for rate outside [0, 1).
DropoutResult dropout(const Mat& x, double rate, std::uint64_t seed, bool training);

// ---------------------------------------------------------------------------
// Loss

struct LossResult {
  double loss = 0.0;
  Mat grad;
};

/// sqrt(mean squared error) over every element; zero gradient at zero loss.
LossResult rmse_loss(const Mat& pred, const Mat& label);

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  std::vector<Mat> m;
  std::vector<Mat> v;
};

AdamState make_adam_state(const ParamList& params, const AdamConfig& config = {});
/// One bias-corrected update of every parameter from its `grad`.
void adam_step(const ParamList& params, AdamState& state);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`; returns the norm before.
double clip_grad_norm(const ParamList& params, double max_norm);

// ---------------------------------------------------------------------------
// Gradient checking

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst;  // "<parameter>[index]"
  std::size_t checked = 0;
};

/// Central differences of `loss` over every entry of each parameter value,
/// compared with the analytic gradients in `Parameter::grad`.
GradCheckResult grad_check(const std::function<double()>& loss, const ParamList& params,
                           double eps = 1e-5);

/// Same, for a plain matrix input and its analytic gradient.
GradCheckResult grad_check(const std::function<double()>& loss, Mat& value, const Mat& analytic,
                           double eps = 1e-5, const std::string& name = "input");

// ---------------------------------------------------------------------------
// Weight file: magic, version, JSON header, named tensors, FNV-1a checksum.

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct WeightFile {
  nlohmann::json header;
  std::vector<NamedTensor> blocks;

  const Tensor& find(const std::string& name) const;
};

void write_weight_file(const std::filesystem::path& path, const WeightFile& file);
/// Throws CorruptFile on bad magic, version, truncation or checksum.
WeightFile read_weight_file(const std::filesystem::path& path);

}  // namespace reach::nn
