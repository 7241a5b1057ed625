#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "reach/dataset.hpp"
#include "reach/nn_core.hpp"

namespace reach::models {

using nn::Mat;

/// What the first LSTM layer consumes at each step of the window.
enum class InputMode {
  PosOnly,  // Gamma's wrist estimate only
  Concat,   // masked state followed by Gamma's estimate
  RawOnly,  // masked state only; the plain LSTM baseline
};

std::string to_string(InputMode mode);
/// Accepts "pos-only", "concat", "raw-only". Throws InvalidArgument otherwise.
InputMode parse_input_mode(const std::string& text);
/// Per-step width of the LSTM input for a mask of `n` features.
int input_width(InputMode mode, int n);
bool needs_gamma(InputMode mode);

// ---------------------------------------------------------------------------
// Gamma: masked state -> wrist position

struct GammaConfig {
  std::vector<int> hidden{512, 512, 512};

  nlohmann::json to_json() const;
  static GammaConfig from_json(const nlohmann::json& j);
};

class GammaNet {
 public:
  GammaNet() = default;
  GammaNet(data::FeatureMask mask, GammaConfig config, std::uint64_t seed);

  const data::FeatureMask& mask() const { return mask_; }
  const GammaConfig& config() const { return config_; }
  int input_width() const { return mask_.size(); }

  /// Input z-scores and output box scaling, fitted on the training split.
  data::NormStats norm;
  data::LabelScaler scaler;

  struct Cache {
    std::vector<Mat> inputs;  // input of each dense layer
    std::vector<Mat> pre;     // pre-activation of each hidden layer
  };

  /// Normalized n x B in, normalized 3 x B out.
  Mat forward(const Mat& z, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients; returns the gradient w.r.t. the input.
  Mat backward(const Mat& grad_out, const Cache& cache);

  /// Single-sample inference in meters. Every bit-exact consumer goes through here.
  Eigen::Vector3d predict(const Eigen::VectorXd& x) const;
  /// Column-batched inference in meters (faster, may differ from predict in the last bits).
  Eigen::Matrix3Xd predict_batch(const Eigen::MatrixXd& x) const;

  nn::ParamList parameters();
  std::size_t param_count() const;
  std::vector<nn::Parameter>& layers() { return params_; }
  const std::vector<nn::Parameter>& layers() const { return params_; }

 private:
  data::FeatureMask mask_;
  GammaConfig config_;
  std::vector<nn::Parameter> params_;  // W0, b0, W1, b1, ...
};

std::size_t gamma_param_count(int n, const GammaConfig& config);

// ---------------------------------------------------------------------------
// LSTM-Pos: window of H states -> reaching target

struct LstmPosConfig {
  InputMode mode = InputMode::PosOnly;
  int rows = 8;        // a: dropout-distinct parallel rows sharing weights
  int layers = 2;      // b: stacked LSTM layers per row
  int hidden = 16;     // m
  int window = 60;     // H
  double dropout = 0.1;
  std::vector<int> conv_channels{8, 8, 4};
  int kernel = 3;
  int head_hidden = 14;

  void validate() const;
  nlohmann::json to_json() const;
  static LstmPosConfig from_json(const nlohmann::json& j);
};

/// Trainable parameters of the configuration for a mask of `n` features.
std::size_t lstm_pos_param_count(int n, const LstmPosConfig& config);

class LstmPosNet {
 public:
  LstmPosNet() = default;
  LstmPosNet(data::FeatureMask mask, LstmPosConfig config, std::uint64_t seed);

  const data::FeatureMask& mask() const { return mask_; }
  const LstmPosConfig& config() const { return config_; }
  int step_width() const { return input_width(config_.mode, mask_.size()); }

  /// z-scores of the per-step input and scaling of the target label.
  data::NormStats norm;
  data::LabelScaler scaler;

  struct Cache {
    int rows = 1;
    Eigen::Index batch = 0;
    std::vector<nn::LstmSequence> lstm;        // per layer
    std::vector<std::vector<Mat>> layer_in;    // input sequence of each layer >= 1 (after dropout)
    std::vector<std::vector<Mat>> masks;       // dropout mask per layer and step, m x (rows * B)
    std::vector<Mat> conv_in;                  // input of each conv layer
    std::vector<Mat> conv_pre;                 // pre-activation of each conv layer
    Mat flat;                                  // 4m x B
    Mat head_pre;                              // hidden pre-activation
    Mat head_act;
  };

  /// `zs` holds H normalized steps of width d x B, oldest first. Returns the
  /// normalized 3 x B target. In inference mode the rows are identical and a
  /// single row is evaluated.
  Mat forward(const std::vector<Mat>& zs, bool training, std::uint64_t dropout_seed,
              Cache* cache = nullptr) const;
  /// Accumulates parameter gradients; returns gradients w.r.t. each `zs` step.
  std::vector<Mat> backward(const Mat& grad_out, const Cache& cache);

  /// Inference on one window of raw (unnormalized) step inputs, d x H, in meters.
  Eigen::Vector3d predict(const Eigen::MatrixXd& steps) const;
  /// Several windows; bit-identical to calling predict on each.
  std::vector<Eigen::Vector3d> predict_batch(const std::vector<Eigen::MatrixXd>& windows) const;

  nn::ParamList parameters();
  std::size_t param_count() const;

 private:
  data::FeatureMask mask_;
  LstmPosConfig config_;
  std::vector<nn::Parameter> lstm_;  // W, b per layer
  std::vector<nn::Parameter> conv_;  // K, b per conv layer
  std::vector<nn::Parameter> head_;  // W0, b0, W1, b1
};

/// Per-step LSTM inputs x-bar for every sample of a masked state sequence
/// (n x N), in physical units. Gamma runs in inference mode one sample at a
/// time; it may be null for RawOnly. Throws InvalidArgument on mask mismatch.
Eigen::MatrixXd build_lstm_pos_input(const Eigen::MatrixXd& states, InputMode mode,
                                     const GammaNet* gamma);
/// Same for a single sample.
Eigen::VectorXd build_lstm_pos_step(const Eigen::VectorXd& state, InputMode mode,
                                    const GammaNet* gamma);

// ---------------------------------------------------------------------------
// Persistence

void save_model(const GammaNet& net, const std::filesystem::path& path);
void save_model(const LstmPosNet& net, const std::filesystem::path& path);
/// Throws ArchitectureMismatch when the file holds the other model kind.
GammaNet load_gamma(const std::filesystem::path& path);
LstmPosNet load_lstm_pos(const std::filesystem::path& path);

/// FNV-1a over every parameter value; used to verify freezing.
std::uint64_t weights_checksum(const std::vector<nn::Parameter>& params);

}  // namespace reach::models
