#pragma once

// Gradient-check fixture for the full LSTM-Pos graph, shared by the unit and
// acceptance suites. Central differences are meaningless across a ReLU kink,
// so the draw is repeated (deterministically) until every ReLU pre-activation
// sits at least kKinkMargin away from zero. Biases are moved off zero so that
// dropped-out units do not park pre-activations exactly on the kink.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "reach/models.hpp"

namespace reach::testing {

inline constexpr double kKinkMargin = 1e-4;

struct LstmPosCheck {
  double max_relative_error = 0.0;  // over parameters and inputs
  std::string worst;
  double relu_margin = 0.0;  // smallest |pre-activation| of any ReLU
  std::size_t checked = 0;
  std::uint64_t seed = 0;  // draw actually used
};

struct LstmPosDraw {
  models::LstmPosNet net;
  std::vector<models::Mat> zs;
  models::Mat label;
  std::uint64_t dropout_seed = 0;
};

inline LstmPosDraw draw_lstm_pos_point(const models::LstmPosConfig& config, int n, std::uint64_t seed,
                                       int batch) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  LstmPosDraw d{models::LstmPosNet(data::FeatureMask("check", idx), config, seed), {}, {}, seed * 31 + 7};
  Rng rng(seed + 1000);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto* p : d.net.parameters()) {
    if (p->value.cols() == 1) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += 0.1 * u(rng);
    }
  }
  for (int t = 0; t < config.window; ++t) {
    models::Mat z(d.net.step_width(), batch);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = u(rng);
    d.zs.push_back(std::move(z));
  }
  d.label.resize(3, batch);
  for (Eigen::Index i = 0; i < d.label.size(); ++i) d.label.data()[i] = u(rng);
  return d;
}

inline double relu_margin(const models::LstmPosNet::Cache& cache) {
  double margin = cache.head_pre.cwiseAbs().minCoeff();
  for (const auto& pre : cache.conv_pre) margin = std::min(margin, pre.cwiseAbs().minCoeff());
  return margin;
}

inline LstmPosCheck check_lstm_pos_gradients(const models::LstmPosConfig& config, int n,
                                             std::uint64_t seed, int batch = 2) {
  using models::Mat;
  LstmPosDraw d = draw_lstm_pos_point(config, n, seed, batch);
  models::LstmPosNet::Cache cache;
  nn::LossResult l = nn::rmse_loss(d.net.forward(d.zs, true, d.dropout_seed, &cache), d.label);
  for (int attempt = 0; attempt < 100 && relu_margin(cache) < kKinkMargin; ++attempt) {
    d = draw_lstm_pos_point(config, n, ++seed, batch);
    l = nn::rmse_loss(d.net.forward(d.zs, true, d.dropout_seed, &cache), d.label);
  }
  nn::zero_grads(d.net.parameters());
  const std::vector<Mat> gz = d.net.backward(l.grad, cache);

  LstmPosCheck out;
  out.seed = seed;
  out.relu_margin = relu_margin(cache);
  auto loss = [&] { return nn::rmse_loss(d.net.forward(d.zs, true, d.dropout_seed), d.label).loss; };
  const nn::GradCheckResult r = nn::grad_check(loss, d.net.parameters());
  out.max_relative_error = r.max_relative_error;
  out.worst = r.worst;
  out.checked = r.checked;
  for (std::size_t t = 0; t < d.zs.size(); ++t) {
    const nn::GradCheckResult ri = nn::grad_check(loss, d.zs[t], gz[t], 1e-5, "z" + std::to_string(t));
    out.checked += ri.checked;
    if (ri.max_relative_error > out.max_relative_error) {
      out.max_relative_error = ri.max_relative_error;
      out.worst = ri.worst;
    }
  }
  return out;
}

}  // namespace reach::testing
