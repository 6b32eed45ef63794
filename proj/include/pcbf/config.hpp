#pragma once

#include <cstdint>
#include <vector>

#include "pcbf/error.hpp"

namespace pcbf {

/// Hyperparameters of one training run.
struct TrainConfig {
  double gamma = 0.99;
  double lambda = 0.0;
  double tau = 5e-3;
  double lr = 3e-4;
  int batch_size = 256;
  long total_steps = 50'000;
  int nfe = 10;
  long eval_every = 5'000;
  int loss_window = 100;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {64, 64};
  int eval_samples = 10'000;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
    if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
    if (nfe < 1) throw ConfigError("nfe must be >= 1");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (loss_window < 2) throw ConfigError("loss_window must be >= 2");
    if (eval_samples < 1) throw ConfigError("eval_samples must be >= 1");
    for (int h : hidden) {
      if (h < 1) throw ConfigError("hidden layer widths must be positive");
    }
  }

  /// Network layer sizes for a given one-hot context width.
  std::vector<int> layer_sizes(int context_dim) const {
    std::vector<int> sizes{2 + context_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(1);
    return sizes;
  }
};

}  // namespace pcbf
