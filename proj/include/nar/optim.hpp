#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nar/tensor.hpp"

namespace nar {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.982;
  double eps = 1e-9;
  double weight_decay = 5e-4;
  int model_dim = 64;  // feeds the inverse-sqrt schedule
  int warmup_steps = 50;
};

// model_dim^-0.5 * min(step^-0.5, step * warmup^-1.5); peaks at step == warmup.
double lr_at_step(long long step, int model_dim, int warmup_steps);

struct OptimizerState {
  OptimizerConfig config;
  long long step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

OptimizerState init_optimizer(const OptimizerConfig& config,
                              const std::vector<std::pair<std::string, Tensor>>& params);

// One decoupled-weight-decay Adam step with bias-corrected moments. Rejects
// non-finite gradients, naming the offending parameter.
void adamw_step(std::vector<std::pair<std::string, Tensor>>& params, const std::vector<Tensor>& grads,
                OptimizerState& state, double lr);

}  // namespace nar
