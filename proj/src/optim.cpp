#include "nar/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace nar {

double lr_at_step(long long step, int model_dim, int warmup_steps) {
  if (step < 1) throw std::invalid_argument("lr_at_step needs step >= 1, got " + std::to_string(step));
  if (model_dim < 1 || warmup_steps < 1) throw std::invalid_argument("lr_at_step needs model_dim and warmup >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup_steps);
  return std::pow(static_cast<double>(model_dim), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

OptimizerState init_optimizer(const OptimizerConfig& config,
                              const std::vector<std::pair<std::string, Tensor>>& params) {
  OptimizerState st;
  st.config = config;
  st.first_moment.reserve(params.size());
  st.second_moment.reserve(params.size());
  for (const auto& [name, p] : params) {
    st.first_moment.push_back(Tensor::zeros(p.shape));
    st.second_moment.push_back(Tensor::zeros(p.shape));
  }
  return st;
}

void adamw_step(std::vector<std::pair<std::string, Tensor>>& params, const std::vector<Tensor>& grads,
                OptimizerState& state, double lr) {
  if (lr <= 0.0) throw std::invalid_argument("adamw_step needs lr > 0");
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adamw_step parameter/gradient count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].second.same_shape(grads[i])) {
      throw std::invalid_argument("gradient shape mismatch for " + params[i].first + ": " +
                                  shape_str(params[i].second) + " vs " + shape_str(grads[i]));
    }
    if (!grads[i].all_finite()) {
      throw std::runtime_error("non-finite gradient for parameter " + params[i].first);
    }
  }

  state.step += 1;
  const OptimizerConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = params[i].second;
    const Tensor& g = grads[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t j = 0; j < w.data.size(); ++j) {
      m.data[j] = c.beta1 * m.data[j] + (1.0 - c.beta1) * g.data[j];
      v.data[j] = c.beta2 * v.data[j] + (1.0 - c.beta2) * g.data[j] * g.data[j];
      const double mhat = m.data[j] / bc1;
      const double vhat = v.data[j] / bc2;
      // decay is decoupled: applied to the weight itself, not routed
      // through the adaptive step
      w.data[j] -= lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * w.data[j]);
    }
  }
}

}  // namespace nar
