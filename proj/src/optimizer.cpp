#include "fedseg/optimizer.hpp"

#include <cmath>

namespace fedseg {

void Adam::step(ModelWeights& weights,
                const std::unordered_map<std::string, Tensor>& grads) {
  ++t_;
  const double bias1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& e : weights.entries) {
    if (!e.trainable) continue;
    const auto git = grads.find(e.name);
    auto [it, inserted] = slots_.try_emplace(e.name);
    Moments& mom = it->second;
    if (inserted) {
      mom.m = Tensor(e.tensor.shape());
      mom.v = Tensor(e.tensor.shape());
    } else if (!mom.m.same_shape(e.tensor)) {
      throw_validation("adam: moment shape " + mom.m.shape_str() +
                       " does not match parameter " + e.name + " " +
                       e.tensor.shape_str());
    }
    const Tensor* g = git == grads.end() ? nullptr : &git->second;
    if (g && !g->same_shape(e.tensor)) {
      throw_validation("adam: gradient shape " + g->shape_str() +
                       " does not match parameter " + e.name + " " +
                       e.tensor.shape_str());
    }
    for (std::int64_t i = 0; i < e.tensor.size(); ++i) {
      const double gi = g ? static_cast<double>((*g)[i]) : 0.0;
      const double m =
          config_.beta1 * static_cast<double>(mom.m[i]) + (1.0 - config_.beta1) * gi;
      const double v = config_.beta2 * static_cast<double>(mom.v[i]) +
                       (1.0 - config_.beta2) * gi * gi;
      mom.m[i] = static_cast<float>(m);
      mom.v[i] = static_cast<float>(v);
      const double m_hat = m / bias1;
      const double v_hat = v / bias2;
      e.tensor[i] -= static_cast<float>(config_.lr * m_hat /
                                        (std::sqrt(v_hat) + config_.eps));
    }
  }
}

}  // namespace fedseg
