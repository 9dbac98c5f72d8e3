#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>

#include "fedseg/weights.hpp"

namespace fedseg {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment optimizer with bias correction. One step() call advances
// the shared step counter once and updates every trainable entry; given
// identical state and inputs the update is bit-identical.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  // grads holds one gradient tensor per trainable weight name; entries
  // without a gradient are treated as zero-gradient.
  void step(ModelWeights& weights,
            const std::unordered_map<std::string, Tensor>& grads);

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };
  AdamConfig config_;
  std::unordered_map<std::string, Moments> slots_;
  std::int64_t t_ = 0;
};

}  // namespace fedseg
