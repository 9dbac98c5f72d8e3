#include "fedseg/weights.hpp"

#include <cmath>

namespace fedseg {

void check_same_structure(const ModelWeights& a, const ModelWeights& b,
                          const char* context) {
  if (a.entries.size() != b.entries.size()) {
    throw_validation(std::string(context) + ": weight count mismatch " +
                     std::to_string(a.entries.size()) + " vs " +
                     std::to_string(b.entries.size()));
  }
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    const auto& ea = a.entries[i];
    const auto& eb = b.entries[i];
    if (ea.name != eb.name) {
      throw_validation(std::string(context) + ": weight name mismatch at " +
                       std::to_string(i) + ": " + ea.name + " vs " + eb.name);
    }
    if (!ea.tensor.same_shape(eb.tensor)) {
      throw_validation(std::string(context) + ": shape mismatch for " +
                       ea.name + ": " + ea.tensor.shape_str() + " vs " +
                       eb.tensor.shape_str());
    }
  }
}

ModelWeights weights_zeros_like(const ModelWeights& w) {
  ModelWeights out;
  out.entries.reserve(w.entries.size());
  for (const auto& e : w.entries) {
    out.entries.push_back({e.name, Tensor(e.tensor.shape()), e.trainable});
  }
  return out;
}

ModelWeights weights_sub(const ModelWeights& a, const ModelWeights& b) {
  check_same_structure(a, b, "weights_sub");
  ModelWeights out = weights_zeros_like(a);
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    const Tensor& ta = a.entries[i].tensor;
    const Tensor& tb = b.entries[i].tensor;
    Tensor& to = out.entries[i].tensor;
    for (std::int64_t j = 0; j < ta.size(); ++j) to[j] = ta[j] - tb[j];
  }
  return out;
}

void weights_axpy(ModelWeights& a, const ModelWeights& delta, float scale) {
  check_same_structure(a, delta, "weights_axpy");
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    Tensor& ta = a.entries[i].tensor;
    const Tensor& td = delta.entries[i].tensor;
    for (std::int64_t j = 0; j < ta.size(); ++j) ta[j] += td[j] * scale;
  }
}

void weights_scale(ModelWeights& w, float scale) {
  for (auto& e : w.entries) {
    for (std::int64_t j = 0; j < e.tensor.size(); ++j) e.tensor[j] *= scale;
  }
}

double weights_l2_norm(const ModelWeights& w) {
  double sum = 0.0;
  for (const auto& e : w.entries) {
    for (std::int64_t j = 0; j < e.tensor.size(); ++j) {
      const double v = static_cast<double>(e.tensor[j]);
      sum += v * v;
    }
  }
  return std::sqrt(sum);
}

}  // namespace fedseg
