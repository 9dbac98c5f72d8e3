#pragma once

#include <string>
#include <vector>

#include "fedseg/tensor.hpp"

namespace fedseg {

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

// Ordered, named tensor collection; the unit broadcast to and collected from
// clients. Order is part of the identity (checkpoints and aggregation both
// rely on it).
struct ModelWeights {
  std::vector<NamedTensor> entries;

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }
  Tensor& at(const std::string& name) {
    const int i = find(name);
    if (i < 0) throw_validation("unknown weight tensor: " + name);
    return entries[static_cast<std::size_t>(i)].tensor;
  }
  const Tensor& at(const std::string& name) const {
    const int i = find(name);
    if (i < 0) throw_validation("unknown weight tensor: " + name);
    return entries[static_cast<std::size_t>(i)].tensor;
  }

  std::uint64_t param_count() const {
    std::uint64_t n = 0;
    for (const auto& e : entries) n += static_cast<std::uint64_t>(e.tensor.size());
    return n;
  }
  std::uint64_t trainable_count() const {
    std::uint64_t n = 0;
    for (const auto& e : entries) {
      if (e.trainable) n += static_cast<std::uint64_t>(e.tensor.size());
    }
    return n;
  }
};

// Throws when names, order or shapes differ.
void check_same_structure(const ModelWeights& a, const ModelWeights& b,
                          const char* context);

ModelWeights weights_zeros_like(const ModelWeights& w);
// a - b, entrywise.
ModelWeights weights_sub(const ModelWeights& a, const ModelWeights& b);
// a += delta * scale
void weights_axpy(ModelWeights& a, const ModelWeights& delta, float scale);
void weights_scale(ModelWeights& w, float scale);
// Global L2 norm over all entries concatenated.
double weights_l2_norm(const ModelWeights& w);

}  // namespace fedseg
