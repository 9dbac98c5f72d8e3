#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedseg/rng.hpp"
#include "fedseg/weights.hpp"

namespace fedseg {

// Weight delta plus sample count; the only thing a client ever sends.
struct ClientUpdate {
  ModelWeights delta;
  std::int64_t num_examples = 0;
  int client_id = 0;
};

enum class AggregatorKind {
  Mean,              // plain (optionally example-weighted) averaging
  Dp,                // fixed-norm clipping + Gaussian noise on the mean
  AdaptiveQuantile,  // clipping norm tracks a target quantile of update norms
};

struct DpParams {
  double clip_norm = 1.0;
  double noise_multiplier = 0.5;
  std::uint64_t seed = 0;  // 0 = derive from the run seed
};

struct AdaptiveQuantileParams {
  double initial_clip = 0.1;
  double target_quantile = 0.5;  // gamma
  double learning_rate = 0.2;    // eta
  double noise_multiplier = 0.5;
  std::uint64_t seed = 0;
};

struct AggregatorSpec {
  AggregatorKind kind = AggregatorKind::Mean;
  bool weight_by_examples = false;
  DpParams dp;
  AdaptiveQuantileParams adaptive;

  void validate() const;
  std::string name() const;  // "mean" | "dpf" | "pqep"
  static AggregatorSpec parse_kind(const std::string& name);
};

// Global L2 norm over the update's tensors concatenated.
double flatten_norm(const ClientUpdate& update);

// Unchanged when the norm is within the bound (with a small relative slack
// so clipping is exactly idempotent); otherwise scaled to clip_norm.
ClientUpdate clip_update(const ClientUpdate& update, double clip_norm);

// Elementwise mean in ascending client_id order, accumulated in double so
// K identical updates reduce to that update exactly.
ModelWeights aggregate_mean(const std::vector<ClientUpdate>& updates,
                            bool weight_by_examples);

// Stateful across rounds (clip-norm trajectory and noise stream). For the
// dp and adaptive kinds, clipping and noise act on the trainable entries;
// non-trainable entries (batchnorm moving statistics) pass through to the
// plain mean, as in standard DP federated averaging.
class Aggregator {
 public:
  explicit Aggregator(const AggregatorSpec& spec);

  ModelWeights aggregate(const std::vector<ClientUpdate>& updates);

  double current_clip() const { return clip_; }
  std::int64_t steps() const { return steps_; }
  const AggregatorSpec& spec() const { return spec_; }

 private:
  AggregatorSpec spec_;
  double clip_ = 0.0;
  Rng rng_;
  std::int64_t steps_ = 0;
};

}  // namespace fedseg
