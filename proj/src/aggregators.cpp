#include "fedseg/aggregators.hpp"

#include <algorithm>
#include <cmath>

namespace fedseg {

namespace {
// Norms within clip*(1+slack) pass through unchanged, so re-clipping a
// clipped update is bitwise a no-op.
constexpr double kClipSlack = 1e-6;
}  // namespace

void AggregatorSpec::validate() const {
  switch (kind) {
    case AggregatorKind::Mean:
      return;
    case AggregatorKind::Dp:
      if (!(dp.clip_norm > 0.0)) {
        throw_validation("dpf: clip_norm must be positive");
      }
      if (dp.noise_multiplier < 0.0) {
        throw_validation("dpf: noise_multiplier must be >= 0");
      }
      return;
    case AggregatorKind::AdaptiveQuantile:
      if (!(adaptive.initial_clip > 0.0)) {
        throw_validation("pqep: initial_clip must be positive");
      }
      if (adaptive.target_quantile <= 0.0 || adaptive.target_quantile >= 1.0) {
        throw_validation("pqep: target_quantile must be in (0, 1)");
      }
      if (!(adaptive.learning_rate > 0.0)) {
        throw_validation("pqep: learning_rate must be positive");
      }
      if (adaptive.noise_multiplier < 0.0) {
        throw_validation("pqep: noise_multiplier must be >= 0");
      }
      return;
  }
  throw_validation("unknown aggregator kind");
}

std::string AggregatorSpec::name() const {
  switch (kind) {
    case AggregatorKind::Mean: return "mean";
    case AggregatorKind::Dp: return "dpf";
    case AggregatorKind::AdaptiveQuantile: return "pqep";
  }
  return "?";
}

AggregatorSpec AggregatorSpec::parse_kind(const std::string& name) {
  AggregatorSpec spec;
  if (name == "mean") {
    spec.kind = AggregatorKind::Mean;
  } else if (name == "dpf" || name == "dp") {
    spec.kind = AggregatorKind::Dp;
  } else if (name == "pqep" || name == "adaptive_quantile") {
    spec.kind = AggregatorKind::AdaptiveQuantile;
  } else {
    throw_validation("unknown aggregator \"" + name +
                     "\" (expected mean, dpf or pqep)");
  }
  return spec;
}

double flatten_norm(const ClientUpdate& update) {
  return weights_l2_norm(update.delta);
}

ClientUpdate clip_update(const ClientUpdate& update, double clip_norm) {
  if (!(clip_norm > 0.0)) {
    throw_validation("clip: clip_norm must be positive");
  }
  const double norm = flatten_norm(update);
  if (norm <= clip_norm * (1.0 + kClipSlack)) return update;
  ClientUpdate out = update;
  const double scale = clip_norm / norm;
  for (auto& e : out.delta.entries) {
    for (std::int64_t i = 0; i < e.tensor.size(); ++i) {
      e.tensor[i] = static_cast<float>(static_cast<double>(e.tensor[i]) * scale);
    }
  }
  return out;
}

namespace {

std::vector<const ClientUpdate*> sorted_by_client(
    const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) {
    throw_validation("aggregate: need at least one update");
  }
  std::vector<const ClientUpdate*> ptrs;
  ptrs.reserve(updates.size());
  for (const auto& u : updates) ptrs.push_back(&u);
  std::sort(ptrs.begin(), ptrs.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) {
              return a->client_id < b->client_id;
            });
  for (std::size_t i = 1; i < ptrs.size(); ++i) {
    check_same_structure(ptrs[0]->delta, ptrs[i]->delta, "aggregate");
  }
  return ptrs;
}

ModelWeights mean_of(const std::vector<const ClientUpdate*>& ptrs,
                     bool weight_by_examples) {
  double total_weight = 0.0;
  for (const auto* u : ptrs) {
    const double w =
        weight_by_examples ? static_cast<double>(u->num_examples) : 1.0;
    if (weight_by_examples && u->num_examples <= 0) {
      throw_validation("aggregate: weighted mean needs positive num_examples, "
                       "client " + std::to_string(u->client_id) + " has " +
                       std::to_string(u->num_examples));
    }
    total_weight += w;
  }
  ModelWeights out = weights_zeros_like(ptrs[0]->delta);
  for (std::size_t e = 0; e < out.entries.size(); ++e) {
    Tensor& dst = out.entries[e].tensor;
    std::vector<double> acc(static_cast<std::size_t>(dst.size()), 0.0);
    for (const auto* u : ptrs) {
      const double w =
          weight_by_examples ? static_cast<double>(u->num_examples) : 1.0;
      const Tensor& src = u->delta.entries[e].tensor;
      for (std::int64_t i = 0; i < src.size(); ++i) {
        acc[static_cast<std::size_t>(i)] += w * static_cast<double>(src[i]);
      }
    }
    for (std::int64_t i = 0; i < dst.size(); ++i) {
      dst[i] = static_cast<float>(acc[static_cast<std::size_t>(i)] / total_weight);
    }
  }
  return out;
}

}  // namespace

ModelWeights aggregate_mean(const std::vector<ClientUpdate>& updates,
                            bool weight_by_examples) {
  return mean_of(sorted_by_client(updates), weight_by_examples);
}

Aggregator::Aggregator(const AggregatorSpec& spec)
    : spec_(spec),
      rng_(spec.kind == AggregatorKind::AdaptiveQuantile ? spec.adaptive.seed
                                                         : spec.dp.seed) {
  spec_.validate();
  clip_ = spec.kind == AggregatorKind::AdaptiveQuantile
              ? spec.adaptive.initial_clip
              : spec.dp.clip_norm;
}

namespace {

// Clipping and noise act on the learned weights; non-trainable entries
// (batchnorm moving statistics) are plain measurements and pass through to
// the unclipped, noiseless mean. Perturbing them would break their
// semantics outright (a noised variance can go negative).
double trainable_norm(const ClientUpdate& update) {
  double sum = 0.0;
  for (const auto& e : update.delta.entries) {
    if (!e.trainable) continue;
    for (std::int64_t i = 0; i < e.tensor.size(); ++i) {
      const double v = static_cast<double>(e.tensor[i]);
      sum += v * v;
    }
  }
  return std::sqrt(sum);
}

ClientUpdate clip_trainable(const ClientUpdate& update, double clip_norm) {
  const double norm = trainable_norm(update);
  if (norm <= clip_norm * (1.0 + kClipSlack)) return update;
  ClientUpdate out = update;
  const double scale = clip_norm / norm;
  for (auto& e : out.delta.entries) {
    if (!e.trainable) continue;
    for (std::int64_t i = 0; i < e.tensor.size(); ++i) {
      e.tensor[i] = static_cast<float>(static_cast<double>(e.tensor[i]) * scale);
    }
  }
  return out;
}

}  // namespace

ModelWeights Aggregator::aggregate(const std::vector<ClientUpdate>& updates) {
  ++steps_;
  if (spec_.kind == AggregatorKind::Mean) {
    return aggregate_mean(updates, spec_.weight_by_examples);
  }
  const double clip = clip_;
  const double noise_multiplier =
      spec_.kind == AggregatorKind::Dp ? spec_.dp.noise_multiplier
                                       : spec_.adaptive.noise_multiplier;
  std::vector<ClientUpdate> clipped;
  clipped.reserve(updates.size());
  for (const auto& u : updates) clipped.push_back(clip_trainable(u, clip));
  ModelWeights delta = aggregate_mean(clipped, spec_.weight_by_examples);
  if (noise_multiplier > 0.0) {
    // Central-model noise, added once after averaging.
    const double stddev =
        noise_multiplier * clip / static_cast<double>(updates.size());
    for (auto& e : delta.entries) {
      if (!e.trainable) continue;
      for (std::int64_t i = 0; i < e.tensor.size(); ++i) {
        e.tensor[i] += static_cast<float>(stddev * rng_.normal());
      }
    }
  }
  if (spec_.kind == AggregatorKind::AdaptiveQuantile) {
    std::int64_t within = 0;
    for (const auto& u : updates) {
      if (trainable_norm(u) <= clip) ++within;
    }
    const double fraction =
        static_cast<double>(within) / static_cast<double>(updates.size());
    clip_ *= std::exp(-spec_.adaptive.learning_rate *
                      (fraction - spec_.adaptive.target_quantile));
  }
  return delta;
}

}  // namespace fedseg
