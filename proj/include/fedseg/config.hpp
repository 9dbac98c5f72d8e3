#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "fedseg/aggregators.hpp"
#include "fedseg/dataset.hpp"
#include "fedseg/metrics.hpp"
#include "fedseg/optimizer.hpp"
#include "fedseg/unet.hpp"

namespace fedseg {

struct FLConfig {
  int num_clients = 4;
  int rounds = 15;
  int local_epochs = 2;
  int batch_size = 8;
  int shuffle_buffer = 512;
  std::uint64_t seed = 0;  // 0 = derive from the run seed
  AggregatorSpec aggregator;
  // Per-client validation holdout; 0 disables it.
  double validation_fraction = 0.0;
  // 0 = one worker per client; FEDSEG_THREADS caps it either way.
  int workers = 0;
  AdamConfig adam;

  void validate() const;
};

struct PathsConfig {
  std::string manifest;
  std::string out_dir;
};

// Full run configuration. The top-level seed drives every sub-seed left at
// 0, so one value reproduces a whole run; with_resolved_seeds() makes the
// derivations explicit.
struct RunConfig {
  std::uint64_t seed = 1;
  UNetConfig unet;
  FLConfig fl;
  AugmentConfig augment;
  MetricsConfig metrics;
  PathsConfig paths;
  // Training-split channel stats, embedded once computed so eval runs are
  // self-contained.
  std::optional<ChannelStats> stats;

  void validate() const;
  RunConfig with_resolved_seeds() const;

  static RunConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

}  // namespace fedseg
