#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedseg/aggregators.hpp"
#include "fedseg/config.hpp"
#include "fedseg/dataset.hpp"
#include "fedseg/metrics.hpp"
#include "fedseg/unet.hpp"

namespace fedseg {

// Seeded shuffle then contiguous chunks of floor(N/K); the first N mod K
// chunks take one extra element. Disjoint and exhaustive by construction.
std::vector<std::vector<int>> partition_indices(int n, int k, Rng rng);

// Windowed shuffle over a fixed-size buffer: emit a uniformly chosen
// buffered element, refill from the stream. buffer=1 preserves order;
// buffer>=N yields a uniform permutation.
std::vector<int> buffered_shuffle(const std::vector<int>& stream,
                                  int buffer, Rng& rng);

// repeat(local_epochs) -> buffered shuffle -> fixed-size batches (final
// short batch kept).
std::vector<std::vector<int>> client_batch_indices(int n_local,
                                                   int local_epochs,
                                                   int batch_size, int buffer,
                                                   Rng& rng);

struct LocalTrainResult {
  ClientUpdate update;
  double mean_loss = 0.0;
  int steps = 0;
  std::optional<MetricsReport> validation;
  double wall_ms = 0.0;
};

// Clones the global weights, trains on the client's partition, and returns
// only the weight delta plus the sample count; the global weights and the
// client's raw samples never leave this call. Throws DivergenceError on a
// non-finite loss.
LocalTrainResult local_train(const UNetModel& reference,
                             const ModelWeights& global,
                             const std::vector<ImageSample>& partition,
                             const FLConfig& fl, const MetricsConfig& metrics,
                             Rng client_rng, int client_id);

struct RoundClientLog {
  int client_id = 0;
  double train_loss = 0.0;
  double wall_ms = 0.0;
  std::optional<MetricsReport> validation;
};

struct RoundLogEntry {
  int round = 0;  // 1-based
  std::vector<RoundClientLog> clients;
  MetricsReport eval;
  double wall_ms = 0.0;
};

// One broadcast -> parallel local train -> aggregate -> apply cycle.
// Updates are combined in ascending client_id order regardless of which
// worker finishes first.
struct RoundResult {
  ModelWeights global;
  RoundLogEntry log;
};
RoundResult run_round(const UNetModel& reference, const ModelWeights& global,
                      const std::vector<std::vector<ImageSample>>& partitions,
                      const FLConfig& fl, const MetricsConfig& metrics,
                      Aggregator& aggregator, int round_index,
                      const std::vector<ImageSample>& eval_split);

// Manifest loading, stats, augmentation expansion and normalization; images
// become network inputs, masks stay binary.
struct PreparedData {
  std::vector<ImageSample> train;
  std::vector<ImageSample> test;
  std::optional<ChannelStats> stats;
};
PreparedData prepare_data(const RunConfig& config);
PreparedData prepare_data(const RunConfig& config,
                          std::vector<ImageSample> train_originals,
                          std::vector<ImageSample> test_originals);

struct TrainOutput {
  UNetModel model;
  std::vector<RoundLogEntry> rounds;
  MetricsReport final_report;
  std::optional<ChannelStats> stats;
};

// The full federated run. On divergence the rounds completed so far are
// copied into *partial_rounds (when provided) before the error propagates.
TrainOutput run_training(const RunConfig& config,
                         std::vector<RoundLogEntry>* partial_rounds = nullptr);
TrainOutput run_training(const RunConfig& config, const PreparedData& data,
                         std::vector<RoundLogEntry>* partial_rounds = nullptr);

// round, client_id (or "global"), loss, accuracy, auc, recall, precision,
// dice, iou, wall_ms. Client metric cells are filled from the per-client
// validation report when validation is enabled, else left empty.
std::string roundlog_csv(const std::vector<RoundLogEntry>& rounds);

void write_training_artifacts(const RunConfig& resolved_config,
                              const TrainOutput& output,
                              const std::string& out_dir);

// One manifest split prepared for evaluation: `inputs` carry the
// feature-normalized network inputs, `originals` the as-loaded [0,1]
// images (for crop export). Feature-wise flags require config.stats.
struct EvalSplit {
  std::vector<ImageSample> inputs;
  std::vector<ImageSample> originals;
};
EvalSplit load_eval_split(const RunConfig& config,
                          const std::string& manifest_path,
                          const std::string& split);

// One full training run per (aggregator, seed); rows carry the dice /
// bce-dice-loss / iou / rmse / ssim / scd column set, with a mean row per
// aggregator.
std::string compare_aggregators_csv(
    const RunConfig& base_config,
    const std::vector<std::string>& aggregator_names,
    const std::vector<std::uint64_t>& seeds);

}  // namespace fedseg
