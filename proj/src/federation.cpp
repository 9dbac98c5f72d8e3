#include "fedseg/federation.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <thread>

#include "fedseg/checkpoint.hpp"
#include "fedseg/io.hpp"

namespace fedseg {

namespace {

// Stream salts for deriving independent sub-streams from fl.seed.
constexpr std::uint64_t kSaltPartition = 0xA1;
constexpr std::uint64_t kSaltClientBase = 0xC1;

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - start)
      .count();
}

int worker_count(const FLConfig& fl) {
  int workers = fl.workers > 0 ? fl.workers : fl.num_clients;
  if (const char* env = std::getenv("FEDSEG_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) workers = std::min(workers, cap);
  }
  return std::max(1, std::min(workers, fl.num_clients));
}

}  // namespace

std::vector<std::vector<int>> partition_indices(int n, int k, Rng rng) {
  if (n < 1) throw_validation("partition: dataset is empty");
  if (k < 1) throw_validation("partition: need at least one client");
  if (k > n) {
    throw_validation("partition: more clients (" + std::to_string(k) +
                     ") than samples (" + std::to_string(n) + ")");
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  std::vector<std::vector<int>> parts(static_cast<std::size_t>(k));
  const int base = n / k;
  const int extra = n % k;
  std::size_t pos = 0;
  for (int c = 0; c < k; ++c) {
    const int len = base + (c < extra ? 1 : 0);
    parts[static_cast<std::size_t>(c)].assign(
        order.begin() + static_cast<std::ptrdiff_t>(pos),
        order.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(len)));
    pos += static_cast<std::size_t>(len);
  }
  return parts;
}

std::vector<int> buffered_shuffle(const std::vector<int>& stream, int buffer,
                                  Rng& rng) {
  if (buffer < 1) throw_validation("shuffle buffer must be >= 1");
  std::vector<int> out;
  out.reserve(stream.size());
  std::vector<int> buf;
  buf.reserve(static_cast<std::size_t>(buffer));
  std::size_t next = 0;
  while (next < stream.size() && buf.size() < static_cast<std::size_t>(buffer)) {
    buf.push_back(stream[next++]);
  }
  while (!buf.empty()) {
    const std::size_t j = static_cast<std::size_t>(rng.below(buf.size()));
    out.push_back(buf[j]);
    if (next < stream.size()) {
      buf[j] = stream[next++];
    } else {
      buf[j] = buf.back();
      buf.pop_back();
    }
  }
  return out;
}

std::vector<std::vector<int>> client_batch_indices(int n_local,
                                                   int local_epochs,
                                                   int batch_size, int buffer,
                                                   Rng& rng) {
  std::vector<int> stream;
  stream.reserve(static_cast<std::size_t>(n_local) *
                 static_cast<std::size_t>(local_epochs));
  for (int e = 0; e < local_epochs; ++e) {
    for (int i = 0; i < n_local; ++i) stream.push_back(i);
  }
  const std::vector<int> shuffled = buffered_shuffle(stream, buffer, rng);
  std::vector<std::vector<int>> batches;
  for (std::size_t start = 0; start < shuffled.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(shuffled.size(), start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(shuffled.begin() + static_cast<std::ptrdiff_t>(start),
                         shuffled.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

namespace {

void fill_batch(const std::vector<ImageSample>& samples,
                const std::vector<int>& idx, int height, int width,
                int channels, Tensor* x, Tensor* y) {
  const std::int64_t n = static_cast<std::int64_t>(idx.size());
  *x = Tensor({n, height, width, channels});
  *y = Tensor({n, height, width, channels});
  const std::int64_t len = static_cast<std::int64_t>(height) * width * channels;
  for (std::int64_t b = 0; b < n; ++b) {
    const ImageSample& s = samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(b)])];
    if (s.image.size() != len || s.mask.size() != len) {
      throw_validation("sample " + s.id + " has shape " + s.image.shape_str() +
                       " but the model expects " + std::to_string(height) +
                       "x" + std::to_string(width));
    }
    std::copy(s.image.data(), s.image.data() + len, x->data() + b * len);
    std::copy(s.mask.data(), s.mask.data() + len, y->data() + b * len);
  }
}

}  // namespace

LocalTrainResult local_train(const UNetModel& reference,
                             const ModelWeights& global,
                             const std::vector<ImageSample>& partition,
                             const FLConfig& fl, const MetricsConfig& metrics,
                             Rng client_rng, int client_id) {
  if (partition.empty()) {
    throw_validation("client " + std::to_string(client_id) +
                     " has an empty partition");
  }
  const auto started = std::chrono::steady_clock::now();
  check_same_structure(reference.weights(), global, "local_train");

  // Optional per-client validation holdout from the tail of the partition.
  std::size_t train_count = partition.size();
  if (fl.validation_fraction > 0.0 && partition.size() > 1) {
    const auto held = static_cast<std::size_t>(
        fl.validation_fraction * static_cast<double>(partition.size()));
    train_count = partition.size() - std::max<std::size_t>(1, held);
    if (train_count == 0) train_count = 1;
  }

  UNetModel model = reference;
  model.set_weights(global);
  Adam adam(fl.adam);
  Rng shuffle_rng = client_rng.derive(1);
  Rng dropout_rng = client_rng.derive(2);
  const auto batches =
      client_batch_indices(static_cast<int>(train_count), fl.local_epochs,
                           fl.batch_size, fl.shuffle_buffer, shuffle_rng);
  const UNetConfig& ucfg = reference.config();
  double loss_sum = 0.0;
  int steps = 0;
  Tensor x, y;
  for (const auto& batch : batches) {
    fill_batch(partition, batch, ucfg.input_h, ucfg.input_w,
               ucfg.input_channels, &x, &y);
    try {
      const TrainStepStats stats =
          unet_train_step(model, adam, x, y, dropout_rng);
      loss_sum += stats.loss;
    } catch (const DivergenceError& e) {
      throw DivergenceError("client " + std::to_string(client_id) + " step " +
                            std::to_string(steps + 1) + ": " + e.what());
    }
    ++steps;
  }

  LocalTrainResult result;
  result.update.client_id = client_id;
  result.update.num_examples = static_cast<std::int64_t>(train_count);
  result.update.delta = weights_sub(model.weights(), global);
  result.mean_loss = steps > 0 ? loss_sum / steps : 0.0;
  result.steps = steps;
  if (train_count < partition.size()) {
    const std::vector<ImageSample> holdout(
        partition.begin() + static_cast<std::ptrdiff_t>(train_count),
        partition.end());
    result.validation =
        evaluate_model(model, holdout, metrics, fl.batch_size);
  }
  result.wall_ms = elapsed_ms(started);
  return result;
}

RoundResult run_round(const UNetModel& reference, const ModelWeights& global,
                      const std::vector<std::vector<ImageSample>>& partitions,
                      const FLConfig& fl, const MetricsConfig& metrics,
                      Aggregator& aggregator, int round_index,
                      const std::vector<ImageSample>& eval_split) {
  const auto started = std::chrono::steady_clock::now();
  const int n_clients = static_cast<int>(partitions.size());
  std::vector<LocalTrainResult> results(static_cast<std::size_t>(n_clients));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_clients));

  Rng round_rng = Rng(fl.seed).derive(kSaltClientBase)
                      .derive(static_cast<std::uint64_t>(round_index));
  std::vector<Rng> client_rngs;
  client_rngs.reserve(static_cast<std::size_t>(n_clients));
  for (int c = 0; c < n_clients; ++c) {
    client_rngs.push_back(round_rng.derive(static_cast<std::uint64_t>(c)));
  }

  const int workers = worker_count(fl);
  std::atomic<int> next_client{0};
  auto work = [&]() {
    for (;;) {
      const int c = next_client.fetch_add(1);
      if (c >= n_clients) return;
      try {
        results[static_cast<std::size_t>(c)] =
            local_train(reference, global, partitions[static_cast<std::size_t>(c)],
                        fl, metrics, client_rngs[static_cast<std::size_t>(c)], c);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  // Fixed reduction order: ascending client id, independent of completion.
  std::vector<ClientUpdate> updates;
  updates.reserve(static_cast<std::size_t>(n_clients));
  for (auto& r : results) {
    check_same_structure(global, r.update.delta, "run_round");
    updates.push_back(std::move(r.update));
  }
  const ModelWeights delta = aggregator.aggregate(updates);

  RoundResult out;
  out.global = global;
  weights_axpy(out.global, delta, 1.0f);

  out.log.round = round_index;
  for (int c = 0; c < n_clients; ++c) {
    const auto& r = results[static_cast<std::size_t>(c)];
    out.log.clients.push_back(
        {c, r.mean_loss, r.wall_ms, r.validation});
  }
  UNetModel eval_model = reference;
  eval_model.set_weights(out.global);
  out.log.eval = evaluate_model(eval_model, eval_split, metrics, fl.batch_size);
  out.log.wall_ms = elapsed_ms(started);
  return out;
}

PreparedData prepare_data(const RunConfig& raw_config,
                          std::vector<ImageSample> train_originals,
                          std::vector<ImageSample> test_originals) {
  const RunConfig config = raw_config.with_resolved_seeds();
  const AugmentConfig& aug = config.augment;
  aug.validate();
  PreparedData data;
  const bool featurewise =
      aug.featurewise_center || aug.featurewise_std_normalization;
  if (featurewise) {
    // Stats come from the training split only, before any augmentation
    // randomness, and are reused verbatim at evaluation time.
    if (config.stats) {
      data.stats = *config.stats;
    } else {
      if (train_originals.empty()) {
        throw_validation(
            "feature-wise normalization requested but there are no training "
            "samples (and no precomputed stats)");
      }
      data.stats = compute_channel_stats(train_originals);
    }
  }
  const ChannelStats* stats = data.stats ? &*data.stats : nullptr;
  AugmentConfig no_shift = aug;
  no_shift.width_shift_range = 0.0;
  no_shift.height_shift_range = 0.0;
  Rng aug_rng(aug.seed);
  data.train.reserve(train_originals.size() *
                     (1 + static_cast<std::size_t>(aug.copies_per_original)));
  for (const auto& s : train_originals) {
    data.train.push_back(augment(s, no_shift, stats, aug_rng));
    for (int c = 0; c < aug.copies_per_original; ++c) {
      ImageSample copy = augment(s, aug, stats, aug_rng);
      copy.id = s.id + "#aug" + std::to_string(c);
      data.train.push_back(std::move(copy));
    }
  }
  data.test.reserve(test_originals.size());
  for (const auto& s : test_originals) {
    data.test.push_back(augment(s, no_shift, stats, aug_rng));
  }
  return data;
}

PreparedData prepare_data(const RunConfig& config) {
  if (config.paths.manifest.empty()) {
    throw_validation("config: paths.manifest is required");
  }
  const DatasetManifest manifest = load_manifest(config.paths.manifest);
  std::vector<ImageSample> train, test;
  for (const auto& rec : manifest.records) {
    ImageSample s = load_sample(manifest, rec, config.unet.input_h,
                                config.unet.input_w, config.augment.rescale);
    (rec.split == "train" ? train : test).push_back(std::move(s));
  }
  return prepare_data(config, std::move(train), std::move(test));
}

TrainOutput run_training(const RunConfig& raw_config,
                         std::vector<RoundLogEntry>* partial_rounds) {
  const RunConfig config = raw_config.with_resolved_seeds();
  config.validate();
  const PreparedData data = prepare_data(config);
  return run_training(config, data, partial_rounds);
}

TrainOutput run_training(const RunConfig& raw_config, const PreparedData& data,
                         std::vector<RoundLogEntry>* partial_rounds) {
  const RunConfig config = raw_config.with_resolved_seeds();
  config.validate();
  if (data.test.empty()) {
    throw_validation("training needs a non-empty test split");
  }

  UNetModel reference = UNetModel::build(config.unet);
  ModelWeights global = reference.weights();

  const auto partitions_idx =
      partition_indices(static_cast<int>(data.train.size()),
                        config.fl.num_clients,
                        Rng(config.fl.seed).derive(kSaltPartition));
  std::vector<std::vector<ImageSample>> partitions;
  partitions.reserve(partitions_idx.size());
  for (const auto& idx : partitions_idx) {
    std::vector<ImageSample> part;
    part.reserve(idx.size());
    for (const int i : idx) part.push_back(data.train[static_cast<std::size_t>(i)]);
    partitions.push_back(std::move(part));
  }

  Aggregator aggregator(config.fl.aggregator);
  TrainOutput out{std::move(reference), {}, {}, data.stats};
  for (int round = 1; round <= config.fl.rounds; ++round) {
    try {
      RoundResult r = run_round(out.model, global, partitions, config.fl,
                                config.metrics, aggregator, round, data.test);
      global = std::move(r.global);
      out.rounds.push_back(std::move(r.log));
    } catch (const DivergenceError& e) {
      // Keep the completed rounds' logs; the caller decides what to persist.
      if (partial_rounds) *partial_rounds = out.rounds;
      throw DivergenceError("round " + std::to_string(round) + ": " +
                            e.what());
    }
  }
  out.model.set_weights(global);
  if (!out.rounds.empty()) {
    out.final_report = out.rounds.back().eval;
  } else {
    out.final_report =
        evaluate_model(out.model, data.test, config.metrics,
                       config.fl.batch_size);
  }
  return out;
}

std::string roundlog_csv(const std::vector<RoundLogEntry>& rounds) {
  std::string csv =
      "round,client_id,loss,accuracy,auc,recall,precision,dice,iou,wall_ms\n";
  for (const auto& r : rounds) {
    for (const auto& c : r.clients) {
      csv += std::to_string(r.round) + "," + std::to_string(c.client_id) +
             "," + csv_num(c.train_loss) + ",";
      if (c.validation) {
        const MetricsReport& v = *c.validation;
        csv += csv_num(v.accuracy) + "," + csv_num(v.auc) + "," +
               csv_num(v.recall) + "," + csv_num(v.precision) + "," +
               csv_num(v.dice) + "," + csv_num(v.iou);
      } else {
        csv += ",,,,,";
      }
      csv += "," + csv_num(c.wall_ms) + "\n";
    }
    const MetricsReport& e = r.eval;
    csv += std::to_string(r.round) + ",global," + csv_num(e.bce_dice) + "," +
           csv_num(e.accuracy) + "," + csv_num(e.auc) + "," +
           csv_num(e.recall) + "," + csv_num(e.precision) + "," +
           csv_num(e.dice) + "," + csv_num(e.iou) + "," + csv_num(r.wall_ms) +
           "\n";
  }
  return csv;
}

EvalSplit load_eval_split(const RunConfig& raw_config,
                          const std::string& manifest_path,
                          const std::string& split) {
  const RunConfig config = raw_config.with_resolved_seeds();
  if (split != "train" && split != "test") {
    throw_validation("unknown split \"" + split +
                     "\" (expected train or test)");
  }
  const std::string path =
      manifest_path.empty() ? config.paths.manifest : manifest_path;
  if (path.empty()) throw_validation("no manifest given");
  const DatasetManifest manifest = load_manifest(path);
  const auto records = manifest.split(split);
  if (records.empty()) {
    throw_validation("manifest " + path + " has no \"" + split +
                     "\" records");
  }
  const bool featurewise = config.augment.featurewise_center ||
                           config.augment.featurewise_std_normalization;
  if (featurewise && !config.stats) {
    throw_validation(
        "feature-wise normalization is enabled but the config carries no "
        "dataset stats; pass the config.json written by training");
  }
  EvalSplit out;
  AugmentConfig no_shift = config.augment;
  no_shift.width_shift_range = 0.0;
  no_shift.height_shift_range = 0.0;
  Rng rng(config.augment.seed);
  const ChannelStats* stats = config.stats ? &*config.stats : nullptr;
  for (const auto& rec : records) {
    ImageSample s = load_sample(manifest, rec, config.unet.input_h,
                                config.unet.input_w, config.augment.rescale);
    out.inputs.push_back(augment(s, no_shift, stats, rng));
    out.originals.push_back(std::move(s));
  }
  return out;
}

std::string compare_aggregators_csv(
    const RunConfig& base_config,
    const std::vector<std::string>& aggregator_names,
    const std::vector<std::uint64_t>& seeds) {
  if (aggregator_names.empty()) {
    throw_validation("compare: need at least one aggregator");
  }
  if (seeds.empty()) throw_validation("compare: need at least one seed");
  std::vector<AggregatorSpec> specs;
  for (const auto& name : aggregator_names) {
    AggregatorSpec spec = AggregatorSpec::parse_kind(name);
    if (spec.kind == base_config.fl.aggregator.kind) {
      spec = base_config.fl.aggregator;  // keep tuned parameters
    }
    // Noise streams derive from the per-run seed.
    spec.dp.seed = 0;
    spec.adaptive.seed = 0;
    specs.push_back(spec);
  }
  std::vector<std::vector<MetricsReport>> reports(specs.size());
  for (const std::uint64_t seed : seeds) {
    RunConfig cfg = base_config;
    cfg.seed = seed;
    cfg.unet.seed = 0;
    cfg.fl.seed = 0;
    cfg.augment.seed = 0;
    cfg = cfg.with_resolved_seeds();
    // Same seed means the same data, partitions and init for every
    // aggregator; only the combination rule differs.
    const PreparedData data = prepare_data(cfg);
    for (std::size_t a = 0; a < specs.size(); ++a) {
      RunConfig run_cfg = cfg;
      run_cfg.fl.aggregator = specs[a];
      run_cfg = run_cfg.with_resolved_seeds();
      reports[a].push_back(run_training(run_cfg, data).final_report);
    }
  }
  std::string csv = MetricsReport::csv_comment();
  csv += "aggregator,seed,dice,bce_dice_loss,iou,rmse,ssim,scd\n";
  for (std::size_t a = 0; a < specs.size(); ++a) {
    double sums[6] = {0, 0, 0, 0, 0, 0};
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const MetricsReport& r = reports[a][s];
      const double cols[6] = {r.dice, r.bce_dice, r.iou, r.rmse, r.ssim, r.scd};
      csv += specs[a].name() + "," + std::to_string(seeds[s]);
      for (int c = 0; c < 6; ++c) {
        csv += "," + csv_num(cols[c]);
        sums[c] += cols[c];
      }
      csv += "\n";
    }
    csv += specs[a].name() + ",mean";
    for (double sum : sums) {
      csv += "," + csv_num(sum / static_cast<double>(seeds.size()));
    }
    csv += "\n";
  }
  return csv;
}

void write_training_artifacts(const RunConfig& resolved_config,
                              const TrainOutput& output,
                              const std::string& out_dir) {
  ensure_directory(out_dir);
  RunConfig cfg = resolved_config;
  cfg.stats = output.stats;
  cfg.paths.out_dir = out_dir;
  atomic_write_file(join_path(out_dir, "config.json"), cfg.to_json_text());
  if (output.stats) {
    save_stats(*output.stats, join_path(out_dir, "stats.json"));
  }
  atomic_write_file(join_path(out_dir, "roundlog.csv"),
                    roundlog_csv(output.rounds));
  std::string metrics_csv =
      MetricsReport::csv_comment() + MetricsReport::csv_header() +
      output.final_report.csv_row("fl_unet_" + cfg.fl.aggregator.name(),
                                  "test");
  atomic_write_file(join_path(out_dir, "metrics.csv"), metrics_csv);
  save_checkpoint(output.model.weights(),
                  join_path(out_dir, "checkpoint.fseg"));
}

}  // namespace fedseg
