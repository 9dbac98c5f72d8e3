#include "fedseg/config.hpp"

#include <set>

#include <json.hpp>

namespace fedseg {

using nlohmann::json;

void FLConfig::validate() const {
  if (num_clients < 1) throw_validation("fl: num_clients must be >= 1");
  if (rounds < 0) throw_validation("fl: rounds must be >= 0");
  if (local_epochs < 0) throw_validation("fl: local_epochs must be >= 0");
  if (batch_size < 1) throw_validation("fl: batch_size must be >= 1");
  if (shuffle_buffer < batch_size) {
    throw_validation("fl: shuffle_buffer must be >= batch_size");
  }
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
    throw_validation("fl: validation_fraction must be in [0, 1)");
  }
  if (workers < 0) throw_validation("fl: workers must be >= 0");
  if (!(adam.lr >= 0.0)) throw_validation("fl: learning rate must be >= 0");
  aggregator.validate();
}

void RunConfig::validate() const {
  unet.validate();
  fl.validate();
  augment.validate();
  metrics.validate();
}

namespace {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt) {
  return Rng(master).derive(salt).seed();
}

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) {
      throw_validation("config: unknown key \"" + key + "\" in " + where);
    }
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw_validation("config: bad value for \"" + std::string(key) +
                     "\": " + e.what());
  }
}

AggregatorSpec parse_aggregator(const json& j) {
  check_keys(j,
             {"kind", "weight_by_examples", "clip_norm", "noise_multiplier",
              "initial_clip", "target_quantile", "learning_rate", "seed"},
             "fl.aggregator");
  std::string kind = "mean";
  read_field(j, "kind", kind);
  AggregatorSpec spec = AggregatorSpec::parse_kind(kind);
  read_field(j, "weight_by_examples", spec.weight_by_examples);
  read_field(j, "clip_norm", spec.dp.clip_norm);
  read_field(j, "seed", spec.dp.seed);
  if (spec.kind == AggregatorKind::AdaptiveQuantile) {
    read_field(j, "noise_multiplier", spec.adaptive.noise_multiplier);
    read_field(j, "initial_clip", spec.adaptive.initial_clip);
    read_field(j, "target_quantile", spec.adaptive.target_quantile);
    read_field(j, "learning_rate", spec.adaptive.learning_rate);
    read_field(j, "seed", spec.adaptive.seed);
  } else {
    read_field(j, "noise_multiplier", spec.dp.noise_multiplier);
  }
  return spec;
}

json aggregator_to_json(const AggregatorSpec& spec) {
  json j;
  j["kind"] = spec.name();
  j["weight_by_examples"] = spec.weight_by_examples;
  switch (spec.kind) {
    case AggregatorKind::Mean:
      break;
    case AggregatorKind::Dp:
      j["clip_norm"] = spec.dp.clip_norm;
      j["noise_multiplier"] = spec.dp.noise_multiplier;
      j["seed"] = spec.dp.seed;
      break;
    case AggregatorKind::AdaptiveQuantile:
      j["initial_clip"] = spec.adaptive.initial_clip;
      j["target_quantile"] = spec.adaptive.target_quantile;
      j["learning_rate"] = spec.adaptive.learning_rate;
      j["noise_multiplier"] = spec.adaptive.noise_multiplier;
      j["seed"] = spec.adaptive.seed;
      break;
  }
  return j;
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw_validation(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw_validation("config must be a JSON object");
  check_keys(j, {"seed", "unet", "fl", "augment", "metrics", "paths", "stats"},
             "config");
  RunConfig cfg;
  read_field(j, "seed", cfg.seed);
  if (j.contains("unet")) {
    const json& u = j.at("unet");
    check_keys(u,
               {"input_h", "input_w", "input_channels", "output_channels",
                "width_scale", "dropout_rates", "seed"},
               "unet");
    read_field(u, "input_h", cfg.unet.input_h);
    read_field(u, "input_w", cfg.unet.input_w);
    read_field(u, "input_channels", cfg.unet.input_channels);
    read_field(u, "output_channels", cfg.unet.output_channels);
    read_field(u, "width_scale", cfg.unet.width_scale);
    read_field(u, "seed", cfg.unet.seed);
    if (u.contains("dropout_rates")) {
      const auto rates = u.at("dropout_rates").get<std::vector<double>>();
      if (rates.size() != cfg.unet.dropout_rates.size()) {
        throw_validation("config: unet.dropout_rates must list 5 rates");
      }
      std::copy(rates.begin(), rates.end(), cfg.unet.dropout_rates.begin());
    }
  }
  if (j.contains("fl")) {
    const json& f = j.at("fl");
    check_keys(f,
               {"num_clients", "rounds", "local_epochs", "batch_size",
                "shuffle_buffer", "seed", "aggregator", "validation_fraction",
                "workers", "learning_rate"},
               "fl");
    read_field(f, "num_clients", cfg.fl.num_clients);
    read_field(f, "rounds", cfg.fl.rounds);
    read_field(f, "local_epochs", cfg.fl.local_epochs);
    read_field(f, "batch_size", cfg.fl.batch_size);
    read_field(f, "shuffle_buffer", cfg.fl.shuffle_buffer);
    read_field(f, "seed", cfg.fl.seed);
    read_field(f, "validation_fraction", cfg.fl.validation_fraction);
    read_field(f, "workers", cfg.fl.workers);
    read_field(f, "learning_rate", cfg.fl.adam.lr);
    if (f.contains("aggregator")) {
      cfg.fl.aggregator = parse_aggregator(f.at("aggregator"));
    }
  }
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    check_keys(a,
               {"rescale", "width_shift_range", "height_shift_range",
                "featurewise_center", "featurewise_std_normalization",
                "copies_per_original", "seed"},
               "augment");
    read_field(a, "rescale", cfg.augment.rescale);
    read_field(a, "width_shift_range", cfg.augment.width_shift_range);
    read_field(a, "height_shift_range", cfg.augment.height_shift_range);
    read_field(a, "featurewise_center", cfg.augment.featurewise_center);
    read_field(a, "featurewise_std_normalization",
               cfg.augment.featurewise_std_normalization);
    read_field(a, "copies_per_original", cfg.augment.copies_per_original);
    read_field(a, "seed", cfg.augment.seed);
  }
  if (j.contains("metrics")) {
    const json& m = j.at("metrics");
    check_keys(m, {"dice_epsilon", "binarize_threshold", "ssim_window"},
               "metrics");
    read_field(m, "dice_epsilon", cfg.metrics.dice_epsilon);
    read_field(m, "binarize_threshold", cfg.metrics.binarize_threshold);
    read_field(m, "ssim_window", cfg.metrics.ssim_window);
  }
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    check_keys(p, {"manifest", "out_dir"}, "paths");
    read_field(p, "manifest", cfg.paths.manifest);
    read_field(p, "out_dir", cfg.paths.out_dir);
  }
  if (j.contains("stats")) {
    const json& s = j.at("stats");
    check_keys(s, {"mean", "stddev"}, "stats");
    ChannelStats stats;
    try {
      stats.mean = s.at("mean").get<std::array<double, 3>>();
      stats.stddev = s.at("stddev").get<std::array<double, 3>>();
    } catch (const json::exception& e) {
      throw_validation(std::string("config: bad stats block: ") + e.what());
    }
    cfg.stats = stats;
  }
  return cfg;
}

std::string RunConfig::to_json_text() const {
  json j;
  j["seed"] = seed;
  j["unet"] = {{"input_h", unet.input_h},
               {"input_w", unet.input_w},
               {"input_channels", unet.input_channels},
               {"output_channels", unet.output_channels},
               {"width_scale", unet.width_scale},
               {"dropout_rates", unet.dropout_rates},
               {"seed", unet.seed}};
  j["fl"] = {{"num_clients", fl.num_clients},
             {"rounds", fl.rounds},
             {"local_epochs", fl.local_epochs},
             {"batch_size", fl.batch_size},
             {"shuffle_buffer", fl.shuffle_buffer},
             {"seed", fl.seed},
             {"validation_fraction", fl.validation_fraction},
             {"workers", fl.workers},
             {"learning_rate", fl.adam.lr},
             {"aggregator", aggregator_to_json(fl.aggregator)}};
  j["augment"] = {{"rescale", augment.rescale},
                  {"width_shift_range", augment.width_shift_range},
                  {"height_shift_range", augment.height_shift_range},
                  {"featurewise_center", augment.featurewise_center},
                  {"featurewise_std_normalization",
                   augment.featurewise_std_normalization},
                  {"copies_per_original", augment.copies_per_original},
                  {"seed", augment.seed}};
  j["metrics"] = {{"dice_epsilon", metrics.dice_epsilon},
                  {"binarize_threshold", metrics.binarize_threshold},
                  {"ssim_window", metrics.ssim_window}};
  j["paths"] = {{"manifest", paths.manifest}, {"out_dir", paths.out_dir}};
  if (stats) {
    j["stats"] = {{"mean", stats->mean}, {"stddev", stats->stddev}};
  }
  return j.dump(2) + "\n";
}

RunConfig RunConfig::with_resolved_seeds() const {
  RunConfig cfg = *this;
  if (cfg.unet.seed == 0) cfg.unet.seed = derive_seed(cfg.seed, 0x11);
  if (cfg.fl.seed == 0) cfg.fl.seed = derive_seed(cfg.seed, 0x22);
  if (cfg.augment.seed == 0) cfg.augment.seed = derive_seed(cfg.seed, 0x33);
  auto& agg = cfg.fl.aggregator;
  if (agg.kind == AggregatorKind::Dp && agg.dp.seed == 0) {
    agg.dp.seed = derive_seed(cfg.seed, 0x44);
  }
  if (agg.kind == AggregatorKind::AdaptiveQuantile &&
      agg.adaptive.seed == 0) {
    agg.adaptive.seed = derive_seed(cfg.seed, 0x44);
  }
  return cfg;
}

}  // namespace fedseg
