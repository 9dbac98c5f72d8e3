#include "fedseg.h"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <string>

#include "fedseg/checkpoint.hpp"
#include "fedseg/config.hpp"
#include "fedseg/federation.hpp"
#include "fedseg/image.hpp"
#include "fedseg/io.hpp"
#include "fedseg/metrics.hpp"
#include "fedseg/unet.hpp"

struct fedseg_model {
  fedseg::UNetModel model;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

template <typename Fn>
fedseg_status guarded(Fn&& fn) {
  try {
    fn();
    return FEDSEG_OK;
  } catch (const fedseg::Error& e) {
    set_error(e.what());
    return static_cast<fedseg_status>(static_cast<int>(e.kind()));
  } catch (const std::exception& e) {
    set_error(e.what());
    return FEDSEG_ERROR_RUNTIME;
  }
}

char* copy_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string require(const char* arg, const char* name) {
  if (!arg) {
    fedseg::throw_validation(std::string(name) + " must not be NULL");
  }
  return arg;
}

template <typename T>
T* require_ptr(T* p, const char* name) {
  if (!p) fedseg::throw_validation(std::string(name) + " must not be NULL");
  return p;
}

fedseg::RunConfig parse_config(const char* config_json) {
  return fedseg::RunConfig::from_json_text(require(config_json, "config_json"))
      .with_resolved_seeds();
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : text) {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

extern "C" {

const char* fedseg_version(void) { return "0.1.0"; }

const char* fedseg_last_error(void) { return g_last_error.c_str(); }

void fedseg_string_free(char* s) { delete[] s; }

fedseg_status fedseg_model_build(const char* config_json,
                                 fedseg_model** out_model) {
  return guarded([&] {
    require_ptr(out_model, "out_model");
    const fedseg::RunConfig cfg = parse_config(config_json);
    *out_model = new fedseg_model{fedseg::UNetModel::build(cfg.unet)};
  });
}

fedseg_status fedseg_model_open(const char* config_json,
                                const char* checkpoint_path,
                                fedseg_model** out_model) {
  return guarded([&] {
    require_ptr(out_model, "out_model");
    const fedseg::RunConfig cfg = parse_config(config_json);
    fedseg::UNetModel model = fedseg::UNetModel::build(cfg.unet);
    const fedseg::ModelWeights loaded =
        fedseg::load_checkpoint(require(checkpoint_path, "checkpoint_path"));
    fedseg::apply_checkpoint(model.weights(), loaded);
    *out_model = new fedseg_model{std::move(model)};
  });
}

fedseg_status fedseg_model_save(const fedseg_model* model,
                                const char* checkpoint_path) {
  return guarded([&] {
    require_ptr(model, "model");
    fedseg::save_checkpoint(model->model.weights(),
                            require(checkpoint_path, "checkpoint_path"));
  });
}

void fedseg_model_free(fedseg_model* model) { delete model; }

fedseg_status fedseg_model_param_counts(const fedseg_model* model,
                                        uint64_t* total, uint64_t* trainable,
                                        uint64_t* non_trainable) {
  return guarded([&] {
    require_ptr(model, "model");
    if (total) *total = model->model.total_params();
    if (trainable) *trainable = model->model.trainable_params();
    if (non_trainable) *non_trainable = model->model.non_trainable_params();
  });
}

fedseg_status fedseg_model_summary(const fedseg_model* model,
                                   const char* format, char** out_text) {
  return guarded([&] {
    require_ptr(model, "model");
    require_ptr(out_text, "out_text");
    const std::string fmt = format ? format : "table";
    *out_text = copy_string(fedseg::format_layer_table(model->model, fmt));
  });
}

fedseg_status fedseg_generate_synthetic(const char* out_dir,
                                        int32_t train_count,
                                        int32_t test_count, int32_t height,
                                        int32_t width, uint64_t seed,
                                        int32_t force) {
  return guarded([&] {
    const std::string dir = require(out_dir, "out_dir");
    if (train_count <= 0) {
      fedseg::throw_validation("train count must be positive, got " +
                               std::to_string(train_count));
    }
    if (test_count < 0) {
      fedseg::throw_validation("test count must be >= 0");
    }
    const std::string manifest_path =
        fedseg::join_path(dir, "manifest.jsonl");
    if (!force && fedseg::path_exists(manifest_path)) {
      fedseg::throw_validation("refusing to overwrite " + manifest_path +
                               " (use --force)");
    }
    fedseg::ensure_directory(dir);
    fedseg::ensure_directory(fedseg::join_path(dir, "images"));
    fedseg::ensure_directory(fedseg::join_path(dir, "masks"));
    fedseg::Rng rng(seed);
    std::string manifest;
    const auto emit = [&](const std::vector<fedseg::ImageSample>& samples,
                          const char* split, const char* prefix) {
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::string stem =
            fedseg::strfmt("%s_%05zu.png", prefix, i);
        const std::string image_rel = "images/" + stem;
        const std::string mask_rel = "masks/" + stem;
        fedseg::encode_png(fedseg::join_path(dir, image_rel),
                           fedseg::float_to_image(samples[i].image));
        fedseg::encode_png(fedseg::join_path(dir, mask_rel),
                           fedseg::float_to_image(samples[i].mask));
        manifest += "{\"image_path\": \"" + image_rel +
                    "\", \"mask_path\": \"" + mask_rel + "\", \"split\": \"" +
                    split + "\"}\n";
      }
    };
    fedseg::Rng train_rng = rng.derive(1);
    fedseg::Rng test_rng = rng.derive(2);
    emit(fedseg::generate_synthetic(train_count, height, width, train_rng),
         "train", "train");
    if (test_count > 0) {
      emit(fedseg::generate_synthetic(test_count, height, width, test_rng),
           "test", "test");
    }
    fedseg::atomic_write_file(manifest_path, manifest);
  });
}

fedseg_status fedseg_train(const char* config_json, const char* out_dir) {
  return guarded([&] {
    fedseg::RunConfig cfg = parse_config(config_json);
    if (out_dir) cfg.paths.out_dir = out_dir;
    if (cfg.paths.out_dir.empty()) {
      fedseg::throw_validation("no output directory (paths.out_dir)");
    }
    cfg.validate();
    const fedseg::PreparedData data = fedseg::prepare_data(cfg);
    std::vector<fedseg::RoundLogEntry> partial;
    try {
      const fedseg::TrainOutput out =
          fedseg::run_training(cfg, data, &partial);
      fedseg::RunConfig resolved = cfg;
      resolved.stats = out.stats;
      fedseg::write_training_artifacts(resolved, out, cfg.paths.out_dir);
    } catch (const fedseg::DivergenceError&) {
      // Keep whatever rounds completed for post-mortem reading.
      fedseg::ensure_directory(cfg.paths.out_dir);
      fedseg::atomic_write_file(
          fedseg::join_path(cfg.paths.out_dir, "roundlog.csv"),
          fedseg::roundlog_csv(partial));
      throw;
    }
  });
}

fedseg_status fedseg_evaluate(const char* config_json,
                              const char* checkpoint_path,
                              const char* manifest_path, const char* split,
                              const char* label, const char* out_csv_path,
                              char** out_csv) {
  return guarded([&] {
    const fedseg::RunConfig cfg = parse_config(config_json);
    fedseg::UNetModel model = fedseg::UNetModel::build(cfg.unet);
    const fedseg::ModelWeights loaded =
        fedseg::load_checkpoint(require(checkpoint_path, "checkpoint_path"));
    fedseg::apply_checkpoint(model.weights(), loaded);
    const fedseg::EvalSplit data = fedseg::load_eval_split(
        cfg, manifest_path ? manifest_path : "", require(split, "split"));
    const fedseg::MetricsReport report = fedseg::evaluate_model(
        model, data.inputs, cfg.metrics, cfg.fl.batch_size);
    const std::string text =
        fedseg::MetricsReport::csv_comment() +
        fedseg::MetricsReport::csv_header() +
        report.csv_row(label ? label : "model", split);
    if (out_csv_path) fedseg::atomic_write_file(out_csv_path, text);
    if (out_csv) *out_csv = copy_string(text);
  });
}

fedseg_status fedseg_compare_aggregators(const char* config_json,
                                         const char* aggregators,
                                         const char* seeds,
                                         const char* out_csv_path,
                                         char** out_csv) {
  return guarded([&] {
    const fedseg::RunConfig cfg = parse_config(config_json);
    const auto agg_names = split_list(require(aggregators, "aggregators"));
    std::vector<std::uint64_t> seed_list;
    for (const std::string& s : split_list(require(seeds, "seeds"))) {
      try {
        seed_list.push_back(std::stoull(s));
      } catch (const std::exception&) {
        fedseg::throw_validation("bad seed \"" + s + "\"");
      }
    }
    const std::string csv =
        fedseg::compare_aggregators_csv(cfg, agg_names, seed_list);
    if (out_csv_path) fedseg::atomic_write_file(out_csv_path, csv);
    if (out_csv) *out_csv = copy_string(csv);
  });
}

fedseg_status fedseg_export_crops(const char* config_json,
                                  const char* checkpoint_path,
                                  const char* manifest_path, const char* split,
                                  const char* out_dir, char** out_report) {
  return guarded([&] {
    const fedseg::RunConfig cfg = parse_config(config_json);
    fedseg::UNetModel model = fedseg::UNetModel::build(cfg.unet);
    const fedseg::ModelWeights loaded =
        fedseg::load_checkpoint(require(checkpoint_path, "checkpoint_path"));
    fedseg::apply_checkpoint(model.weights(), loaded);
    const fedseg::EvalSplit data = fedseg::load_eval_split(
        cfg, manifest_path ? manifest_path : "", require(split, "split"));
    std::vector<fedseg::Tensor> preds;
    preds.reserve(data.inputs.size());
    const int h = cfg.unet.input_h, w = cfg.unet.input_w;
    const std::int64_t len =
        static_cast<std::int64_t>(h) * w * cfg.unet.input_channels;
    for (std::size_t start = 0; start < data.inputs.size();
         start += static_cast<std::size_t>(cfg.fl.batch_size)) {
      const std::size_t end =
          std::min(data.inputs.size(),
                   start + static_cast<std::size_t>(cfg.fl.batch_size));
      const std::int64_t n = static_cast<std::int64_t>(end - start);
      fedseg::Tensor batch({n, h, w, cfg.unet.input_channels});
      for (std::int64_t b = 0; b < n; ++b) {
        const auto& im = data.inputs[start + static_cast<std::size_t>(b)].image;
        std::copy(im.data(), im.data() + len, batch.data() + b * len);
      }
      const fedseg::Tensor pred = fedseg::unet_infer(model, batch);
      const std::int64_t out_len = pred.size() / n;
      for (std::int64_t b = 0; b < n; ++b) {
        fedseg::Tensor single(
            {h, w, static_cast<std::int64_t>(cfg.unet.output_channels)});
        std::copy(pred.data() + b * out_len, pred.data() + (b + 1) * out_len,
                  single.data());
        preds.push_back(std::move(single));
      }
    }
    const auto results = fedseg::export_crops(
        data.originals, preds, require(out_dir, "out_dir"));
    std::string report;
    for (const auto& r : results) {
      report += r.id + "," + (r.path.empty() ? "(empty mask)" : r.path) +
                "," + std::to_string(r.area) + "\n";
    }
    if (out_report) *out_report = copy_string(report);
  });
}

}  // extern "C"
