#include "fedseg/unet.hpp"

#include <cmath>
#include <map>
#include <unordered_map>

#include "fedseg/common.hpp"
#include "fedseg/kernels.hpp"
#include "fedseg/tape.hpp"

namespace fedseg {

namespace {

// Encoder conv filter pairs at width_scale 1, shallow to deep.
constexpr int kEncoderFilters[5][2] = {
    {32, 16}, {64, 32}, {128, 64}, {256, 128}, {512, 256}};
// Transposed-conv output channels per decoder block.
constexpr int kUpFilters[4] = {128, 64, 32, 16};
// Conv channels inside each decoder block.
constexpr int kDecoderFilters[4] = {256, 128, 64, 32};

std::int64_t scaled_filters(int base, double scale) {
  const double v = static_cast<double>(base) * scale;
  const std::int64_t r = std::llround(v);
  if (r < 1 || std::abs(v - static_cast<double>(r)) > 1e-9) {
    throw_validation("width_scale " + std::to_string(scale) +
                     " makes filter count " + std::to_string(base) +
                     " non-integral (" + std::to_string(v) + ")");
  }
  return r;
}

// Keras-style naming: the first instance of a type has the bare name and
// later ones get _1, _2, ... The add layers start at add_1 to reproduce the
// reference layer listing.
class NameCounter {
 public:
  std::string next(const std::string& base) {
    int& n = counts_[base];
    const int start = base == "add" ? 1 : 0;
    const int id = n + start;
    ++n;
    if (id == 0) return base;
    return base + "_" + std::to_string(id);
  }

 private:
  std::map<std::string, int> counts_;
};

}  // namespace

void UNetConfig::validate() const {
  if (input_h <= 0 || input_w <= 0 || input_h % 16 != 0 || input_w % 16 != 0) {
    throw_validation("unet: input extents must be positive multiples of 16, "
                     "got " + std::to_string(input_h) + "x" +
                     std::to_string(input_w));
  }
  if (input_channels < 1 || output_channels < 1) {
    throw_validation("unet: channel counts must be >= 1");
  }
  if (!(width_scale > 0.0)) {
    throw_validation("unet: width_scale must be positive, got " +
                     std::to_string(width_scale));
  }
  for (const double r : dropout_rates) {
    if (r < 0.0 || r >= 1.0) {
      throw_validation("unet: dropout rates must be in [0, 1), got " +
                       std::to_string(r));
    }
  }
  for (const auto& pair : kEncoderFilters) {
    scaled_filters(pair[0], width_scale);
    scaled_filters(pair[1], width_scale);
  }
  for (const int f : kUpFilters) scaled_filters(f, width_scale);
  for (const int f : kDecoderFilters) scaled_filters(f, width_scale);
}

UNetConfig UNetConfig::full_size() {
  UNetConfig c;
  c.input_h = 192;
  c.input_w = 192;
  c.input_channels = 3;
  c.output_channels = 3;
  c.width_scale = 1.0;
  c.dropout_rates = {0.1, 0.1, 0.2, 0.2, 0.3};
  return c;
}

const char* LayerDesc::type_name() const {
  switch (kind) {
    case LayerKind::Input: return "InputLayer";
    case LayerKind::Conv: return "Conv2D";
    case LayerKind::ConvTranspose: return "Conv2DTranspose";
    case LayerKind::BatchNorm: return "BatchNormalization";
    case LayerKind::Dropout: return "Dropout";
    case LayerKind::MaxPool: return "MaxPooling2D";
    case LayerKind::Concat: return "Concatenate";
    case LayerKind::Add: return "Add";
  }
  return "?";
}

std::string LayerDesc::output_shape_str() const {
  return "(None, " + std::to_string(out_h) + ", " + std::to_string(out_w) +
         ", " + std::to_string(out_c) + ")";
}

namespace {

struct PlanBuilder {
  std::vector<LayerDesc>& plan;
  ModelWeights& weights;
  NameCounter names;

  int last() const { return static_cast<int>(plan.size()) - 1; }

  int conv(int input, std::int64_t filters, int ksize, bool with_relu) {
    const LayerDesc& in = plan[static_cast<std::size_t>(input)];
    LayerDesc d;
    d.name = names.next("conv2d");
    d.kind = LayerKind::Conv;
    d.out_h = in.out_h;
    d.out_w = in.out_w;
    d.out_c = filters;
    d.inputs = {input};
    d.ksize = ksize;
    d.relu = with_relu;
    d.weight_names = {d.name + "/kernel", d.name + "/bias"};
    weights.entries.push_back(
        {d.weight_names[0],
         Tensor({ksize, ksize, in.out_c, filters}), true});
    weights.entries.push_back({d.weight_names[1], Tensor({filters}), true});
    d.params = ksize * ksize * in.out_c * filters + filters;
    d.trainable_params = d.params;
    plan.push_back(std::move(d));
    return last();
  }

  int conv_transpose(int input, std::int64_t filters) {
    const LayerDesc& in = plan[static_cast<std::size_t>(input)];
    LayerDesc d;
    d.name = names.next("conv2d_transpose");
    d.kind = LayerKind::ConvTranspose;
    d.out_h = in.out_h * 2;
    d.out_w = in.out_w * 2;
    d.out_c = filters;
    d.inputs = {input};
    d.ksize = 2;
    d.relu = true;
    d.weight_names = {d.name + "/kernel", d.name + "/bias"};
    weights.entries.push_back(
        {d.weight_names[0], Tensor({2, 2, in.out_c, filters}), true});
    weights.entries.push_back({d.weight_names[1], Tensor({filters}), true});
    d.params = 2 * 2 * in.out_c * filters + filters;
    d.trainable_params = d.params;
    plan.push_back(std::move(d));
    return last();
  }

  int batchnorm(int input) {
    const LayerDesc& in = plan[static_cast<std::size_t>(input)];
    LayerDesc d;
    d.name = names.next("batch_normalization");
    d.kind = LayerKind::BatchNorm;
    d.out_h = in.out_h;
    d.out_w = in.out_w;
    d.out_c = in.out_c;
    d.inputs = {input};
    const std::int64_t c = in.out_c;
    d.weight_names = {d.name + "/gamma", d.name + "/beta",
                      d.name + "/moving_mean", d.name + "/moving_variance"};
    weights.entries.push_back(
        {d.weight_names[0], Tensor::full({c}, 1.0f), true});
    weights.entries.push_back({d.weight_names[1], Tensor({c}), true});
    weights.entries.push_back({d.weight_names[2], Tensor({c}), false});
    weights.entries.push_back(
        {d.weight_names[3], Tensor::full({c}, 1.0f), false});
    d.params = 4 * c;
    d.trainable_params = 2 * c;
    plan.push_back(std::move(d));
    return last();
  }

  int dropout(int input, double rate) {
    const LayerDesc& in = plan[static_cast<std::size_t>(input)];
    LayerDesc d;
    d.name = names.next("dropout");
    d.kind = LayerKind::Dropout;
    d.out_h = in.out_h;
    d.out_w = in.out_w;
    d.out_c = in.out_c;
    d.inputs = {input};
    d.rate = rate;
    plan.push_back(std::move(d));
    return last();
  }

  int maxpool(int input) {
    const LayerDesc& in = plan[static_cast<std::size_t>(input)];
    LayerDesc d;
    d.name = names.next("max_pooling2d");
    d.kind = LayerKind::MaxPool;
    d.out_h = in.out_h / 2;
    d.out_w = in.out_w / 2;
    d.out_c = in.out_c;
    d.inputs = {input};
    plan.push_back(std::move(d));
    return last();
  }

  int concat(int a, int b) {
    const LayerDesc& da = plan[static_cast<std::size_t>(a)];
    const LayerDesc& db = plan[static_cast<std::size_t>(b)];
    LayerDesc d;
    d.name = names.next("concatenate");
    d.kind = LayerKind::Concat;
    d.out_h = da.out_h;
    d.out_w = da.out_w;
    d.out_c = da.out_c + db.out_c;
    d.inputs = {a, b};
    plan.push_back(std::move(d));
    return last();
  }

  int add(int a, int b) {
    const LayerDesc& da = plan[static_cast<std::size_t>(a)];
    LayerDesc d;
    d.name = names.next("add");
    d.kind = LayerKind::Add;
    d.out_h = da.out_h;
    d.out_w = da.out_w;
    d.out_c = da.out_c;
    d.inputs = {a, b};
    plan.push_back(std::move(d));
    return last();
  }
};

}  // namespace

UNetModel UNetModel::build(const UNetConfig& config) {
  config.validate();
  UNetModel model;
  model.config_ = config;
  PlanBuilder b{model.plan_, model.weights_, {}};

  LayerDesc input;
  input.name = "img";
  input.kind = LayerKind::Input;
  input.out_h = config.input_h;
  input.out_w = config.input_w;
  input.out_c = config.input_channels;
  model.plan_.push_back(std::move(input));

  const double s = config.width_scale;
  int cur = 0;
  int skips[4] = {0, 0, 0, 0};
  for (int blk = 0; blk < 5; ++blk) {
    cur = b.conv(cur, scaled_filters(kEncoderFilters[blk][0], s), 3, true);
    cur = b.conv(cur, scaled_filters(kEncoderFilters[blk][1], s), 3, true);
    // The second block orders dropout before batchnorm; the others the
    // reverse. This mirrors the reference layer listing exactly.
    if (blk == 1) {
      cur = b.dropout(cur, config.dropout_rates[static_cast<std::size_t>(blk)]);
      cur = b.batchnorm(cur);
    } else {
      cur = b.batchnorm(cur);
      cur = b.dropout(cur, config.dropout_rates[static_cast<std::size_t>(blk)]);
    }
    if (blk < 4) {
      skips[blk] = cur;
      cur = b.maxpool(cur);
    }
  }

  for (int blk = 0; blk < 4; ++blk) {
    const double rate = config.dropout_rates[static_cast<std::size_t>(4 - blk)];
    const std::int64_t cf = scaled_filters(kDecoderFilters[blk], s);
    cur = b.conv_transpose(cur, scaled_filters(kUpFilters[blk], s));
    const int cat = b.concat(cur, skips[3 - blk]);
    if (blk == 0) {
      cur = b.conv(cat, cf, 3, true);
      cur = b.conv(cur, cf, 3, false);
      cur = b.batchnorm(cur);
      cur = b.dropout(cur, rate);
    } else {
      cur = b.conv(cat, cf, 3, true);
      cur = b.batchnorm(cur);
      cur = b.dropout(cur, rate);
      cur = b.conv(cur, cf, 3, false);
      cur = b.batchnorm(cur);
      cur = b.add(cat, cur);
    }
  }

  b.conv(cur, config.output_channels, 1, false);

  // Seeded Glorot-uniform kernels; biases zero, batchnorm at identity.
  Rng init_rng(config.seed);
  for (std::size_t i = 0; i < model.weights_.entries.size(); ++i) {
    auto& e = model.weights_.entries[i];
    if (e.tensor.rank() != 4) continue;  // only conv kernels
    const std::int64_t kh = e.tensor.dim(0), kw = e.tensor.dim(1),
                       cin = e.tensor.dim(2), cout = e.tensor.dim(3);
    const double fan_in = static_cast<double>(kh * kw * cin);
    const double fan_out = static_cast<double>(kh * kw * cout);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Rng stream = init_rng.derive(static_cast<std::uint64_t>(i));
    for (std::int64_t j = 0; j < e.tensor.size(); ++j) {
      e.tensor[j] = static_cast<float>((2.0 * stream.uniform() - 1.0) * limit);
    }
  }
  return model;
}

void UNetModel::set_weights(const ModelWeights& w) {
  check_same_structure(weights_, w, "set_weights");
  weights_ = w;
}

namespace {

// Last row consuming each plan row; lets inference free dead activations.
std::vector<int> last_uses(const std::vector<LayerDesc>& plan) {
  std::vector<int> last(plan.size(), static_cast<int>(plan.size()) - 1);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    for (int in : plan[i].inputs) {
      last[static_cast<std::size_t>(in)] = static_cast<int>(i);
    }
  }
  return last;
}

void check_batch_shape(const UNetConfig& cfg, const Tensor& batch) {
  if (batch.rank() != 4 || batch.dim(1) != cfg.input_h ||
      batch.dim(2) != cfg.input_w || batch.dim(3) != cfg.input_channels) {
    throw_validation(
        "unet: batch shape " + batch.shape_str() + " does not match input (" +
        std::to_string(cfg.input_h) + ", " + std::to_string(cfg.input_w) +
        ", " + std::to_string(cfg.input_channels) + ")");
  }
}

struct TapeRun {
  Tape::Value pred;
  std::unordered_map<std::string, Tape::Value> params;
};

TapeRun run_plan_on_tape(Tape& tape, UNetModel& model, const Tensor& batch,
                         bool training, Rng* rng) {
  check_batch_shape(model.config(), batch);
  ModelWeights& w = model.weights();
  TapeRun run;
  for (const auto& e : w.entries) {
    if (e.trainable) run.params[e.name] = tape.leaf(e.tensor, true);
  }
  const auto& plan = model.plan();
  std::vector<Tape::Value> row_values(plan.size());
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const LayerDesc& d = plan[i];
    switch (d.kind) {
      case LayerKind::Input:
        row_values[i] = tape.leaf(batch, false);
        break;
      case LayerKind::Conv: {
        Tape::Value v = tape.conv2d(row_values[static_cast<std::size_t>(d.inputs[0])],
                                    run.params[d.weight_names[0]],
                                    run.params[d.weight_names[1]]);
        row_values[i] = d.relu ? tape.relu(v) : v;
        break;
      }
      case LayerKind::ConvTranspose: {
        Tape::Value v = tape.conv2d_transpose(
            row_values[static_cast<std::size_t>(d.inputs[0])],
            run.params[d.weight_names[0]], run.params[d.weight_names[1]]);
        row_values[i] = d.relu ? tape.relu(v) : v;
        break;
      }
      case LayerKind::BatchNorm: {
        Tape::Value x = row_values[static_cast<std::size_t>(d.inputs[0])];
        if (training) {
          row_values[i] = tape.batchnorm_train(
              x, run.params[d.weight_names[0]], run.params[d.weight_names[1]],
              &w.at(d.weight_names[2]), &w.at(d.weight_names[3]),
              kBatchNormEps, kBatchNormMomentum);
        } else {
          row_values[i] = tape.batchnorm_infer(
              x, run.params[d.weight_names[0]], run.params[d.weight_names[1]],
              w.at(d.weight_names[2]), w.at(d.weight_names[3]), kBatchNormEps);
        }
        break;
      }
      case LayerKind::Dropout: {
        Tape::Value x = row_values[static_cast<std::size_t>(d.inputs[0])];
        if (training && d.rate > 0.0) {
          if (!rng) throw_validation("unet: training forward needs an rng");
          row_values[i] = tape.dropout(x, d.rate, *rng);
        } else {
          row_values[i] = x;
        }
        break;
      }
      case LayerKind::MaxPool:
        row_values[i] =
            tape.maxpool2d(row_values[static_cast<std::size_t>(d.inputs[0])]);
        break;
      case LayerKind::Concat:
        row_values[i] = tape.concat_channels(
            {row_values[static_cast<std::size_t>(d.inputs[0])],
             row_values[static_cast<std::size_t>(d.inputs[1])]});
        break;
      case LayerKind::Add:
        row_values[i] =
            tape.add(row_values[static_cast<std::size_t>(d.inputs[0])],
                     row_values[static_cast<std::size_t>(d.inputs[1])]);
        break;
    }
  }
  run.pred = tape.sigmoid(row_values.back());
  return run;
}

}  // namespace

Tensor unet_infer(const UNetModel& model, const Tensor& batch) {
  check_batch_shape(model.config(), batch);
  const ModelWeights& w = model.weights();
  const auto& plan = model.plan();
  const std::vector<int> last = last_uses(plan);
  std::vector<Tensor> vals(plan.size());
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const LayerDesc& d = plan[i];
    const auto in0 = [&]() -> const Tensor& {
      return vals[static_cast<std::size_t>(d.inputs[0])];
    };
    switch (d.kind) {
      case LayerKind::Input:
        vals[i] = batch;
        break;
      case LayerKind::Conv: {
        Tensor v = kernels::conv2d_forward(in0(), w.at(d.weight_names[0]),
                                           w.at(d.weight_names[1]));
        vals[i] = d.relu ? kernels::relu(v) : std::move(v);
        break;
      }
      case LayerKind::ConvTranspose: {
        Tensor v = kernels::conv2d_transpose_forward(
            in0(), w.at(d.weight_names[0]), w.at(d.weight_names[1]));
        vals[i] = d.relu ? kernels::relu(v) : std::move(v);
        break;
      }
      case LayerKind::BatchNorm:
        vals[i] = kernels::batchnorm_infer_forward(
            in0(), w.at(d.weight_names[0]), w.at(d.weight_names[1]),
            w.at(d.weight_names[2]), w.at(d.weight_names[3]), kBatchNormEps);
        break;
      case LayerKind::Dropout:
        vals[i] = in0();
        break;
      case LayerKind::MaxPool:
        vals[i] = kernels::maxpool2x2_forward(in0(), nullptr);
        break;
      case LayerKind::Concat:
        vals[i] = kernels::concat_channels<float>(
            {&vals[static_cast<std::size_t>(d.inputs[0])],
             &vals[static_cast<std::size_t>(d.inputs[1])]});
        break;
      case LayerKind::Add: {
        const Tensor& a = vals[static_cast<std::size_t>(d.inputs[0])];
        const Tensor& b = vals[static_cast<std::size_t>(d.inputs[1])];
        check_same_shape(a, b, "add");
        Tensor out(a.shape());
        for (std::int64_t j = 0; j < out.size(); ++j) out[j] = a[j] + b[j];
        vals[i] = std::move(out);
        break;
      }
    }
    // Free rows that no later layer reads.
    for (int p : d.inputs) {
      if (last[static_cast<std::size_t>(p)] <= static_cast<int>(i)) {
        vals[static_cast<std::size_t>(p)] = Tensor();
      }
    }
  }
  return kernels::sigmoid(vals.back());
}

Tensor unet_forward(UNetModel& model, const Tensor& batch, bool training,
                    Rng* rng) {
  if (!training) return unet_infer(model, batch);
  Tape tape;
  TapeRun run = run_plan_on_tape(tape, model, batch, true, rng);
  return tape.value(run.pred);
}

TrainStepStats unet_train_step(UNetModel& model, Adam& adam, const Tensor& x,
                               const Tensor& y, Rng& rng, double dice_eps) {
  Tape tape;
  TapeRun run = run_plan_on_tape(tape, model, x, true, &rng);
  Tape::Value truth = tape.leaf(y, false);
  Tape::LossParts loss =
      tape.bce_dice_loss(run.pred, truth, static_cast<float>(dice_eps));
  if (!std::isfinite(loss.total)) {
    throw DivergenceError("training loss is not finite (bce=" +
                          std::to_string(loss.bce) + ", dice=" +
                          std::to_string(loss.dice) + ")");
  }
  tape.backward(loss.node);
  std::unordered_map<std::string, Tensor> grads;
  grads.reserve(run.params.size());
  for (const auto& [name, value] : run.params) {
    grads.emplace(name, tape.grad(value));
  }
  adam.step(model.weights(), grads);
  TrainStepStats stats;
  stats.loss = loss.total;
  stats.bce = loss.bce;
  stats.dice = loss.dice;
  return stats;
}

std::string format_layer_table(const UNetModel& model, const std::string& fmt) {
  const auto& plan = model.plan();
  std::string out;
  if (fmt == "csv") {
    out += "layer,type,output_h,output_w,output_c,params\n";
    for (const auto& d : plan) {
      out += strfmt("%s,%s,%lld,%lld,%lld,%lld\n", d.name.c_str(),
                    d.type_name(), static_cast<long long>(d.out_h),
                    static_cast<long long>(d.out_w),
                    static_cast<long long>(d.out_c),
                    static_cast<long long>(d.params));
    }
    out += strfmt("total,,,,,%llu\n",
                  static_cast<unsigned long long>(model.total_params()));
    out += strfmt("trainable,,,,,%llu\n",
                  static_cast<unsigned long long>(model.trainable_params()));
    out += strfmt("non_trainable,,,,,%llu\n",
                  static_cast<unsigned long long>(model.non_trainable_params()));
    return out;
  }
  if (fmt != "table") {
    throw_validation("unknown layer table format: " + fmt);
  }
  out += strfmt("%-36s %-24s %12s\n", "Layer (type)", "Output Shape",
                "Param #");
  out += std::string(74, '=') + "\n";
  for (const auto& d : plan) {
    const std::string label = d.name + " (" + d.type_name() + ")";
    out += strfmt("%-36s %-24s %12lld\n", label.c_str(),
                  d.output_shape_str().c_str(),
                  static_cast<long long>(d.params));
  }
  out += std::string(74, '=') + "\n";
  out += "Total params: " + format_with_commas(model.total_params()) + "\n";
  out += "Trainable params: " + format_with_commas(model.trainable_params()) +
         "\n";
  out += "Non-trainable params: " +
         format_with_commas(model.non_trainable_params()) + "\n";
  out += "Params (total / trainable / non-trainable): " +
         format_with_commas(model.total_params()) + " / " +
         format_with_commas(model.trainable_params()) + " / " +
         format_with_commas(model.non_trainable_params()) + "\n";
  return out;
}

}  // namespace fedseg
