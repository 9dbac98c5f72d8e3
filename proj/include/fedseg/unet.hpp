#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fedseg/optimizer.hpp"
#include "fedseg/rng.hpp"
#include "fedseg/tensor.hpp"
#include "fedseg/weights.hpp"

namespace fedseg {

inline constexpr float kBatchNormEps = 1e-5f;
inline constexpr float kBatchNormMomentum = 0.9f;
inline constexpr double kDiceLossEps = 1e-6;

struct UNetConfig {
  int input_h = 64;
  int input_w = 64;
  int input_channels = 3;
  int output_channels = 3;
  // Multiplies every filter count; every scaled count must stay integral.
  double width_scale = 0.25;
  // Per encoder block, shallow to deep; the decoder mirrors them.
  std::array<double, 5> dropout_rates{0.1, 0.1, 0.2, 0.2, 0.3};
  std::uint64_t seed = 1;

  void validate() const;

  // The full-size configuration: 192x192x3 in, 3 channels out, scale 1.
  static UNetConfig full_size();
};

enum class LayerKind {
  Input,
  Conv,
  ConvTranspose,
  BatchNorm,
  Dropout,
  MaxPool,
  Concat,
  Add,
};

struct LayerDesc {
  std::string name;
  LayerKind kind = LayerKind::Input;
  std::int64_t out_h = 0, out_w = 0, out_c = 0;
  std::int64_t params = 0;
  std::int64_t trainable_params = 0;
  std::vector<int> inputs;  // producer rows
  int ksize = 0;            // conv kernels are ksize x ksize
  bool relu = false;
  double rate = 0.0;  // dropout
  std::vector<std::string> weight_names;

  const char* type_name() const;
  std::string output_shape_str() const;  // "(None, 192, 192, 3)"
};

// Encoder of five blocks (conv, conv, batchnorm, dropout; the first four
// pooled 2x2) with filter pairs (32,16)..(512,256) times width_scale, and a
// decoder of four upsampling blocks with skip concatenations; blocks 2-4 end
// in a residual add of the concatenation output and the block output. The
// final 1x1 conv maps to output_channels and feeds a sigmoid head.
class UNetModel {
 public:
  static UNetModel build(const UNetConfig& config);

  const UNetConfig& config() const { return config_; }
  const std::vector<LayerDesc>& plan() const { return plan_; }
  ModelWeights& weights() { return weights_; }
  const ModelWeights& weights() const { return weights_; }

  std::uint64_t total_params() const { return weights_.param_count(); }
  std::uint64_t trainable_params() const { return weights_.trainable_count(); }
  std::uint64_t non_trainable_params() const {
    return total_params() - trainable_params();
  }

  void set_weights(const ModelWeights& w);

 private:
  UNetConfig config_;
  std::vector<LayerDesc> plan_;
  ModelWeights weights_;
};

// Forward pass. Training mode uses batch statistics, applies dropout from
// the given stream, and updates the moving stats inside model.weights();
// inference mode is deterministic and leaves the model untouched.
Tensor unet_forward(UNetModel& model, const Tensor& batch, bool training,
                    Rng* rng);
Tensor unet_infer(const UNetModel& model, const Tensor& batch);

struct TrainStepStats {
  double loss = 0.0;
  double bce = 0.0;
  double dice = 0.0;
};

// One optimizer step on a batch; throws DivergenceError on non-finite loss.
TrainStepStats unet_train_step(UNetModel& model, Adam& adam, const Tensor& x,
                               const Tensor& y, Rng& rng,
                               double dice_eps = kDiceLossEps);

// Layer table ("table" or "csv"). The table's final line carries the
// total / trainable / non-trainable summary.
std::string format_layer_table(const UNetModel& model, const std::string& fmt);

}  // namespace fedseg
