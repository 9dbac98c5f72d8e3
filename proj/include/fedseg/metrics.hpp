#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedseg/dataset.hpp"
#include "fedseg/tensor.hpp"

namespace fedseg {

class UNetModel;

struct MetricsConfig {
  double dice_epsilon = 1e-6;
  double binarize_threshold = 0.5;
  int ssim_window = 7;  // uniform window

  void validate() const;
};

struct ConfusionCounts {
  std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::int64_t total() const { return tp + tn + fp + fn; }
};

struct ConfusionMetrics {
  double iou = 0.0;
  double accuracy = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  // Metrics whose denominator was zero and were defined as 0.
  std::vector<std::string> degenerate;
};

// Soft overlap 2*sum(t*p) / (sum(t) + sum(p) + eps); binarization is the
// caller's choice.
double dice(const Tensor& truth, const Tensor& pred, double eps);

// Standard dot-product form a.b / (|a||b|). A zero vector yields 0 and sets
// *degenerate when provided.
double cosine_similarity(const Tensor& a, const Tensor& b,
                         bool* degenerate = nullptr);

// Mean of -[y log p + (1-y) log(1-p)] with p clamped to [1e-7, 1-1e-7].
double bce(const Tensor& truth, const Tensor& pred);

ConfusionCounts confusion(const Tensor& truth, const Tensor& pred,
                          double threshold);
ConfusionMetrics confusion_metrics(const ConfusionCounts& counts);

double rmse(const Tensor& truth, const Tensor& pred);

// Mean over sliding uniform windows of the combined luminance/contrast/
// structure form with C1=(0.01)^2, C2=(0.03)^2 (unit dynamic range);
// multi-channel inputs average the per-channel values. Images smaller than
// the window fall back to one global window.
double ssim(const Tensor& x, const Tensor& y, const MetricsConfig& config);

// Trapezoidal area under the ROC built from all distinct score thresholds
// (descending); tied scores collapse into one threshold step. Throws when a
// class is missing.
double auc(std::span<const float> scores, std::span<const std::uint8_t> labels);

struct MetricsReport {
  std::int64_t samples = 0;
  double dice = 0.0;            // pixel-pooled soft dice
  double dice_per_image = 0.0;  // mean of per-image dice
  double bce = 0.0;
  double bce_dice = 0.0;  // bce + (1 - dice)
  double iou = 0.0;       // from pooled confusion counts
  double iou_per_image = 0.0;
  double rmse = 0.0;
  double ssim = 0.0;  // mean per image
  double cosine_similarity = 0.0;  // mean per image
  double scd = 0.0;                // sum over images of (1 - cosine)
  double accuracy = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  std::vector<std::string> degenerate;

  static std::string csv_comment();
  static std::string csv_header();
  std::string csv_row(const std::string& label, const std::string& split) const;
};

// Streams (truth, soft prediction) pairs; confusion counts, bce, rmse and
// auc pool over all pixels, dice/iou are reported both pooled and
// per-image-averaged, ssim and cosine average per image, scd sums per image.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(MetricsConfig config);
  void add(const Tensor& truth, const Tensor& pred);
  MetricsReport finalize() const;

 private:
  MetricsConfig config_;
  std::int64_t samples_ = 0;
  std::int64_t elements_ = 0;
  double inter_ = 0.0, sum_t_ = 0.0, sum_p_ = 0.0;
  double dice_image_sum_ = 0.0, iou_image_sum_ = 0.0;
  double bce_sum_ = 0.0;
  double sq_err_sum_ = 0.0;
  double ssim_sum_ = 0.0;
  double cos_sum_ = 0.0, scd_sum_ = 0.0;
  std::int64_t cos_degenerate_ = 0;
  ConfusionCounts pooled_;
  std::vector<float> scores_;
  std::vector<std::uint8_t> labels_;
};

// Inference over the samples (images are the network inputs, masks the
// ground truth) followed by metric accumulation.
MetricsReport evaluate_model(const UNetModel& model,
                             const std::vector<ImageSample>& samples,
                             const MetricsConfig& config, int batch_size = 8);

}  // namespace fedseg
