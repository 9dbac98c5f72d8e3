#include "fedseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedseg/io.hpp"
#include "fedseg/unet.hpp"

namespace fedseg {

void MetricsConfig::validate() const {
  if (dice_epsilon < 0.0) {
    throw_validation("metrics: dice_epsilon must be >= 0");
  }
  if (binarize_threshold <= 0.0 || binarize_threshold >= 1.0) {
    throw_validation("metrics: binarize_threshold must be in (0, 1)");
  }
  if (ssim_window < 3 || ssim_window % 2 == 0) {
    throw_validation("metrics: ssim_window must be odd and >= 3");
  }
}

double dice(const Tensor& truth, const Tensor& pred, double eps) {
  check_same_shape(truth, pred, "dice");
  double inter = 0.0, sum_t = 0.0, sum_p = 0.0;
  for (std::int64_t i = 0; i < truth.size(); ++i) {
    const double t = truth[i], p = pred[i];
    inter += t * p;
    sum_t += t;
    sum_p += p;
  }
  return 2.0 * inter / (sum_t + sum_p + eps);
}

double cosine_similarity(const Tensor& a, const Tensor& b, bool* degenerate) {
  check_same_shape(a, b, "cosine_similarity");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (degenerate) *degenerate = false;
  if (na == 0.0 || nb == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double bce(const Tensor& truth, const Tensor& pred) {
  check_same_shape(truth, pred, "bce");
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  double sum = 0.0;
  for (std::int64_t i = 0; i < truth.size(); ++i) {
    const double t = truth[i];
    const double p = std::min(hi, std::max(lo, static_cast<double>(pred[i])));
    sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return sum / static_cast<double>(truth.size());
}

ConfusionCounts confusion(const Tensor& truth, const Tensor& pred,
                          double threshold) {
  check_same_shape(truth, pred, "confusion");
  ConfusionCounts c;
  for (std::int64_t i = 0; i < truth.size(); ++i) {
    const bool t = truth[i] >= 0.5f;
    const bool p = static_cast<double>(pred[i]) >= threshold;
    if (t && p) ++c.tp;
    else if (!t && !p) ++c.tn;
    else if (!t && p) ++c.fp;
    else ++c.fn;
  }
  return c;
}

namespace {
double ratio_or_zero(double num, double den, const char* name,
                     std::vector<std::string>* degenerate) {
  if (den == 0.0) {
    if (degenerate) degenerate->push_back(name);
    return 0.0;
  }
  return num / den;
}
}  // namespace

ConfusionMetrics confusion_metrics(const ConfusionCounts& c) {
  ConfusionMetrics m;
  const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn),
               fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  m.iou = ratio_or_zero(tp, tp + fp + fn, "iou", &m.degenerate);
  m.accuracy =
      ratio_or_zero(tp + tn, tp + tn + fp + fn, "accuracy", &m.degenerate);
  m.recall = ratio_or_zero(tp, tp + fn, "recall", &m.degenerate);
  m.precision = ratio_or_zero(tp, tp + fp, "precision", &m.degenerate);
  m.f1 = ratio_or_zero(2.0 * m.precision * m.recall, m.precision + m.recall,
                       "f1", &m.degenerate);
  return m;
}

double rmse(const Tensor& truth, const Tensor& pred) {
  check_same_shape(truth, pred, "rmse");
  double sum = 0.0;
  for (std::int64_t i = 0; i < truth.size(); ++i) {
    const double d = static_cast<double>(truth[i]) - pred[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(truth.size()));
}

namespace {

// Summed-area tables over one channel; windows read means and second
// moments in O(1).
struct Integrals {
  std::int64_t h = 0, w = 0;
  std::vector<double> sx, sy, sxx, syy, sxy;

  Integrals(const Tensor& x, const Tensor& y, std::int64_t channel,
            std::int64_t channels)
      : h(x.dim(0)), w(x.dim(1)) {
    const std::size_t n = static_cast<std::size_t>((h + 1) * (w + 1));
    sx.assign(n, 0.0);
    sy.assign(n, 0.0);
    sxx.assign(n, 0.0);
    syy.assign(n, 0.0);
    sxy.assign(n, 0.0);
    for (std::int64_t r = 0; r < h; ++r) {
      for (std::int64_t c = 0; c < w; ++c) {
        const double xv = x[(r * w + c) * channels + channel];
        const double yv = y[(r * w + c) * channels + channel];
        const std::size_t cur = static_cast<std::size_t>((r + 1) * (w + 1) + c + 1);
        const std::size_t up = static_cast<std::size_t>(r * (w + 1) + c + 1);
        const std::size_t left = cur - 1;
        const std::size_t diag = up - 1;
        sx[cur] = xv + sx[up] + sx[left] - sx[diag];
        sy[cur] = yv + sy[up] + sy[left] - sy[diag];
        sxx[cur] = xv * xv + sxx[up] + sxx[left] - sxx[diag];
        syy[cur] = yv * yv + syy[up] + syy[left] - syy[diag];
        sxy[cur] = xv * yv + sxy[up] + sxy[left] - sxy[diag];
      }
    }
  }

  double window(const std::vector<double>& s, std::int64_t r0, std::int64_t c0,
                std::int64_t wh, std::int64_t ww) const {
    const std::int64_t r1 = r0 + wh, c1 = c0 + ww;
    return s[static_cast<std::size_t>(r1 * (w + 1) + c1)] -
           s[static_cast<std::size_t>(r0 * (w + 1) + c1)] -
           s[static_cast<std::size_t>(r1 * (w + 1) + c0)] +
           s[static_cast<std::size_t>(r0 * (w + 1) + c0)];
  }
};

}  // namespace

double ssim(const Tensor& x, const Tensor& y, const MetricsConfig& config) {
  config.validate();
  check_same_shape(x, y, "ssim");
  if (x.rank() != 3) {
    throw_validation("ssim: expected HxWxC images, got " + x.shape_str());
  }
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const std::int64_t h = x.dim(0), w = x.dim(1), channels = x.dim(2);
  // When the image is smaller than the window, use one global window.
  const std::int64_t wh = std::min<std::int64_t>(config.ssim_window, h);
  const std::int64_t ww = std::min<std::int64_t>(config.ssim_window, w);
  const double n = static_cast<double>(wh * ww);
  double channel_sum = 0.0;
  for (std::int64_t ch = 0; ch < channels; ++ch) {
    const Integrals integ(x, y, ch, channels);
    double window_sum = 0.0;
    std::int64_t windows = 0;
    for (std::int64_t r0 = 0; r0 + wh <= h; ++r0) {
      for (std::int64_t c0 = 0; c0 + ww <= w; ++c0) {
        const double mx = integ.window(integ.sx, r0, c0, wh, ww) / n;
        const double my = integ.window(integ.sy, r0, c0, wh, ww) / n;
        const double vx =
            std::max(0.0, integ.window(integ.sxx, r0, c0, wh, ww) / n - mx * mx);
        const double vy =
            std::max(0.0, integ.window(integ.syy, r0, c0, wh, ww) / n - my * my);
        const double cov = integ.window(integ.sxy, r0, c0, wh, ww) / n - mx * my;
        const double num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
        window_sum += num / den;
        ++windows;
      }
    }
    channel_sum += window_sum / static_cast<double>(windows);
  }
  return channel_sum / static_cast<double>(channels);
}

double auc(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw_validation("auc: scores and labels differ in length");
  }
  std::int64_t pos = 0, neg = 0;
  for (const std::uint8_t l : labels) (l ? pos : neg) += 1;
  if (pos == 0) throw_validation("auc: input has no positive examples");
  if (neg == 0) throw_validation("auc: input has no negative examples");
  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return scores[a] > scores[b];
  });
  double area = 0.0;
  double prev_fpr = 0.0, prev_tpr = 0.0;
  std::int64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const float threshold = scores[order[i]];
    // Consume the whole tie group before emitting a point.
    while (i < order.size() && scores[order[i]] == threshold) {
      (labels[order[i]] ? tp : fp) += 1;
      ++i;
    }
    const double fpr = static_cast<double>(fp) / static_cast<double>(neg);
    const double tpr = static_cast<double>(tp) / static_cast<double>(pos);
    area += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;
    prev_fpr = fpr;
    prev_tpr = tpr;
  }
  return area;
}

std::string MetricsReport::csv_comment() {
  return "# scd = sum over evaluated (prediction, truth) pairs of "
         "(1 - cosine_similarity); the cosine_similarity column is the "
         "per-pair mean\n";
}

std::string MetricsReport::csv_header() {
  return "label,split,samples,dice,dice_per_image,bce,bce_dice_loss,iou,"
         "iou_per_image,rmse,ssim,cosine_similarity,scd,accuracy,recall,"
         "precision,f1,auc\n";
}

std::string MetricsReport::csv_row(const std::string& label,
                                   const std::string& split) const {
  std::string row = label + "," + split + "," + std::to_string(samples);
  for (const double v :
       {dice, dice_per_image, bce, bce_dice, iou, iou_per_image, rmse, ssim,
        cosine_similarity, scd, accuracy, recall, precision, f1, auc}) {
    row += "," + csv_num(v);
  }
  row += "\n";
  return row;
}

MetricsAccumulator::MetricsAccumulator(MetricsConfig config)
    : config_(config) {
  config_.validate();
}

void MetricsAccumulator::add(const Tensor& truth, const Tensor& pred) {
  check_same_shape(truth, pred, "evaluate");
  if (!pred.all_finite()) {
    throw DivergenceError("evaluate: prediction contains NaN/Inf");
  }
  ++samples_;
  elements_ += truth.size();
  double inter = 0.0, st = 0.0, sp = 0.0;
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  for (std::int64_t i = 0; i < truth.size(); ++i) {
    const double t = truth[i];
    const double p = pred[i];
    inter += t * p;
    st += t;
    sp += p;
    const double pc = std::min(hi, std::max(lo, p));
    bce_sum_ -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
    const double d = t - p;
    sq_err_sum_ += d * d;
  }
  inter_ += inter;
  sum_t_ += st;
  sum_p_ += sp;
  dice_image_sum_ += 2.0 * inter / (st + sp + config_.dice_epsilon);

  const ConfusionCounts c = confusion(truth, pred, config_.binarize_threshold);
  pooled_.tp += c.tp;
  pooled_.tn += c.tn;
  pooled_.fp += c.fp;
  pooled_.fn += c.fn;
  const double iou_den = static_cast<double>(c.tp + c.fp + c.fn);
  iou_image_sum_ += iou_den == 0.0 ? 0.0 : static_cast<double>(c.tp) / iou_den;

  ssim_sum_ += ssim(truth, pred, config_);
  bool degenerate = false;
  const double cs = cosine_similarity(pred, truth, &degenerate);
  if (degenerate) ++cos_degenerate_;
  cos_sum_ += cs;
  scd_sum_ += 1.0 - cs;

  scores_.reserve(scores_.size() + static_cast<std::size_t>(pred.size()));
  labels_.reserve(labels_.size() + static_cast<std::size_t>(pred.size()));
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    scores_.push_back(pred[i]);
    labels_.push_back(truth[i] >= 0.5f ? 1 : 0);
  }
}

MetricsReport MetricsAccumulator::finalize() const {
  if (samples_ == 0) throw_validation("evaluate: empty split");
  MetricsReport r;
  r.samples = samples_;
  r.dice = 2.0 * inter_ / (sum_t_ + sum_p_ + config_.dice_epsilon);
  r.dice_per_image = dice_image_sum_ / static_cast<double>(samples_);
  r.bce = bce_sum_ / static_cast<double>(elements_);
  r.bce_dice = r.bce + (1.0 - r.dice);
  const ConfusionMetrics cm = confusion_metrics(pooled_);
  r.iou = cm.iou;
  r.iou_per_image = iou_image_sum_ / static_cast<double>(samples_);
  r.accuracy = cm.accuracy;
  r.recall = cm.recall;
  r.precision = cm.precision;
  r.f1 = cm.f1;
  r.degenerate = cm.degenerate;
  r.rmse = std::sqrt(sq_err_sum_ / static_cast<double>(elements_));
  r.ssim = ssim_sum_ / static_cast<double>(samples_);
  r.cosine_similarity = cos_sum_ / static_cast<double>(samples_);
  r.scd = scd_sum_;
  if (cos_degenerate_ > 0) r.degenerate.push_back("cosine_similarity");
  bool has_pos = false, has_neg = false;
  for (const std::uint8_t l : labels_) {
    (l ? has_pos : has_neg) = true;
    if (has_pos && has_neg) break;
  }
  if (has_pos && has_neg) {
    r.auc = auc(scores_, labels_);
  } else {
    r.auc = 0.5;
    r.degenerate.push_back("auc");
  }
  return r;
}

MetricsReport evaluate_model(const UNetModel& model,
                             const std::vector<ImageSample>& samples,
                             const MetricsConfig& config, int batch_size) {
  if (samples.empty()) throw_validation("evaluate: empty split");
  if (batch_size < 1) throw_validation("evaluate: batch_size must be >= 1");
  MetricsAccumulator acc(config);
  const UNetConfig& cfg = model.config();
  const std::int64_t h = cfg.input_h, w = cfg.input_w, c = cfg.input_channels;
  const std::int64_t image_len = h * w * c;
  for (std::size_t start = 0; start < samples.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    const std::int64_t n = static_cast<std::int64_t>(end - start);
    Tensor batch({n, h, w, c});
    for (std::int64_t b = 0; b < n; ++b) {
      const Tensor& im = samples[start + static_cast<std::size_t>(b)].image;
      if (im.size() != image_len) {
        throw_validation("evaluate: sample image " + im.shape_str() +
                         " does not match model input");
      }
      std::copy(im.data(), im.data() + image_len, batch.data() + b * image_len);
    }
    const Tensor pred = unet_infer(model, batch);
    const std::int64_t out_len = pred.size() / n;
    for (std::int64_t b = 0; b < n; ++b) {
      const ImageSample& s = samples[start + static_cast<std::size_t>(b)];
      Tensor single({h, w, static_cast<std::int64_t>(cfg.output_channels)});
      std::copy(pred.data() + b * out_len, pred.data() + (b + 1) * out_len,
                single.data());
      acc.add(s.mask, single);
    }
  }
  return acc.finalize();
}

}  // namespace fedseg
