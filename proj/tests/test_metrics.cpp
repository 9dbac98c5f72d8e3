#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedseg/metrics.hpp"
#include "fedseg/unet.hpp"
#include "oracles.hpp"

using namespace fedseg;

namespace {

Tensor tensor1d(std::vector<float> v) {
  const auto n = static_cast<std::int64_t>(v.size());
  return Tensor::from_data({n}, std::move(v));
}

Tensor random_binary(std::int64_t n, Rng& rng, double p = 0.5) {
  Tensor t({n});
  for (std::int64_t i = 0; i < n; ++i)
    t[i] = rng.uniform() < p ? 1.0f : 0.0f;
  return t;
}

Tensor random_soft(std::int64_t n, Rng& rng) {
  Tensor t({n});
  for (std::int64_t i = 0; i < n; ++i)
    t[i] = static_cast<float>(rng.uniform());
  return t;
}

}  // namespace

TEST_CASE("dice: perfect overlap, disjoint masks, hand value 2/3") {
  Tensor ones = Tensor::full({10}, 1.0f);
  CHECK(dice(ones, ones, 1e-6) == doctest::Approx(1.0).epsilon(1e-6));
  Tensor a = tensor1d({1, 1, 0, 0});
  Tensor b = tensor1d({0, 0, 1, 1});
  CHECK(dice(a, b, 1e-6) == 0.0);
  Tensor truth = tensor1d({1, 1, 0, 0});
  Tensor pred = tensor1d({1, 0, 0, 0});
  CHECK(dice(truth, pred, 0.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
  CHECK(std::abs(dice(truth, pred, 0.0) - 2.0 / 3.0) <= 1e-9);
}

TEST_CASE("dice is symmetric in its arguments") {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    Rng r = rng.derive(static_cast<std::uint64_t>(t));
    Tensor a = random_soft(37, r);
    Tensor b = random_soft(37, r);
    CHECK(dice(a, b, 1e-6) == doctest::Approx(dice(b, a, 1e-6)).epsilon(1e-12));
  }
}

TEST_CASE("cosine similarity: parallel, orthogonal, hand value, zero vector") {
  Tensor a = tensor1d({2, 1, 3});
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_similarity(tensor1d({1, 0}), tensor1d({0, 1})) ==
        doctest::Approx(0.0));
  CHECK(cosine_similarity(tensor1d({1, 1}), tensor1d({1, 0})) ==
        doctest::Approx(std::sqrt(2.0) / 2.0).epsilon(1e-9));
  bool degenerate = false;
  CHECK(cosine_similarity(tensor1d({0, 0}), tensor1d({1, 2}), &degenerate) ==
        0.0);
  CHECK(degenerate);
}

TEST_CASE("bce: clamped near-perfect, ln 2 on both sides") {
  // A saturated prediction clamps to 1 - 1e-7 before the log.
  Tensor y1 = tensor1d({1});
  Tensor p1 = tensor1d({1.0f});
  CHECK(std::abs(bce(y1, p1) - 1e-7) <= 1e-9);
  CHECK(bce(tensor1d({1}), tensor1d({0.5f})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce(tensor1d({0}), tensor1d({0.5f})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // Predictions at 0 and 1 are clamped before the logs.
  CHECK(std::isfinite(bce(tensor1d({1}), tensor1d({0.0f}))));
}

TEST_CASE("confusion metrics on the hand-counted example") {
  // TP=3, FP=1, FN=2, TN=4.
  Tensor truth = tensor1d({1, 1, 1, 1, 1, 0, 0, 0, 0, 0});
  Tensor pred = tensor1d({1, 1, 1, 0, 0, 1, 0, 0, 0, 0});
  const ConfusionCounts c = confusion(truth, pred, 0.5);
  CHECK(c.tp == 3);
  CHECK(c.fp == 1);
  CHECK(c.fn == 2);
  CHECK(c.tn == 4);
  CHECK(c.total() == 10);
  const ConfusionMetrics m = confusion_metrics(c);
  CHECK(std::abs(m.iou - 0.5) <= 1e-9);
  CHECK(std::abs(m.accuracy - 0.7) <= 1e-9);
  CHECK(std::abs(m.recall - 0.6) <= 1e-9);
  CHECK(std::abs(m.precision - 0.75) <= 1e-9);
  CHECK(std::abs(m.f1 - 2.0 / 3.0) <= 1e-9);
  CHECK(m.degenerate.empty());
}

TEST_CASE("confusion: perfect prediction and all-negative degenerate case") {
  Rng rng(2);
  Tensor truth = random_binary(64, rng);
  const ConfusionMetrics m = confusion_metrics(confusion(truth, truth, 0.5));
  CHECK(m.accuracy == 1.0);
  CHECK(m.f1 == 1.0);

  Tensor zeros({16});
  const ConfusionMetrics z = confusion_metrics(confusion(zeros, zeros, 0.5));
  CHECK(z.recall == 0.0);
  CHECK(z.precision == 0.0);
  CHECK(z.f1 == 0.0);
  CHECK(z.degenerate.size() >= 3);
}

TEST_CASE("rmse: zero, hand value, symmetry") {
  Tensor a = tensor1d({1, 2, 3});
  CHECK(rmse(a, a) == 0.0);
  CHECK(std::abs(rmse(tensor1d({0, 0}), tensor1d({3, 4})) -
                 std::sqrt(12.5)) <= 1e-9);
  Rng rng(3);
  Tensor x = random_soft(33, rng);
  Tensor y = random_soft(33, rng);
  CHECK(rmse(x, y) == doctest::Approx(rmse(y, x)).epsilon(1e-15));
}

TEST_CASE("ssim: identical images give exactly 1") {
  Rng rng(4);
  MetricsConfig cfg;
  Tensor x({16, 16, 3});
  for (std::int64_t i = 0; i < x.size(); ++i)
    x[i] = static_cast<float>(rng.uniform());
  CHECK(ssim(x, x, cfg) == 1.0);
}

TEST_CASE("ssim: shifted constants score strictly below 1") {
  MetricsConfig cfg;
  Tensor x = Tensor::full({8, 8, 1}, 0.25f);
  Tensor y = Tensor::full({8, 8, 1}, 0.75f);
  const double v = ssim(x, y, cfg);
  CHECK(v < 1.0);
  CHECK(v > 0.0);
}

TEST_CASE("ssim matches the direct per-window oracle within 1e-9") {
  Rng rng(5);
  MetricsConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    Rng t = rng.derive(static_cast<std::uint64_t>(trial));
    Tensor x({16, 16, 1});
    Tensor y({16, 16, 1});
    for (std::int64_t i = 0; i < x.size(); ++i) {
      x[i] = static_cast<float>(t.uniform());
      y[i] = static_cast<float>(t.uniform());
    }
    CHECK(std::abs(ssim(x, y, cfg) - oracles::ssim_direct(x, y, 7)) <= 1e-9);
  }
}

TEST_CASE("ssim: image smaller than the window falls back to one window") {
  MetricsConfig cfg;
  cfg.ssim_window = 11;
  Rng rng(6);
  Tensor x({5, 5, 1});
  Tensor y({5, 5, 1});
  for (std::int64_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<float>(rng.uniform());
    y[i] = static_cast<float>(rng.uniform());
  }
  CHECK(std::abs(ssim(x, y, cfg) - oracles::ssim_direct(x, y, 11)) <= 1e-12);
}

TEST_CASE("auc: separated, inverted, tie-degenerate inputs") {
  const std::vector<float> separated{0.9f, 0.8f, 0.2f, 0.1f};
  const std::vector<std::uint8_t> labels{1, 1, 0, 0};
  CHECK(auc(separated, labels) == 1.0);
  const std::vector<float> inverted{0.1f, 0.2f, 0.8f, 0.9f};
  CHECK(auc(inverted, labels) == 0.0);
  const std::vector<float> ties{0.5f, 0.5f, 0.5f, 0.5f};
  CHECK(auc(ties, labels) == 0.5);
}

TEST_CASE("auc errors name the missing class") {
  const std::vector<float> s{0.1f, 0.2f};
  try {
    auc(s, std::vector<std::uint8_t>{1, 1});
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("negative") != std::string::npos);
  }
  try {
    auc(s, std::vector<std::uint8_t>{0, 0});
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("positive") != std::string::npos);
  }
}

TEST_CASE("auc equals the pair-counting oracle on 100 fuzzed instances") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    Rng t = rng.derive(static_cast<std::uint64_t>(trial));
    const int n = 20 + static_cast<int>(t.below(80));
    std::vector<float> scores;
    std::vector<std::uint8_t> labels;
    int pos = 0;
    for (int i = 0; i < n; ++i) {
      // Quantized scores force plenty of ties.
      scores.push_back(static_cast<float>(t.below(8)) / 8.0f);
      labels.push_back(t.uniform() < 0.4 ? 1 : 0);
      pos += labels.back();
    }
    if (pos == 0) labels[0] = 1;
    if (pos == n) labels[0] = 0;
    const double got = auc(scores, labels);
    const double want = oracles::auc_pairs(scores, labels);
    CHECK(std::abs(got - want) <= 1e-9);
  }
}

TEST_CASE("auc is invariant to adding a constant to all scores") {
  Rng rng(8);
  std::vector<float> scores;
  std::vector<std::uint8_t> labels;
  for (int i = 0; i < 60; ++i) {
    scores.push_back(static_cast<float>(rng.below(16)) / 16.0f);
    labels.push_back(rng.uniform() < 0.5 ? 1 : 0);
  }
  labels[0] = 1;
  labels[1] = 0;
  std::vector<float> shifted = scores;
  for (auto& s : shifted) s += 5.0f;
  CHECK(auc(scores, labels) == auc(shifted, labels));
}

TEST_CASE("f1 equals dice and iou never exceeds dice on fuzzed binary masks") {
  Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    Rng t = rng.derive(static_cast<std::uint64_t>(trial));
    const std::int64_t n = 16 + static_cast<std::int64_t>(t.below(64));
    Tensor truth = random_binary(n, t, 0.3 + 0.4 * t.uniform());
    Tensor pred = random_binary(n, t, 0.3 + 0.4 * t.uniform());
    truth[0] = 1.0f;  // keep the dice denominator nonzero as eps -> 0
    const ConfusionMetrics m = confusion_metrics(confusion(truth, pred, 0.5));
    const double soft_dice = dice(truth, pred, 0.0);
    CHECK(std::abs(m.f1 - soft_dice) <= 1e-9);
    CHECK(m.iou <= soft_dice + 1e-12);
  }
}

TEST_CASE("metrics report ranges hold on fuzzed soft predictions") {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    Rng t = rng.derive(static_cast<std::uint64_t>(trial));
    MetricsAccumulator acc(MetricsConfig{});
    const int images = 1 + static_cast<int>(t.below(3));
    for (int i = 0; i < images; ++i) {
      Tensor truth({8, 8, 3});
      Tensor pred({8, 8, 3});
      for (std::int64_t j = 0; j < truth.size(); ++j) {
        truth[j] = t.uniform() < 0.4 ? 1.0f : 0.0f;
        pred[j] = static_cast<float>(t.uniform());
      }
      acc.add(truth, pred);
    }
    const MetricsReport r = acc.finalize();
    for (const double v : {r.dice, r.dice_per_image, r.iou, r.iou_per_image,
                           r.accuracy, r.recall, r.precision, r.f1, r.auc}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(r.ssim >= -1.0);
    CHECK(r.ssim <= 1.0);
    CHECK(r.rmse >= 0.0);
    CHECK(r.bce >= 0.0);
    CHECK(r.scd >= 0.0);
  }
}

TEST_CASE("report row schema is the frozen column set plus sample count") {
  CHECK(MetricsReport::csv_header() ==
        "label,split,samples,dice,dice_per_image,bce,bce_dice_loss,iou,"
        "iou_per_image,rmse,ssim,cosine_similarity,scd,accuracy,recall,"
        "precision,f1,auc\n");
  MetricsReport r;
  r.samples = 3;
  const std::string row = r.csv_row("m", "test");
  std::size_t cols = 1;
  for (const char ch : row) {
    if (ch == ',') ++cols;
  }
  CHECK(cols == 18);
  CHECK(MetricsReport::csv_comment().find("scd") != std::string::npos);
}

TEST_CASE("accumulator: ground-truth predictions score perfectly") {
  Rng rng(11);
  MetricsAccumulator acc(MetricsConfig{});
  for (int i = 0; i < 4; ++i) {
    Tensor truth({8, 8, 3});
    bool any = false, all = true;
    for (std::int64_t j = 0; j < truth.size(); ++j) {
      truth[j] = rng.uniform() < 0.3 ? 1.0f : 0.0f;
      any = any || truth[j] > 0.5f;
      all = all && truth[j] > 0.5f;
    }
    if (!any) truth[0] = 1.0f;
    if (all) truth[0] = 0.0f;
    acc.add(truth, truth);
  }
  const MetricsReport r = acc.finalize();
  CHECK(r.dice == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.rmse == 0.0);
  CHECK(r.auc == 1.0);
  CHECK(r.accuracy == 1.0);
  CHECK(r.ssim == 1.0);
}

TEST_CASE("accumulator: constant 0.5 predictions give ln 2 bce and auc 0.5") {
  Rng rng(12);
  MetricsAccumulator acc(MetricsConfig{});
  Tensor truth({8, 8, 3});
  for (std::int64_t j = 0; j < truth.size(); ++j)
    truth[j] = rng.uniform() < 0.4 ? 1.0f : 0.0f;
  truth[0] = 1.0f;
  truth[1] = 0.0f;
  Tensor pred = Tensor::full({8, 8, 3}, 0.5f);
  acc.add(truth, pred);
  const MetricsReport r = acc.finalize();
  CHECK(r.bce == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(r.auc == 0.5);
}

TEST_CASE("evaluate_model runs a real model over a split") {
  UNetConfig cfg;
  cfg.input_h = 32;
  cfg.input_w = 32;
  cfg.width_scale = 0.125;
  cfg.seed = 3;
  UNetModel model = UNetModel::build(cfg);
  Rng rng(13);
  std::vector<ImageSample> samples = generate_synthetic(3, 32, 32, rng);
  const MetricsReport r = evaluate_model(model, samples, MetricsConfig{}, 2);
  CHECK(r.samples == 3);
  CHECK(r.dice >= 0.0);
  CHECK(r.dice <= 1.0);
  CHECK(std::isfinite(r.bce));
  CHECK_THROWS_AS(
      evaluate_model(model, std::vector<ImageSample>{}, MetricsConfig{}, 2),
      Error);
}
