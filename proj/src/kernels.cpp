#include "fedseg/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace fedseg::kernels {

namespace {

template <typename T>
using MatrixRM =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatrixRM<T>>;
template <typename T>
using MapCM = Eigen::Map<const MatrixRM<T>>;

template <typename T>
void check_conv_shapes(const TensorT<T>& x, const TensorT<T>& kernel,
                       const TensorT<T>& bias, const char* op) {
  if (x.rank() != 4) {
    throw_validation(std::string(op) + ": input must be NHWC, got " +
                     x.shape_str());
  }
  if (kernel.rank() != 4) {
    throw_validation(std::string(op) + ": kernel must be [Kh,Kw,Cin,Cout], got " +
                     kernel.shape_str());
  }
  if (x.dim(3) != kernel.dim(2)) {
    throw_validation(std::string(op) + ": input channels " + x.shape_str() +
                     " do not match kernel " + kernel.shape_str());
  }
  if (bias.rank() != 1 || bias.dim(0) != kernel.dim(3)) {
    throw_validation(std::string(op) + ": bias " + bias.shape_str() +
                     " does not match kernel " + kernel.shape_str());
  }
}

// Same padding, stride 1: rows are output positions (n,y,x), columns are
// (ky,kx,ci). Out-of-range taps are zero.
template <typename T>
void im2col(const TensorT<T>& x, std::int64_t kh, std::int64_t kw,
            AlignedVector<T>& cols) {
  const std::int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::int64_t pad_top = (kh - 1) / 2;
  const std::int64_t pad_left = (kw - 1) / 2;
  const std::int64_t row_len = kh * kw * c;
  cols.assign(static_cast<std::size_t>(n * h * w * row_len), T(0));
  const T* src = x.data();
  for (std::int64_t in = 0; in < n; ++in) {
    for (std::int64_t oy = 0; oy < h; ++oy) {
      for (std::int64_t ky = 0; ky < kh; ++ky) {
        const std::int64_t iy = oy + ky - pad_top;
        if (iy < 0 || iy >= h) continue;
        for (std::int64_t ox = 0; ox < w; ++ox) {
          T* dst =
              cols.data() + (((in * h + oy) * w + ox) * kh + ky) * kw * c;
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            const std::int64_t ix = ox + kx - pad_left;
            if (ix < 0 || ix >= w) continue;
            const T* cell = src + ((in * h + iy) * w + ix) * c;
            std::copy(cell, cell + c, dst + kx * c);
          }
        }
      }
    }
  }
}

// Scatter-add of column gradients back onto the input layout.
template <typename T>
void col2im_add(const AlignedVector<T>& cols, std::int64_t kh, std::int64_t kw,
                TensorT<T>& gx) {
  const std::int64_t n = gx.dim(0), h = gx.dim(1), w = gx.dim(2),
                     c = gx.dim(3);
  const std::int64_t pad_top = (kh - 1) / 2;
  const std::int64_t pad_left = (kw - 1) / 2;
  T* dst = gx.data();
  for (std::int64_t in = 0; in < n; ++in) {
    for (std::int64_t oy = 0; oy < h; ++oy) {
      for (std::int64_t ky = 0; ky < kh; ++ky) {
        const std::int64_t iy = oy + ky - pad_top;
        if (iy < 0 || iy >= h) continue;
        for (std::int64_t ox = 0; ox < w; ++ox) {
          const T* src =
              cols.data() + (((in * h + oy) * w + ox) * kh + ky) * kw * c;
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            const std::int64_t ix = ox + kx - pad_left;
            if (ix < 0 || ix >= w) continue;
            T* cell = dst + ((in * h + iy) * w + ix) * c;
            const T* col_cell = src + kx * c;
            for (std::int64_t ci = 0; ci < c; ++ci) cell[ci] += col_cell[ci];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& kernel,
                          const TensorT<T>& bias) {
  check_conv_shapes(x, kernel, bias, "conv2d");
  const std::int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::int64_t kh = kernel.dim(0), kw = kernel.dim(1),
                     cin = kernel.dim(2), cout = kernel.dim(3);
  AlignedVector<T> cols;
  im2col(x, kh, kw, cols);
  TensorT<T> out({n, h, w, cout});
  const std::int64_t rows = n * h * w, inner = kh * kw * cin;
  MapCM<T> a(cols.data(), rows, inner);
  MapCM<T> k(kernel.data(), inner, cout);
  MapM<T> o(out.data(), rows, cout);
  o.noalias() = a * k;
  MapCM<T> b(bias.data(), 1, cout);
  o.rowwise() += b.row(0);
  return out;
}

template <typename T>
void conv2d_backward(const TensorT<T>& x, const TensorT<T>& kernel,
                     const TensorT<T>& grad_out, TensorT<T>* grad_x,
                     TensorT<T>* grad_kernel, TensorT<T>* grad_bias) {
  const std::int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::int64_t kh = kernel.dim(0), kw = kernel.dim(1),
                     cin = kernel.dim(2), cout = kernel.dim(3);
  const std::int64_t rows = n * h * w, inner = kh * kw * cin;
  AlignedVector<T> cols;
  im2col(x, kh, kw, cols);
  MapCM<T> a(cols.data(), rows, inner);
  MapCM<T> g(grad_out.data(), rows, cout);
  if (grad_kernel) {
    *grad_kernel = TensorT<T>(kernel.shape());
    MapM<T> gk(grad_kernel->data(), inner, cout);
    gk.noalias() = a.transpose() * g;
  }
  if (grad_bias) {
    *grad_bias = TensorT<T>({cout});
    MapM<T> gb(grad_bias->data(), 1, cout);
    gb.row(0) = g.colwise().sum();
  }
  if (grad_x) {
    MapCM<T> k(kernel.data(), inner, cout);
    AlignedVector<T> gcols(static_cast<std::size_t>(rows * inner));
    MapM<T> gc(gcols.data(), rows, inner);
    gc.noalias() = g * k.transpose();
    *grad_x = TensorT<T>(x.shape());
    col2im_add(gcols, kh, kw, *grad_x);
  }
}

template <typename T>
TensorT<T> conv2d_transpose_forward(const TensorT<T>& x,
                                    const TensorT<T>& kernel,
                                    const TensorT<T>& bias) {
  check_conv_shapes(x, kernel, bias, "conv2d_transpose");
  if (kernel.dim(0) != 2 || kernel.dim(1) != 2) {
    throw_validation("conv2d_transpose: kernel must be 2x2 (stride 2), got " +
                     kernel.shape_str());
  }
  const std::int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2),
                     cin = x.dim(3), cout = kernel.dim(3);
  TensorT<T> out({n, 2 * h, 2 * w, cout});
  const std::int64_t rows = n * h * w;
  MapCM<T> xm(x.data(), rows, cin);
  MatrixRM<T> contrib(rows, cout);
  for (std::int64_t dy = 0; dy < 2; ++dy) {
    for (std::int64_t dx = 0; dx < 2; ++dx) {
      MapCM<T> k(kernel.data() + (dy * 2 + dx) * cin * cout, cin, cout);
      contrib.noalias() = xm * k;
      // Stride equals window, so each output cell receives exactly one
      // contribution; bias is added here.
      for (std::int64_t in = 0; in < n; ++in) {
        for (std::int64_t iy = 0; iy < h; ++iy) {
          for (std::int64_t ix = 0; ix < w; ++ix) {
            const T* src = contrib.data() + ((in * h + iy) * w + ix) * cout;
            T* dst = out.data() +
                     ((in * 2 * h + (2 * iy + dy)) * 2 * w + (2 * ix + dx)) *
                         cout;
            for (std::int64_t co = 0; co < cout; ++co)
              dst[co] = src[co] + bias[co];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
void conv2d_transpose_backward(const TensorT<T>& x, const TensorT<T>& kernel,
                               const TensorT<T>& grad_out, TensorT<T>* grad_x,
                               TensorT<T>* grad_kernel,
                               TensorT<T>* grad_bias) {
  const std::int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2),
                     cin = x.dim(3), cout = kernel.dim(3);
  const std::int64_t rows = n * h * w;
  MapCM<T> xm(x.data(), rows, cin);
  if (grad_x) *grad_x = TensorT<T>(x.shape());
  if (grad_kernel) *grad_kernel = TensorT<T>(kernel.shape());
  if (grad_bias) {
    *grad_bias = TensorT<T>({cout});
    const T* g = grad_out.data();
    for (std::int64_t i = 0; i < grad_out.size(); ++i)
      (*grad_bias)[i % cout] += g[i];
  }
  MatrixRM<T> gathered(rows, cout);
  for (std::int64_t dy = 0; dy < 2; ++dy) {
    for (std::int64_t dx = 0; dx < 2; ++dx) {
      for (std::int64_t in = 0; in < n; ++in) {
        for (std::int64_t iy = 0; iy < h; ++iy) {
          for (std::int64_t ix = 0; ix < w; ++ix) {
            const T* src =
                grad_out.data() +
                ((in * 2 * h + (2 * iy + dy)) * 2 * w + (2 * ix + dx)) * cout;
            std::copy(src, src + cout,
                      gathered.data() + ((in * h + iy) * w + ix) * cout);
          }
        }
      }
      MapCM<T> k(kernel.data() + (dy * 2 + dx) * cin * cout, cin, cout);
      if (grad_x) {
        MapM<T> gx(grad_x->data(), rows, cin);
        gx.noalias() += gathered * k.transpose();
      }
      if (grad_kernel) {
        MapM<T> gk(grad_kernel->data() + (dy * 2 + dx) * cin * cout, cin,
                   cout);
        gk.noalias() = xm.transpose() * gathered;
      }
    }
  }
}

template <typename T>
TensorT<T> maxpool2x2_forward(const TensorT<T>& x,
                              std::vector<std::int64_t>* argmax) {
  if (x.rank() != 4) {
    throw_validation("maxpool2d: input must be NHWC, got " + x.shape_str());
  }
  const std::int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw_validation("maxpool2d: spatial extents must be even, got " +
                     x.shape_str());
  }
  TensorT<T> out({n, h / 2, w / 2, c});
  if (argmax) argmax->assign(static_cast<std::size_t>(out.size()), 0);
  std::int64_t oidx = 0;
  for (std::int64_t in = 0; in < n; ++in) {
    for (std::int64_t oy = 0; oy < h / 2; ++oy) {
      for (std::int64_t ox = 0; ox < w / 2; ++ox) {
        for (std::int64_t ci = 0; ci < c; ++ci) {
          T best{};
          std::int64_t best_idx = -1;
          for (std::int64_t dy = 0; dy < 2; ++dy) {
            for (std::int64_t dx = 0; dx < 2; ++dx) {
              const std::int64_t idx =
                  ((in * h + (2 * oy + dy)) * w + (2 * ox + dx)) * c + ci;
              const T v = x[idx];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = idx;
              }
            }
          }
          out[oidx] = best;
          if (argmax) (*argmax)[static_cast<std::size_t>(oidx)] = best_idx;
          ++oidx;
        }
      }
    }
  }
  return out;
}

template <typename T>
TensorT<T> maxpool2x2_backward(const TensorT<T>& grad_out,
                               const std::vector<std::int64_t>& argmax,
                               const std::vector<std::int64_t>& input_shape) {
  TensorT<T> gx(input_shape);
  for (std::int64_t i = 0; i < grad_out.size(); ++i) {
    gx[argmax[static_cast<std::size_t>(i)]] += grad_out[i];
  }
  return gx;
}

namespace {
template <typename T>
void check_bn_shapes(const TensorT<T>& x, const TensorT<T>& gamma,
                     const TensorT<T>& beta) {
  if (x.rank() != 4) {
    throw_validation("batchnorm: input must be NHWC, got " + x.shape_str());
  }
  const std::int64_t c = x.dim(3);
  if (gamma.size() != c || beta.size() != c) {
    throw_validation("batchnorm: scale/shift " + gamma.shape_str() + "/" +
                     beta.shape_str() + " do not match channels of " +
                     x.shape_str());
  }
}
}  // namespace

template <typename T>
TensorT<T> batchnorm_train_forward(const TensorT<T>& x,
                                   const TensorT<T>& gamma,
                                   const TensorT<T>& beta,
                                   TensorT<T>& moving_mean,
                                   TensorT<T>& moving_var, T eps, T momentum,
                                   std::vector<T>* saved_mean,
                                   std::vector<T>* saved_var) {
  check_bn_shapes(x, gamma, beta);
  const std::int64_t c = x.dim(3);
  const std::int64_t m = x.size() / c;
  std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
  std::vector<double> var(static_cast<std::size_t>(c), 0.0);
  const T* src = x.data();
  for (std::int64_t i = 0; i < x.size(); ++i)
    mean[static_cast<std::size_t>(i % c)] += static_cast<double>(src[i]);
  for (auto& v : mean) v /= static_cast<double>(m);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(src[i]) - mean[i % c];
    var[static_cast<std::size_t>(i % c)] += d * d;
  }
  for (auto& v : var) v /= static_cast<double>(m);

  if (saved_mean) saved_mean->assign(mean.begin(), mean.end());
  if (saved_var) saved_var->assign(var.begin(), var.end());

  for (std::int64_t ci = 0; ci < c; ++ci) {
    moving_mean[ci] = momentum * moving_mean[ci] +
                      (T(1) - momentum) * static_cast<T>(mean[ci]);
    moving_var[ci] =
        momentum * moving_var[ci] + (T(1) - momentum) * static_cast<T>(var[ci]);
  }

  TensorT<T> out(x.shape());
  std::vector<T> scale(static_cast<std::size_t>(c)), shift(static_cast<std::size_t>(c));
  for (std::int64_t ci = 0; ci < c; ++ci) {
    const T inv_std = T(1) / std::sqrt(static_cast<T>(var[ci]) + eps);
    scale[ci] = gamma[ci] * inv_std;
    shift[ci] = beta[ci] - scale[ci] * static_cast<T>(mean[ci]);
  }
  T* dst = out.data();
  for (std::int64_t i = 0; i < x.size(); ++i)
    dst[i] = src[i] * scale[i % c] + shift[i % c];
  return out;
}

template <typename T>
void batchnorm_train_backward(const TensorT<T>& x, const TensorT<T>& gamma,
                              const std::vector<T>& saved_mean,
                              const std::vector<T>& saved_var,
                              const TensorT<T>& grad_out, T eps,
                              TensorT<T>* grad_x, TensorT<T>* grad_gamma,
                              TensorT<T>* grad_beta) {
  const std::int64_t c = x.dim(3);
  const std::int64_t m = x.size() / c;
  std::vector<double> sum_dy(static_cast<std::size_t>(c), 0.0);
  std::vector<double> sum_dy_xhat(static_cast<std::size_t>(c), 0.0);
  std::vector<double> inv_std(static_cast<std::size_t>(c), 0.0);
  for (std::int64_t ci = 0; ci < c; ++ci)
    inv_std[ci] = 1.0 / std::sqrt(static_cast<double>(saved_var[ci]) +
                                  static_cast<double>(eps));
  const T* xs = x.data();
  const T* gs = grad_out.data();
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const std::size_t ci = static_cast<std::size_t>(i % c);
    const double xhat =
        (static_cast<double>(xs[i]) - saved_mean[ci]) * inv_std[ci];
    sum_dy[ci] += static_cast<double>(gs[i]);
    sum_dy_xhat[ci] += static_cast<double>(gs[i]) * xhat;
  }
  if (grad_gamma) {
    *grad_gamma = TensorT<T>({c});
    for (std::int64_t ci = 0; ci < c; ++ci)
      (*grad_gamma)[ci] = static_cast<T>(sum_dy_xhat[ci]);
  }
  if (grad_beta) {
    *grad_beta = TensorT<T>({c});
    for (std::int64_t ci = 0; ci < c; ++ci)
      (*grad_beta)[ci] = static_cast<T>(sum_dy[ci]);
  }
  if (grad_x) {
    *grad_x = TensorT<T>(x.shape());
    T* gx = grad_x->data();
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::int64_t i = 0; i < x.size(); ++i) {
      const std::size_t ci = static_cast<std::size_t>(i % c);
      const double xhat =
          (static_cast<double>(xs[i]) - saved_mean[ci]) * inv_std[ci];
      const double d = static_cast<double>(gs[i]) - sum_dy[ci] * inv_m -
                       xhat * sum_dy_xhat[ci] * inv_m;
      gx[i] = static_cast<T>(static_cast<double>(gamma[static_cast<std::int64_t>(ci)]) *
                             inv_std[ci] * d);
    }
  }
}

template <typename T>
TensorT<T> batchnorm_infer_forward(const TensorT<T>& x, const TensorT<T>& gamma,
                                   const TensorT<T>& beta,
                                   const TensorT<T>& moving_mean,
                                   const TensorT<T>& moving_var, T eps) {
  check_bn_shapes(x, gamma, beta);
  const std::int64_t c = x.dim(3);
  std::vector<T> scale(static_cast<std::size_t>(c)), shift(static_cast<std::size_t>(c));
  for (std::int64_t ci = 0; ci < c; ++ci) {
    // Variance is non-negative by definition; a checkpoint edited from
    // outside must not turn the sqrt into a NaN.
    const T var = moving_var[ci] > T(0) ? moving_var[ci] : T(0);
    const T inv_std = T(1) / std::sqrt(var + eps);
    scale[ci] = gamma[ci] * inv_std;
    shift[ci] = beta[ci] - scale[ci] * moving_mean[ci];
  }
  TensorT<T> out(x.shape());
  const T* src = x.data();
  T* dst = out.data();
  for (std::int64_t i = 0; i < x.size(); ++i)
    dst[i] = src[i] * scale[i % c] + shift[i % c];
  return out;
}

template <typename T>
TensorT<T> dropout_forward(const TensorT<T>& x, double rate, Rng& rng,
                           std::vector<std::uint8_t>* keep) {
  if (rate < 0.0 || rate >= 1.0) {
    throw_validation("dropout: rate must be in [0, 1), got " +
                     std::to_string(rate));
  }
  TensorT<T> out(x.shape());
  if (keep) keep->assign(static_cast<std::size_t>(x.size()), 1);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const bool keep_it = rng.uniform() >= rate;
    if (keep) (*keep)[static_cast<std::size_t>(i)] = keep_it ? 1 : 0;
    out[i] = keep_it ? x[i] * scale : T(0);
  }
  return out;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i)
    out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  return out;
}

template <typename T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& xs) {
  if (xs.empty()) throw_validation("concat_channels: no inputs");
  const TensorT<T>& first = *xs.front();
  if (first.rank() != 4) {
    throw_validation("concat_channels: inputs must be NHWC, got " +
                     first.shape_str());
  }
  std::int64_t total_c = 0;
  for (const auto* t : xs) {
    if (t->rank() != 4 || t->dim(0) != first.dim(0) ||
        t->dim(1) != first.dim(1) || t->dim(2) != first.dim(2)) {
      throw_validation("concat_channels: shape mismatch " + first.shape_str() +
                       " vs " + t->shape_str());
    }
    total_c += t->dim(3);
  }
  TensorT<T> out({first.dim(0), first.dim(1), first.dim(2), total_c});
  const std::int64_t positions = first.dim(0) * first.dim(1) * first.dim(2);
  for (std::int64_t p = 0; p < positions; ++p) {
    T* dst = out.data() + p * total_c;
    for (const auto* t : xs) {
      const std::int64_t c = t->dim(3);
      const T* src = t->data() + p * c;
      std::copy(src, src + c, dst);
      dst += c;
    }
  }
  return out;
}

template <typename T>
BceDiceValue bce_dice_forward(const TensorT<T>& pred, const TensorT<T>& truth,
                              T dice_eps) {
  check_same_shape(pred, truth, "bce_dice_loss");
  const double lo = 1e-7, hi = 1.0 - 1e-7;
  double bce_sum = 0.0, inter = 0.0, sum_t = 0.0, sum_p = 0.0;
  const std::int64_t n = pred.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double p = static_cast<double>(pred[i]);
    const double t = static_cast<double>(truth[i]);
    const double pc = std::min(hi, std::max(lo, p));
    bce_sum -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
    inter += t * p;
    sum_t += t;
    sum_p += p;
  }
  BceDiceValue v;
  v.bce = bce_sum / static_cast<double>(n);
  v.dice = 2.0 * inter / (sum_t + sum_p + static_cast<double>(dice_eps));
  v.total = v.bce + (1.0 - v.dice);
  return v;
}

template <typename T>
TensorT<T> bce_dice_backward(const TensorT<T>& pred, const TensorT<T>& truth,
                             T dice_eps, T grad_scale) {
  const double lo = 1e-7, hi = 1.0 - 1e-7;
  const std::int64_t n = pred.size();
  double inter = 0.0, sum_t = 0.0, sum_p = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    inter += static_cast<double>(truth[i]) * static_cast<double>(pred[i]);
    sum_t += static_cast<double>(truth[i]);
    sum_p += static_cast<double>(pred[i]);
  }
  const double denom = sum_t + sum_p + static_cast<double>(dice_eps);
  const double numer = 2.0 * inter;
  const double inv_n = 1.0 / static_cast<double>(n);
  TensorT<T> grad(pred.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    const double p = static_cast<double>(pred[i]);
    const double t = static_cast<double>(truth[i]);
    double g = 0.0;
    // BCE term; the clamp zeroes the gradient outside its range.
    if (p > lo && p < hi) {
      g += (-t / p + (1.0 - t) / (1.0 - p)) * inv_n;
    }
    // d(1 - dice)/dp_i = (numer - 2 t_i denom) / denom^2
    g += (numer - 2.0 * t * denom) / (denom * denom);
    grad[i] = static_cast<T>(g * static_cast<double>(grad_scale));
  }
  return grad;
}

#define FEDSEG_INSTANTIATE_KERNELS(T)                                          \
  template TensorT<T> conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&, \
                                        const TensorT<T>&);                   \
  template void conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&,      \
                                   const TensorT<T>&, TensorT<T>*,            \
                                   TensorT<T>*, TensorT<T>*);                 \
  template TensorT<T> conv2d_transpose_forward<T>(                            \
      const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);               \
  template void conv2d_transpose_backward<T>(                                 \
      const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, TensorT<T>*,   \
      TensorT<T>*, TensorT<T>*);                                              \
  template TensorT<T> maxpool2x2_forward<T>(const TensorT<T>&,                \
                                            std::vector<std::int64_t>*);      \
  template TensorT<T> maxpool2x2_backward<T>(                                 \
      const TensorT<T>&, const std::vector<std::int64_t>&,                    \
      const std::vector<std::int64_t>&);                                      \
  template TensorT<T> batchnorm_train_forward<T>(                             \
      const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, TensorT<T>&,   \
      TensorT<T>&, T, T, std::vector<T>*, std::vector<T>*);                   \
  template void batchnorm_train_backward<T>(                                  \
      const TensorT<T>&, const TensorT<T>&, const std::vector<T>&,            \
      const std::vector<T>&, const TensorT<T>&, T, TensorT<T>*, TensorT<T>*,  \
      TensorT<T>*);                                                           \
  template TensorT<T> batchnorm_infer_forward<T>(                             \
      const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,                \
      const TensorT<T>&, const TensorT<T>&, T);                               \
  template TensorT<T> dropout_forward<T>(const TensorT<T>&, double, Rng&,     \
                                         std::vector<std::uint8_t>*);         \
  template TensorT<T> relu<T>(const TensorT<T>&);                             \
  template TensorT<T> sigmoid<T>(const TensorT<T>&);                          \
  template TensorT<T> concat_channels<T>(                                     \
      const std::vector<const TensorT<T>*>&);                                 \
  template BceDiceValue bce_dice_forward<T>(const TensorT<T>&,                \
                                            const TensorT<T>&, T);            \
  template TensorT<T> bce_dice_backward<T>(const TensorT<T>&,                 \
                                           const TensorT<T>&, T, T);

FEDSEG_INSTANTIATE_KERNELS(float)
FEDSEG_INSTANTIATE_KERNELS(double)

#undef FEDSEG_INSTANTIATE_KERNELS

}  // namespace fedseg::kernels
