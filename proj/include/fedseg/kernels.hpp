#pragma once

#include <cstdint>
#include <vector>

#include "fedseg/rng.hpp"
#include "fedseg/tensor.hpp"

// Forward/backward compute kernels shared by the autodiff tape and the
// tape-free inference path. Activations are NHWC; conv kernels are
// [Kh, Kw, Cin, Cout]. Convolutions are same-padding stride 1; the
// transposed convolution is fixed at 2x2 stride 2 (it exactly doubles the
// spatial extents, so no two contributions overlap).
namespace fedseg::kernels {

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& kernel,
                          const TensorT<T>& bias);

template <typename T>
void conv2d_backward(const TensorT<T>& x, const TensorT<T>& kernel,
                     const TensorT<T>& grad_out, TensorT<T>* grad_x,
                     TensorT<T>* grad_kernel, TensorT<T>* grad_bias);

template <typename T>
TensorT<T> conv2d_transpose_forward(const TensorT<T>& x,
                                    const TensorT<T>& kernel,
                                    const TensorT<T>& bias);

template <typename T>
void conv2d_transpose_backward(const TensorT<T>& x, const TensorT<T>& kernel,
                               const TensorT<T>& grad_out, TensorT<T>* grad_x,
                               TensorT<T>* grad_kernel, TensorT<T>* grad_bias);

// 2x2 window, stride 2. argmax records the flat input index feeding each
// output cell; ties go to the first maximal element in window scan order.
template <typename T>
TensorT<T> maxpool2x2_forward(const TensorT<T>& x,
                              std::vector<std::int64_t>* argmax);

template <typename T>
TensorT<T> maxpool2x2_backward(const TensorT<T>& grad_out,
                               const std::vector<std::int64_t>& argmax,
                               const std::vector<std::int64_t>& input_shape);

// Training-mode batchnorm over N,H,W per channel. Updates moving stats in
// place (moving = momentum * moving + (1 - momentum) * batch) and saves the
// batch statistics for the backward pass.
template <typename T>
TensorT<T> batchnorm_train_forward(const TensorT<T>& x,
                                   const TensorT<T>& gamma,
                                   const TensorT<T>& beta,
                                   TensorT<T>& moving_mean,
                                   TensorT<T>& moving_var, T eps, T momentum,
                                   std::vector<T>* saved_mean,
                                   std::vector<T>* saved_var);

template <typename T>
void batchnorm_train_backward(const TensorT<T>& x, const TensorT<T>& gamma,
                              const std::vector<T>& saved_mean,
                              const std::vector<T>& saved_var,
                              const TensorT<T>& grad_out, T eps,
                              TensorT<T>* grad_x, TensorT<T>* grad_gamma,
                              TensorT<T>* grad_beta);

template <typename T>
TensorT<T> batchnorm_infer_forward(const TensorT<T>& x, const TensorT<T>& gamma,
                                   const TensorT<T>& beta,
                                   const TensorT<T>& moving_mean,
                                   const TensorT<T>& moving_var, T eps);

// Keep flags are 0/1 per element; survivors are scaled by 1/(1-rate).
template <typename T>
TensorT<T> dropout_forward(const TensorT<T>& x, double rate, Rng& rng,
                           std::vector<std::uint8_t>* keep);

template <typename T>
TensorT<T> relu(const TensorT<T>& x);

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x);

template <typename T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& xs);

struct BceDiceValue {
  double total = 0.0;
  double bce = 0.0;
  double dice = 0.0;
};

// Mean binary cross entropy plus (1 - soft dice). Predictions are clamped to
// [1e-7, 1 - 1e-7] before the logs; the dice term uses the raw values.
template <typename T>
BceDiceValue bce_dice_forward(const TensorT<T>& pred, const TensorT<T>& truth,
                              T dice_eps);

template <typename T>
TensorT<T> bce_dice_backward(const TensorT<T>& pred, const TensorT<T>& truth,
                             T dice_eps, T grad_scale);

}  // namespace fedseg::kernels
