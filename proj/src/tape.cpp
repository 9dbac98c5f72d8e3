#include "fedseg/tape.hpp"

#include <utility>

namespace fedseg {

template <typename T>
typename TapeT<T>::Value TapeT<T>::push(TensorT<T> value, bool requires_grad,
                                        std::function<void(int)> back) {
  Node n;
  n.val = std::move(value);
  n.requires_grad = requires_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
void TapeT<T>::accumulate(TensorT<T>* dst, const TensorT<T>& src) {
  if (!dst) return;
  for (std::int64_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

template <typename T>
typename TapeT<T>::Value TapeT<T>::leaf(TensorT<T> value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

template <typename T>
const TensorT<T>& TapeT<T>::grad(Value v) const {
  if (!ran_backward_) throw_runtime("tape: grad() requested before backward()");
  return node(v).grad;
}

template <typename T>
typename TapeT<T>::Value TapeT<T>::conv2d(Value x, Value kernel, Value bias) {
  TensorT<T> out =
      kernels::conv2d_forward(value(x), value(kernel), value(bias));
  const bool req = node(x).requires_grad || node(kernel).requires_grad ||
                   node(bias).requires_grad;
  return push(std::move(out), req, [this, x, kernel, bias](int self) {
    TensorT<T>* gx = grad_if(x);
    TensorT<T>* gk = grad_if(kernel);
    TensorT<T>* gb = grad_if(bias);
    if (!gx && !gk && !gb) return;
    TensorT<T> tx, tk, tb;
    kernels::conv2d_backward(value(x), value(kernel),
                             nodes_[static_cast<std::size_t>(self)].grad,
                             gx ? &tx : nullptr, gk ? &tk : nullptr,
                             gb ? &tb : nullptr);
    accumulate(gx, tx);
    accumulate(gk, tk);
    accumulate(gb, tb);
  });
}

template <typename T>
typename TapeT<T>::Value TapeT<T>::conv2d_transpose(Value x, Value kernel,
                                                    Value bias) {
  TensorT<T> out =
      kernels::conv2d_transpose_forward(value(x), value(kernel), value(bias));
  const bool req = node(x).requires_grad || node(kernel).requires_grad ||
                   node(bias).requires_grad;
  return push(std::move(out), req, [this, x, kernel, bias](int self) {
    TensorT<T>* gx = grad_if(x);
    TensorT<T>* gk = grad_if(kernel);
    TensorT<T>* gb = grad_if(bias);
    if (!gx && !gk && !gb) return;
    TensorT<T> tx, tk, tb;
    kernels::conv2d_transpose_backward(
        value(x), value(kernel), nodes_[static_cast<std::size_t>(self)].grad,
        gx ? &tx : nullptr, gk ? &tk : nullptr, gb ? &tb : nullptr);
    accumulate(gx, tx);
    accumulate(gk, tk);
    accumulate(gb, tb);
  });
}

template <typename T>
typename TapeT<T>::Value TapeT<T>::maxpool2d(Value x) {
  std::vector<std::int64_t> argmax;
  TensorT<T> out = kernels::maxpool2x2_forward(value(x), &argmax);
  const bool req = node(x).requires_grad;
  return push(std::move(out), req,
              [this, x, argmax = std::move(argmax)](int self) {
                TensorT<T>* gx = grad_if(x);
                if (!gx) return;
                TensorT<T> tx = kernels::maxpool2x2_backward(
                    nodes_[static_cast<std::size_t>(self)].grad, argmax,
                    value(x).shape());
                accumulate(gx, tx);
              });
}

template <typename T>
typename TapeT<T>::Value TapeT<T>::batchnorm_train(Value x, Value gamma,
                                                   Value beta,
                                                   TensorT<T>* moving_mean,
                                                   TensorT<T>* moving_var,
                                                   T eps, T momentum) {
  std::vector<T> saved_mean, saved_var;
  TensorT<T> out = kernels::batchnorm_train_forward(
      value(x), value(gamma), value(beta), *moving_mean, *moving_var, eps,
      momentum, &saved_mean, &saved_var);
  const bool req = node(x).requires_grad || node(gamma).requires_grad ||
                   node(beta).requires_grad;
  return push(std::move(out), req,
              [this, x, gamma, beta, eps, saved_mean = std::move(saved_mean),
               saved_var = std::move(saved_var)](int self) {
                TensorT<T>* gx = grad_if(x);
                TensorT<T>* gg = grad_if(gamma);
                TensorT<T>* gb = grad_if(beta);
                if (!gx && !gg && !gb) return;
                TensorT<T> tx, tg, tb;
                kernels::batchnorm_train_backward(
                    value(x), value(gamma), saved_mean, saved_var,
                    nodes_[static_cast<std::size_t>(self)].grad, eps,
                    gx ? &tx : nullptr, gg ? &tg : nullptr,
                    gb ? &tb : nullptr);
                accumulate(gx, tx);
                accumulate(gg, tg);
                accumulate(gb, tb);
              });
}

template <typename T>
typename TapeT<T>::Value TapeT<T>::batchnorm_infer(Value x, Value gamma,
                                                   Value beta,
                                                   const TensorT<T>& mm,
                                                   const TensorT<T>& mv,
                                                   T eps) {
  TensorT<T> out =
      kernels::batchnorm_infer_forward(value(x), value(gamma), value(beta),
                                       mm, mv, eps);
  const bool req = node(x).requires_grad || node(gamma).requires_grad ||
                   node(beta).requires_grad;
  // Backward w.r.t. x only scales by gamma/sqrt(var+eps); gamma/beta grads
  // follow the affine form y = gamma*xhat + beta with fixed stats.
  std::vector<T> inv_std(static_cast<std::size_t>(mv.size()));
  for (std::int64_t i = 0; i < mv.size(); ++i) {
    const T var = mv[i] > T(0) ? mv[i] : T(0);
    inv_std[static_cast<std::size_t>(i)] = T(1) / std::sqrt(var + eps);
  }
  std::vector<T> mean(mm.data(), mm.data() + mm.size());
  return push(std::move(out), req,
              [this, x, gamma, beta, inv_std = std::move(inv_std),
               mean = std::move(mean)](int self) {
                const TensorT<T>& gout =
                    nodes_[static_cast<std::size_t>(self)].grad;
                const TensorT<T>& xv = value(x);
                const std::int64_t c = xv.dim(3);
                if (TensorT<T>* gx = grad_if(x)) {
                  for (std::int64_t i = 0; i < xv.size(); ++i) {
                    const std::int64_t ci = i % c;
                    (*gx)[i] += gout[i] * value(gamma)[ci] *
                                inv_std[static_cast<std::size_t>(ci)];
                  }
                }
                if (TensorT<T>* gg = grad_if(gamma)) {
                  for (std::int64_t i = 0; i < xv.size(); ++i) {
                    const std::int64_t ci = i % c;
                    (*gg)[ci] += gout[i] *
                                 (xv[i] - mean[static_cast<std::size_t>(ci)]) *
                                 inv_std[static_cast<std::size_t>(ci)];
                  }
                }
                if (TensorT<T>* gb = grad_if(beta)) {
                  for (std::int64_t i = 0; i < xv.size(); ++i)
                    (*gb)[i % c] += gout[i];
                }
              });
}

template <typename T>
typename TapeT<T>::Value TapeT<T>::dropout(Value x, double rate, Rng& rng) {
  std::vector<std::uint8_t> keep;
  TensorT<T> out = kernels::dropout_forward(value(x), rate, rng, &keep);
  const bool req = node(x).requires_grad;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  return push(std::move(out), req,
              [this, x, scale, keep = std::move(keep)](int self) {
                TensorT<T>* gx = grad_if(x);
                if (!gx) return;
                const TensorT<T>& gout =
                    nodes_[static_cast<std::size_t>(self)].grad;
                for (std::int64_t i = 0; i < gout.size(); ++i) {
                  if (keep[static_cast<std::size_t>(i)])
                    (*gx)[i] += gout[i] * scale;
                }
              });
}

template <typename T>
typename TapeT<T>::Value TapeT<T>::relu(Value x) {
  TensorT<T> out = kernels::relu(value(x));
  return push(std::move(out), node(x).requires_grad, [this, x](int self) {
    TensorT<T>* gx = grad_if(x);
    if (!gx) return;
    const TensorT<T>& gout = nodes_[static_cast<std::size_t>(self)].grad;
    const TensorT<T>& xv = value(x);
    for (std::int64_t i = 0; i < gout.size(); ++i) {
      if (xv[i] > T(0)) (*gx)[i] += gout[i];
    }
  });
}

template <typename T>
typename TapeT<T>::Value TapeT<T>::sigmoid(Value x) {
  TensorT<T> out = kernels::sigmoid(value(x));
  return push(std::move(out), node(x).requires_grad, [this, x](int self) {
    TensorT<T>* gx = grad_if(x);
    if (!gx) return;
    const Node& n = nodes_[static_cast<std::size_t>(self)];
    for (std::int64_t i = 0; i < n.grad.size(); ++i) {
      const T y = n.val[i];
      (*gx)[i] += n.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
typename TapeT<T>::Value TapeT<T>::add(Value a, Value b) {
  check_same_shape(value(a), value(b), "add");
  TensorT<T> out(value(a).shape());
  const TensorT<T>& av = value(a);
  const TensorT<T>& bv = value(b);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const bool req = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(out), req, [this, a, b](int self) {
    const TensorT<T>& gout = nodes_[static_cast<std::size_t>(self)].grad;
    accumulate(grad_if(a), gout);
    accumulate(grad_if(b), gout);
  });
}

template <typename T>
typename TapeT<T>::Value TapeT<T>::concat_channels(
    const std::vector<Value>& xs) {
  std::vector<const TensorT<T>*> ptrs;
  ptrs.reserve(xs.size());
  bool req = false;
  for (Value v : xs) {
    ptrs.push_back(&value(v));
    req = req || node(v).requires_grad;
  }
  TensorT<T> out = kernels::concat_channels(ptrs);
  return push(std::move(out), req, [this, xs](int self) {
    const TensorT<T>& gout = nodes_[static_cast<std::size_t>(self)].grad;
    const std::int64_t total_c = gout.dim(3);
    const std::int64_t positions = gout.dim(0) * gout.dim(1) * gout.dim(2);
    std::int64_t offset = 0;
    for (Value v : xs) {
      const std::int64_t c = value(v).dim(3);
      if (TensorT<T>* gx = grad_if(v)) {
        for (std::int64_t p = 0; p < positions; ++p) {
          const T* src = gout.data() + p * total_c + offset;
          T* dst = gx->data() + p * c;
          for (std::int64_t ci = 0; ci < c; ++ci) dst[ci] += src[ci];
        }
      }
      offset += c;
    }
  });
}

template <typename T>
typename TapeT<T>::Value TapeT<T>::dot(Value a, Value b) {
  check_same_shape(value(a), value(b), "dot");
  const TensorT<T>& av = value(a);
  const TensorT<T>& bv = value(b);
  double sum = 0.0;
  for (std::int64_t i = 0; i < av.size(); ++i) {
    sum += static_cast<double>(av[i]) * static_cast<double>(bv[i]);
  }
  TensorT<T> out({1});
  out[0] = static_cast<T>(sum);
  const bool req = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(out), req, [this, a, b](int self) {
    const T g = nodes_[static_cast<std::size_t>(self)].grad[0];
    const TensorT<T>& av2 = value(a);
    const TensorT<T>& bv2 = value(b);
    if (TensorT<T>* ga = grad_if(a)) {
      for (std::int64_t i = 0; i < av2.size(); ++i) (*ga)[i] += g * bv2[i];
    }
    if (TensorT<T>* gb = grad_if(b)) {
      for (std::int64_t i = 0; i < bv2.size(); ++i) (*gb)[i] += g * av2[i];
    }
  });
}

template <typename T>
typename TapeT<T>::LossParts TapeT<T>::bce_dice_loss(Value pred, Value truth,
                                                     T dice_eps) {
  const kernels::BceDiceValue v =
      kernels::bce_dice_forward(value(pred), value(truth), dice_eps);
  TensorT<T> out({1});
  out[0] = static_cast<T>(v.total);
  const bool req = node(pred).requires_grad;
  Value n = push(std::move(out), req, [this, pred, truth, dice_eps](int self) {
    TensorT<T>* gp = grad_if(pred);
    if (!gp) return;
    const T upstream = nodes_[static_cast<std::size_t>(self)].grad[0];
    TensorT<T> g = kernels::bce_dice_backward(value(pred), value(truth),
                                              dice_eps, upstream);
    accumulate(gp, g);
  });
  LossParts parts;
  parts.node = n;
  parts.bce = v.bce;
  parts.dice = v.dice;
  parts.total = v.total;
  return parts;
}

template <typename T>
void TapeT<T>::backward(Value loss) {
  if (!loss.valid() || loss.idx >= size()) {
    throw_validation("backward: invalid loss node");
  }
  if (node(loss).val.size() != 1) {
    throw_validation("backward: loss must be scalar, got " +
                     node(loss).val.shape_str());
  }
  for (auto& n : nodes_) {
    if (n.requires_grad) n.grad = TensorT<T>(n.val.shape());
  }
  if (!node(loss).requires_grad) {
    node(loss).grad = TensorT<T>(node(loss).val.shape());
  }
  node(loss).grad[0] = T(1);
  ran_backward_ = true;
  for (int i = loss.idx; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.back && n.requires_grad) n.back(i);
  }
}

template class TapeT<float>;
template class TapeT<double>;

}  // namespace fedseg
