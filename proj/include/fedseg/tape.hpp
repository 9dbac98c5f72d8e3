#pragma once

#include <functional>
#include <vector>

#include "fedseg/kernels.hpp"
#include "fedseg/rng.hpp"
#include "fedseg/tensor.hpp"

namespace fedseg {

// Eager reverse-mode tape. Each op computes its value immediately and
// records a closure for the backward sweep; node creation order is a
// topological order, and backward() visits it exactly once in reverse.
// A tape is single-threaded; independent tapes may run concurrently.
template <typename T>
class TapeT {
 public:
  struct Value {
    int idx = -1;
    bool valid() const { return idx >= 0; }
  };

  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  Value leaf(TensorT<T> value, bool requires_grad);

  const TensorT<T>& value(Value v) const { return node(v).val; }
  // Valid after backward(); zero tensor for untouched parameters.
  const TensorT<T>& grad(Value v) const;

  Value conv2d(Value x, Value kernel, Value bias);
  Value conv2d_transpose(Value x, Value kernel, Value bias);
  Value maxpool2d(Value x);
  Value batchnorm_train(Value x, Value gamma, Value beta,
                        TensorT<T>* moving_mean, TensorT<T>* moving_var, T eps,
                        T momentum);
  Value batchnorm_infer(Value x, Value gamma, Value beta,
                        const TensorT<T>& moving_mean,
                        const TensorT<T>& moving_var, T eps);
  Value dropout(Value x, double rate, Rng& rng);
  Value relu(Value x);
  Value sigmoid(Value x);
  Value add(Value a, Value b);
  Value concat_channels(const std::vector<Value>& xs);
  // Scalar sum of elementwise products; the usual reduction head for
  // probing gradients of a non-scalar op.
  Value dot(Value a, Value b);

  struct LossParts {
    Value node;
    double bce = 0.0;
    double dice = 0.0;
    double total = 0.0;
  };
  LossParts bce_dice_loss(Value pred, Value truth, T dice_eps);

  void backward(Value loss);

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    TensorT<T> val;
    TensorT<T> grad;
    bool requires_grad = false;
    std::function<void(int)> back;
  };

  Node& node(Value v) { return nodes_[static_cast<std::size_t>(v.idx)]; }
  const Node& node(Value v) const {
    return nodes_[static_cast<std::size_t>(v.idx)];
  }
  // Gradient buffer of v if it participates in differentiation, else null.
  TensorT<T>* grad_if(Value v) {
    Node& n = node(v);
    return n.requires_grad ? &n.grad : nullptr;
  }
  Value push(TensorT<T> value, bool requires_grad,
             std::function<void(int)> back);
  static void accumulate(TensorT<T>* dst, const TensorT<T>& src);

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

}  // namespace fedseg
