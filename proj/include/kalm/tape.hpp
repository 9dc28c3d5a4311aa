#pragma once

#include <functional>
#include <vector>

#include "kalm/tensor.hpp"

namespace kalm {

using VarId = int;

// Reverse-mode gradient tape. Operations record their backward closure as
// they execute; backward() replays them in exact reverse execution order.
// A tape is built per forward pass and discarded afterwards. Parameter
// leaves reference external tensors (no copy) and flush their gradients
// into caller-owned sink tensors.
class Tape {
 public:
  // Constant leaf (no gradient).
  VarId input(Tensor value);
  VarId input_scalar(double v) { return input(Tensor::scalar(v)); }

  // Parameter leaf. `value` must outlive the tape. `grad_sink`, when
  // non-null, receives the accumulated gradient during backward(); it must
  // have the same shape as `value`.
  VarId param(const Tensor* value, Tensor* grad_sink);

  const Tensor& value(VarId id) const;

  VarId add(VarId a, VarId b);
  VarId sub(VarId a, VarId b);
  VarId mul(VarId a, VarId b);  // elementwise
  VarId scale(VarId a, double c);
  VarId smul(VarId a, VarId s);  // vector times scalar variable
  VarId cmul(VarId a, const Tensor& mask);  // elementwise by a constant
  VarId concat(VarId a, VarId b);
  VarId slice(VarId x, size_t offset, size_t len);
  VarId row(VarId matrix, size_t r);
  VarId matvec(VarId W, VarId x);
  // y = (first `rows` rows of W) * x; used by the tied-embedding decoder.
  VarId matvec_rows(VarId W, size_t rows, VarId x);
  VarId matvec_transpose(VarId W, VarId x);  // y = W^T x
  VarId sigmoid(VarId x);
  VarId tanh(VarId x);
  VarId exp(VarId x);
  VarId square(VarId x);
  VarId log_softmax(VarId x);
  VarId logsumexp(VarId x);  // scalar
  VarId sum(VarId x);        // scalar
  VarId mean(VarId x);       // scalar
  VarId pick(VarId x, size_t i);  // scalar gather
  VarId stack(const std::vector<VarId>& scalars);

  // Seeds d(loss)/d(loss) = 1, replays the tape backward, then flushes
  // parameter gradients into their sinks. `loss` must be a scalar.
  void backward(VarId loss);

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;                  // owned value (unused for param leaves)
    const Tensor* ref = nullptr; // external value for param leaves
    Tensor grad;                 // empty until first accumulation
    Tensor* sink = nullptr;
    std::function<void(Tape&)> back;
  };

  VarId push(Tensor value, std::function<void(Tape&)> back = nullptr);
  // Gradient accumulator for node `id`, allocated on first use.
  Tensor& grad_of(VarId id);
  bool has_grad(VarId id) const { return nodes_[id].grad.size() > 0; }
  const Tensor& grad_ro(VarId id) const { return nodes_[id].grad; }

  std::vector<Node> nodes_;
};

// One step of the standard (non-peephole) LSTM cell. Gate order in the
// stacked weights is input, forget, candidate, output.
//   Wx: 4H x I,  Wh: 4H x H,  b: 4H
struct LstmOut {
  VarId hidden;
  VarId cell;
};
LstmOut lstm_step(Tape& tape, VarId Wx, VarId Wh, VarId b, VarId h_prev,
                  VarId c_prev, VarId x);

}  // namespace kalm
